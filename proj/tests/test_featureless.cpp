#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "support.hpp"

#include "deephalo/errors.hpp"
#include "deephalo/featureless.hpp"
#include "deephalo/training.hpp"

using deephalo::Activation;
using deephalo::FeaturelessConfig;
using deephalo::FeaturelessDeepHalo;
using deephalo::Matrix;

namespace {

FeaturelessDeepHalo random_model(int universe, int width, int depth, Activation act,
                                 std::mt19937_64& rng, double scale = 0.5) {
  FeaturelessConfig c;
  c.universe = universe;
  c.width = width;
  c.depth = depth;
  c.activation = act;
  FeaturelessDeepHalo m(c, rng());
  for (int l = 1; l <= depth; ++l) {
    const Matrix t = m.theta(l);
    m.set_theta(l, support::random_matrix(t.rows(), t.cols(), rng, -scale, scale));
  }
  m.set_output(support::random_matrix(m.output().rows(), m.output().cols(), rng));
  return m;
}

support::SetTable table_of(FeaturelessDeepHalo& m) {
  return support::all_set_utilities(
      [&](const std::vector<int>& s) { return deephalo::set_utilities(m, s); }, m.universe_size());
}

// Small dyadic values keep every product and sum exact in double precision.
Matrix dyadic_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(-8, 8);
  Matrix m(r, c);
  for (double& v : m.data()) v = d(rng) / 16.0;
  return m;
}

}  // namespace

TEST_CASE("forward agrees with a plain matrix reference") {
  std::mt19937_64 rng(1);
  for (auto act : {Activation::kLinear, Activation::kQuadratic}) {
    for (int depth = 1; depth <= 3; ++depth) {
      auto m = random_model(5, 7, depth, act, rng);
      for (const auto& s : std::vector<std::vector<int>>{{0}, {1, 3}, {4, 0, 2}, {0, 1, 2, 3, 4}}) {
        const auto got = deephalo::set_utilities(m, s);
        const auto want = support::reference_featureless(m, s);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("zero interactions give uniform choice") {
  FeaturelessConfig c;
  c.universe = 4;
  c.width = 6;
  c.depth = 3;
  c.activation = Activation::kQuadratic;
  FeaturelessDeepHalo m(c, 3);
  for (int l = 1; l <= 3; ++l) m.set_theta(l, Matrix(m.theta(l).rows(), m.theta(l).cols()));
  Matrix out(4, 6);
  for (std::size_t i = 0; i < 4; ++i) out(i, i) = 1.0;
  m.set_output(out);
  const auto u = deephalo::set_utilities(m, {0, 2, 3});
  for (double v : u) CHECK(v == 1.0);
  const auto p = deephalo::choice_probabilities(u);
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("one linear layer is the first-order context form") {
  std::mt19937_64 rng(2);
  FeaturelessConfig c;
  c.universe = 4;
  FeaturelessDeepHalo m(c, 1);
  const Matrix theta = support::random_matrix(4, 4, rng);
  m.set_theta(1, theta);
  m.set_output(Matrix::identity(4));
  const std::vector<int> s = {0, 1, 3};
  const auto u = deephalo::set_utilities(m, s);
  for (std::size_t a = 0; a < s.size(); ++a) {
    double want = 1.0;
    for (int k : s) want += theta(static_cast<std::size_t>(s[a]), static_cast<std::size_t>(k));
    CHECK(u[a] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("choice probabilities closed forms") {
  const auto half = deephalo::choice_probabilities(std::vector<double>{0, 0});
  CHECK(half == std::vector<double>{0.5, 0.5});
  const auto q = deephalo::choice_probabilities(std::vector<double>{std::log(3.0), 0});
  CHECK(q[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(q[1] == doctest::Approx(0.25).epsilon(1e-15));
  const double inf = std::numeric_limits<double>::infinity();
  const auto m = deephalo::choice_probabilities(std::vector<double>{5, -inf, 5});
  CHECK(m == std::vector<double>{0.5, 0.0, 0.5});
  CHECK_THROWS_AS(deephalo::choice_probabilities(std::vector<double>{-inf, -inf}),
                  deephalo::DegenerateSetError);
}

TEST_CASE("required depth and interaction order") {
  CHECK(deephalo::required_depth_quadratic(15) == 5);
  CHECK(deephalo::required_depth_quadratic(2) == 1);
  CHECK(deephalo::required_depth_quadratic(4) == 3);
  CHECK(deephalo::required_depth_quadratic(8) == 4);
  CHECK_THROWS_AS(deephalo::required_depth_quadratic(1), deephalo::ModelError);
  CHECK(deephalo::max_interaction_order(Activation::kLinear, 2) == 2);
  CHECK(deephalo::max_interaction_order(Activation::kQuadratic, 5) == 16);
  CHECK(deephalo::max_interaction_order(Activation::kQuadratic, 1) == 1);
  for (int j = 2; j <= 40; ++j) {
    const int l = deephalo::required_depth_quadratic(j);
    CHECK(deephalo::max_interaction_order(Activation::kQuadratic, l) >= j - 1);
    if (l > 1) CHECK(deephalo::max_interaction_order(Activation::kQuadratic, l - 1) < j - 1);
  }
}

TEST_CASE("required depth matches brute-force order coverage at J=4") {
  // Depth 2 leaves the three-item source sets empty; depth 3 reaches them.
  std::mt19937_64 rng(8);
  auto shallow = random_model(4, 4, 2, Activation::kQuadratic, rng);
  auto deep = random_model(4, 4, 3, Activation::kQuadratic, rng);
  const auto a = support::order_report(table_of(shallow), 4, 2);
  CHECK(a.max_high <= 1e-8 * a.max_u);
  const auto b = support::order_report(table_of(deep), 4, 2);
  CHECK(b.max_high > 1e-6 * b.max_u);
}

TEST_CASE("quadratic depth two on J=4 has pairwise but no triple effects") {
  std::mt19937_64 rng(4);
  auto m = random_model(4, 4, 2, Activation::kQuadratic, rng);
  const auto r = support::order_report(table_of(m), 4, 2);
  CHECK(r.max_high <= 1e-8 * r.max_u);
  CHECK(r.max_low > 1e-4 * r.max_u);
}

TEST_CASE("order truncation over random parameters") {
  std::mt19937_64 rng(5);
  for (auto act : {Activation::kLinear, Activation::kQuadratic}) {
    const int max_depth = act == Activation::kLinear ? 4 : 3;
    for (int depth = 1; depth <= max_depth; ++depth) {
      for (int draw = 0; draw < 5; ++draw) {
        auto m = random_model(6, 8, depth, act, rng);
        const int order = deephalo::max_interaction_order(act, depth);
        const auto r = support::order_report(table_of(m), 6, order);
        CHECK(r.max_high <= 1e-8 * r.max_u);
        if (order < 5) CHECK(r.max_low > 1e-8 * r.max_u);
      }
    }
  }
}

TEST_CASE("relabeling the universe permutes utilities exactly") {
  std::mt19937_64 rng(6);
  const int j = 5, jp = 7;
  for (auto act : {Activation::kLinear, Activation::kQuadratic}) {
    FeaturelessConfig c;
    c.universe = j;
    c.width = jp;
    c.depth = 2;
    c.activation = act;
    FeaturelessDeepHalo m(c, 1), pm(c, 2);
    std::vector<int> pi(j);
    std::iota(pi.begin(), pi.end(), 0);
    std::shuffle(pi.begin(), pi.end(), rng);
    // Extended permutation fixes the auxiliary coordinates.
    auto ext = [&](std::size_t i) { return i < static_cast<std::size_t>(j) ? static_cast<std::size_t>(pi[i]) : i; };
    for (int l = 1; l <= 2; ++l) {
      const Matrix t = dyadic_matrix(m.theta(l).rows(), m.theta(l).cols(), rng);
      m.set_theta(l, t);
      Matrix p(t.rows(), t.cols());
      for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t col = 0; col < t.cols(); ++col) p(ext(r), ext(col)) = t(r, col);
      pm.set_theta(l, p);
    }
    const Matrix w = dyadic_matrix(j, jp, rng);
    m.set_output(w);
    Matrix pw(j, jp);
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t col = 0; col < w.cols(); ++col) pw(ext(r), ext(col)) = w(r, col);
    pm.set_output(pw);

    for (std::uint64_t mask = 1; mask < (1u << j); ++mask) {
      std::vector<int> s, ps;
      for (int i = 0; i < j; ++i)
        if (mask >> i & 1) {
          s.push_back(i);
          ps.push_back(pi[static_cast<std::size_t>(i)]);
        }
      const auto u = deephalo::set_utilities(m, s);
      const auto pu = deephalo::set_utilities(pm, ps);
      CHECK(u == pu);
    }
  }
}

TEST_CASE("zeroed extra layers embed a shallow model exactly") {
  std::mt19937_64 rng(9);
  const auto gen = deephalo::data::gen_synthetic_simplex(5, 3, 0, 20, 4);
  for (auto act : {Activation::kLinear, Activation::kQuadratic}) {
    auto shallow = random_model(5, 6, 2, act, rng, 0.3);
    FeaturelessConfig c = shallow.config();
    c.depth = 4;
    FeaturelessDeepHalo deep(c, 0);
    for (int l = 1; l <= 2; ++l) deep.set_theta(l, shallow.theta(l));
    for (int l = 3; l <= 4; ++l) deep.set_theta(l, Matrix(6, 6));
    deep.set_output(shallow.output());
    const auto a = deephalo::evaluate(shallow, gen.dataset);
    const auto b = deephalo::evaluate(deep, gen.dataset);
    CHECK(b.nll <= a.nll);
    CHECK(b.nll == a.nll);
  }
}

TEST_CASE("rank-factored layers reach the dense optimum") {
  const auto gen = deephalo::data::gen_synthetic_simplex(4, 3, 0, 200, 12);
  FeaturelessConfig c;
  c.universe = 4;
  c.depth = 1;
  c.output_trainable = false;
  FeaturelessDeepHalo dense(c, 1);
  c.rank = 4;
  FeaturelessDeepHalo factored(c, 2);

  // Any dense Θ is reachable with A = I, B = Θ.
  std::mt19937_64 rng(3);
  const Matrix t = support::random_matrix(4, 4, rng);
  dense.set_theta(1, t);
  factored.set_factors(1, Matrix::identity(4), t);
  CHECK(deephalo::evaluate(dense, gen.dataset).nll ==
        doctest::Approx(deephalo::evaluate(factored, gen.dataset).nll).epsilon(1e-14));

  deephalo::TrainConfig tc;
  tc.learning_rate = 0.05;
  tc.max_epochs = 1500;
  tc.seed = 4;
  deephalo::train(dense, gen.dataset, tc);
  deephalo::train(factored, gen.dataset, tc);
  const double a = deephalo::evaluate(dense, gen.dataset).nll;
  const double b = deephalo::evaluate(factored, gen.dataset).nll;
  CHECK(std::abs(a - b) <= 1e-3);
}

TEST_CASE("presets and validation") {
  auto mnl = FeaturelessDeepHalo::mnl(4, 1);
  CHECK(mnl.config().preset == "mnl");
  CHECK_FALSE(mnl.output_parameter().trainable);
  const Matrix t = mnl.theta(1);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      if (r != c) CHECK(t(r, c) == 0.0);
  // Context-free: an item's utility does not depend on its companions.
  CHECK(deephalo::set_utilities(mnl, {0, 1})[0] == deephalo::set_utilities(mnl, {0, 2, 3})[0]);

  auto cmnl = FeaturelessDeepHalo::cmnl(4, 1);
  CHECK(cmnl.config().depth == 1);
  CHECK(cmnl.width() == 4);

  FeaturelessConfig bad;
  bad.universe = 4;
  bad.width = 3;
  CHECK_THROWS_AS(FeaturelessDeepHalo(bad, 0), deephalo::ModelError);
  bad.width = 0;
  bad.depth = 0;
  CHECK_THROWS_AS(FeaturelessDeepHalo(bad, 0), deephalo::ModelError);
  CHECK_THROWS_AS(deephalo::parse_activation("cubic"), deephalo::ModelError);
}

TEST_CASE("first layer without residual") {
  std::mt19937_64 rng(10);
  FeaturelessConfig c;
  c.universe = 3;
  c.first_layer_residual = false;
  FeaturelessDeepHalo m(c, 0);
  const Matrix t = support::random_matrix(3, 3, rng);
  m.set_theta(1, t);
  m.set_output(Matrix::identity(3));
  const auto u = deephalo::set_utilities(m, {0, 2});
  CHECK(u[0] == doctest::Approx(t(0, 0) + t(0, 2)).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(t(2, 0) + t(2, 2)).epsilon(1e-15));
}

TEST_CASE("featureless NLL gradients match finite differences") {
  std::mt19937_64 rng(11);
  const auto gen = deephalo::data::gen_synthetic_simplex(5, 3, 0, 2, 3);
  std::vector<std::size_t> idx(gen.dataset.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = deephalo::make_batch(gen.dataset, idx);
  for (auto act : {Activation::kLinear, Activation::kQuadratic}) {
    for (std::optional<int> rank : {std::optional<int>(), std::optional<int>(3)}) {
      FeaturelessConfig c;
      c.universe = 5;
      c.width = 7;
      c.depth = 3;
      c.activation = act;
      c.rank = rank;
      FeaturelessDeepHalo m(c, rng());
      for (auto* p : m.parameters()) p->value = support::random_matrix(p->value.rows(), p->value.cols(), rng, -0.4, 0.4);
      const double err = support::gradient_check(m.parameters(), [&](deephalo::ad::Tape& t) {
        return deephalo::batch_loss(m.utilities(t, batch), batch, deephalo::Loss::kNll);
      });
      CHECK(err <= 1e-4);
    }
  }
}
