#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "support.hpp"

#include "deephalo/errors.hpp"
#include "deephalo/featured.hpp"
#include "deephalo/featureless.hpp"
#include "deephalo/training.hpp"

using deephalo::FeaturelessDeepHalo;
using deephalo::Loss;
using deephalo::Matrix;
namespace data = deephalo::data;
namespace ad = deephalo::ad;

namespace {

data::Dataset pair_data(std::size_t zeros, std::size_t ones) {
  data::Dataset d;
  d.universe_size = 2;
  for (std::size_t i = 0; i < zeros + ones; ++i) d.observations.push_back({{{0, 1}}, i < zeros ? 0 : 1, {}});
  d.refresh_shape();
  return d;
}

FeaturelessDeepHalo uniform_mnl(int universe) {
  auto m = FeaturelessDeepHalo::mnl(universe, 0);
  m.set_theta(1, Matrix(static_cast<std::size_t>(universe), static_cast<std::size_t>(universe)));
  return m;
}

}  // namespace

TEST_CASE("loss closed forms") {
  CHECK(deephalo::nll_loss(std::vector<double>{1.0, 0.0}, 0) == 0.0);
  CHECK(deephalo::nll_loss(std::vector<double>{0.5, 0.5}, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(deephalo::nll_loss(std::vector<double>(4, 0.25), 2) == doctest::Approx(1.386294361119890).epsilon(1e-14));
  CHECK_THROWS_AS(deephalo::nll_loss(std::vector<double>{1.0, 0.0}, 1), deephalo::ModelError);
  CHECK(deephalo::mse_onehot_loss(std::vector<double>{0, 1, 0}, 1) == 0.0);
  CHECK(deephalo::mse_onehot_loss(std::vector<double>{0.5, 0.5}, 0) == 0.25);
  CHECK(deephalo::parse_loss("mse_onehot") == Loss::kMseOneHot);
  CHECK_THROWS_AS(deephalo::parse_loss("hinge"), deephalo::TrainingError);
}

TEST_CASE("batch losses agree with the scalar definitions") {
  std::mt19937_64 rng(1);
  const auto gen = data::gen_synthetic_simplex(5, 3, 0, 3, 2);
  std::vector<std::size_t> idx(gen.dataset.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = deephalo::make_batch(gen.dataset, idx);
  deephalo::FeaturelessConfig c;
  c.universe = 5;
  c.depth = 2;
  c.activation = deephalo::Activation::kQuadratic;
  FeaturelessDeepHalo m(c, 3);
  for (auto* p : m.parameters()) p->value = support::random_matrix(p->value.rows(), p->value.cols(), rng, -0.5, 0.5);
  const auto probs = deephalo::predict_probabilities(m, batch);
  double nll = 0, mse = 0;
  for (std::size_t b = 0; b < batch.size; ++b) {
    const auto chosen = static_cast<std::size_t>(batch.chosen_slot[b]);
    nll += deephalo::nll_loss(probs[b], chosen);
    mse += deephalo::mse_onehot_loss(probs[b], chosen);
  }
  ad::Tape t(ad::GradMode::kDisabled);
  const ad::Var u = m.utilities(t, batch);
  CHECK(deephalo::batch_loss(u, batch, Loss::kNll).value()[0] == doctest::Approx(nll / batch.size).epsilon(1e-12));
  CHECK(deephalo::batch_loss(u, batch, Loss::kMseOneHot).value()[0] == doctest::Approx(mse / batch.size).epsilon(1e-12));
  CHECK(support::gradient_check(m.parameters(), [&](ad::Tape& tt) {
          return deephalo::batch_loss(m.utilities(tt, batch), batch, Loss::kMseOneHot);
        }) <= 1e-4);
}

TEST_CASE("squared loss is minimized at the empirical frequencies") {
  const auto d = pair_data(700, 300);
  auto m = FeaturelessDeepHalo::mnl(2, 1);
  deephalo::TrainConfig tc;
  tc.loss = Loss::kMseOneHot;
  tc.learning_rate = 0.05;
  tc.max_epochs = 800;
  deephalo::train(m, d, tc);
  const auto p = deephalo::set_utilities(m, {0, 1});
  CHECK(deephalo::choice_probabilities(p)[0] == doctest::Approx(0.7).epsilon(1e-3));
}

TEST_CASE("Adam first step and zero gradients") {
  ad::Parameter p("w", Matrix::from_rows({{1.0, -2.0, 0.5}}));
  const Matrix g = Matrix::from_rows({{0.3, -4.0, 1e-3}});
  deephalo::Adam opt({&p}, {0.01});
  p.grad = g;
  opt.step();
  for (std::size_t i = 0; i < 3; ++i) {
    const double start = i == 0 ? 1.0 : i == 1 ? -2.0 : 0.5;
    const double want = start - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(p.value[i] == doctest::Approx(want).epsilon(1e-14));
  }
  ad::Parameter q("z", Matrix::from_rows({{3.0}}));
  deephalo::Adam still({&q});
  q.grad = Matrix(1, 1);
  for (int k = 0; k < 5; ++k) still.step();
  CHECK(q.value[0] == 3.0);

  p.grad[1] = std::nan("");
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("'w'"), deephalo::TrainingError);
}

TEST_CASE("gradient clipping rescales to the maximum norm") {
  ad::Parameter p("a", Matrix::from_rows({{0, 0}}));
  p.grad = Matrix::from_rows({{3, 4}});
  std::vector<ad::Parameter*> ps = {&p};
  CHECK(deephalo::clip_gradients(ps, 1.0) == 5.0);
  CHECK(p.grad[0] == doctest::Approx(0.6));
  CHECK(p.grad[1] == doctest::Approx(0.8));
}

TEST_CASE("logit on one saturated pair recovers its share") {
  const auto d = data::sample_choices({{{0, 1}, {0.98, 0.02}}}, 2000, 7);
  auto m = FeaturelessDeepHalo::mnl(2, 3);
  deephalo::TrainConfig tc;
  tc.learning_rate = 0.05;
  tc.max_epochs = 600;
  deephalo::train(m, d, tc);
  const double p = deephalo::choice_probabilities(deephalo::set_utilities(m, {0, 1}))[0];
  CHECK(std::abs(p - 0.98) <= 0.01);
}

TEST_CASE("zero learning rate leaves parameters alone") {
  const auto gen = data::gen_synthetic_simplex(4, 2, 0, 20, 1);
  deephalo::FeaturelessConfig c;
  c.universe = 4;
  c.depth = 2;
  FeaturelessDeepHalo m(c, 5);
  const auto before = deephalo::snapshot(m);
  deephalo::TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.max_epochs = 5;
  const auto r = deephalo::train(m, gen.dataset, tc);
  CHECK(deephalo::snapshot(m) == before);
  // Epochs reshuffle the summation order, so the loss agrees to rounding only.
  for (const auto& rec : r.history)
    CHECK(std::abs(rec.train_loss - r.history.front().train_loss) <= 1e-14);
}

TEST_CASE("patience of one stops after the first worse epoch and restores") {
  auto d = pair_data(200, 200);
  data::apply_split_manifest(d, [] {
    std::string train = "[", val = "[";
    for (int i = 0; i < 200; ++i) train += (i ? "," : "") + std::to_string(i);
    for (int i = 200; i < 400; ++i) val += (i > 200 ? "," : "") + std::to_string(i);
    return R"({"train":)" + train + R"(],"val":)" + val + "]}";
  }());
  auto m = FeaturelessDeepHalo::mnl(2, 1);
  std::vector<Matrix> after_first;
  deephalo::TrainConfig tc;
  tc.learning_rate = 0.1;
  tc.max_epochs = 50;
  tc.patience = 1;
  const auto r = deephalo::train(m, d, tc, [&](const deephalo::EpochRecord& rec) {
    if (rec.epoch == 1) after_first = deephalo::snapshot(m);
  });
  CHECK(r.history.size() == 2);
  CHECK(r.history[1].val_nll > r.history[0].val_nll);
  CHECK(r.stopped_early);
  CHECK(r.best_epoch == 1);
  CHECK(deephalo::snapshot(m) == after_first);
}

TEST_CASE("uniform predictions against a certain pair") {
  auto m = uniform_mnl(2);
  const data::ProbabilityTable t = {{{0, 1}, {1.0, 0.0}}};
  CHECK(deephalo::rmse_vs_frequencies(m, t, 2) == doctest::Approx(0.5).epsilon(1e-15));
  const data::ProbabilityTable same = deephalo::predict_table(m, t, 2);
  CHECK(deephalo::rmse_vs_frequencies(m, same, 2) == 0.0);
}

TEST_CASE("accuracy ties go to the lowest slot") {
  auto m = uniform_mnl(2);
  data::Dataset d;
  d.universe_size = 2;
  for (int i = 0; i < 10; ++i) d.observations.push_back({{{i % 5 == 0 ? 1 : 0, i % 5 == 0 ? 0 : 1}}, i < 3 ? 0 : 1, {}});
  d.refresh_shape();
  std::size_t first_slot = 0;
  for (const auto& o : d.observations) first_slot += o.set.slot_of(o.chosen) == 0;
  const auto metrics = deephalo::evaluate(m, d);
  CHECK(metrics.accuracy == static_cast<double>(first_slot) / 10.0);
  CHECK(metrics.nll == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("a common utility shift changes nothing") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(-3, 3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> u(5);
    for (double& v : u) v = ud(rng);
    u[2] = -std::numeric_limits<double>::infinity();
    const double c = ud(rng) * 10;
    std::vector<double> s = u;
    for (double& v : s) v += c;
    const auto p = deephalo::choice_probabilities(u);
    const auto q = deephalo::choice_probabilities(s);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
  }

  const auto gen = data::gen_synthetic_simplex(4, 3, 0, 30, 9);
  auto m = FeaturelessDeepHalo::mnl(4, 2);
  m.set_theta(1, support::random_matrix(4, 4, rng));
  auto shifted = m;
  Matrix t = m.theta(1);
  for (std::size_t i = 0; i < 4; ++i) t(i, i) += 2.5;
  shifted.set_theta(1, t);
  const auto a = deephalo::evaluate(m, gen.dataset);
  const auto b = deephalo::evaluate(shifted, gen.dataset);
  CHECK(std::abs(a.nll - b.nll) <= 1e-12);
  CHECK(a.accuracy == b.accuracy);
}

TEST_CASE("training is reproducible and independent of the thread count") {
  const auto gen = data::gen_synthetic_simplex(6, 3, 0, 30, 4);
  deephalo::FeaturelessConfig c;
  c.universe = 6;
  c.depth = 2;
  c.activation = deephalo::Activation::kQuadratic;
  deephalo::TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.batch_size = 128;
  tc.max_epochs = 3;
  tc.chunk_size = 16;
  tc.seed = 11;

  FeaturelessDeepHalo a(c, 1), b(c, 1), t4(c, 1);
  const auto ra = deephalo::train(a, gen.dataset, tc);
  const auto rb = deephalo::train(b, gen.dataset, tc);
  tc.threads = 4;
  const auto r4 = deephalo::train(t4, gen.dataset, tc);
  CHECK(deephalo::snapshot(a) == deephalo::snapshot(b));
  CHECK(deephalo::snapshot(a) == deephalo::snapshot(t4));
  for (std::size_t e = 0; e < ra.history.size(); ++e) {
    CHECK(ra.history[e].train_loss == rb.history[e].train_loss);
    CHECK(ra.history[e].val_nll == r4.history[e].val_nll);
  }
}

TEST_CASE("featured models train and stay finite") {
  std::mt19937_64 rng(5);
  data::Dataset d;
  d.universe_size = 6;
  d.feature_dim = 2;
  d.item_features = support::random_matrix(6, 2, rng);
  std::uniform_int_distribution<int> pick(0, 5);
  for (int i = 0; i < 300; ++i) {
    std::vector<int> s = {pick(rng)};
    while (s.size() < 3) {
      const int k = pick(rng);
      if (std::find(s.begin(), s.end(), k) == s.end()) s.push_back(k);
    }
    data::Observation o{{s}, s[static_cast<std::size_t>(i % 3)], Matrix(2, 3)};
    for (std::size_t slot = 0; slot < 3; ++slot)
      for (std::size_t r = 0; r < 2; ++r) o.features(r, slot) = d.item_features(static_cast<std::size_t>(s[slot]), r);
    d.observations.push_back(o);
  }
  d.refresh_shape();
  deephalo::FeaturedConfig c;
  c.input_dim = 2;
  c.dim = 6;
  c.heads = 2;
  c.depth = 2;
  deephalo::FeaturedDeepHalo m(c, 3);
  deephalo::TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.max_epochs = 20;
  tc.batch_size = 64;
  const auto r = deephalo::train(m, d, tc);
  CHECK(std::isfinite(r.history.back().val_nll));
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
}

TEST_CASE("learning-rate switch and config validation") {
  const auto d = pair_data(10, 10);
  auto m = FeaturelessDeepHalo::mnl(2, 1);
  deephalo::TrainConfig tc;
  tc.learning_rate = 0.1;
  tc.max_epochs = 4;
  tc.lr_schedule = deephalo::LrSchedule{0.001, 3};
  const auto r = deephalo::train(m, d, tc);
  CHECK(r.history[1].lr == 0.1);
  CHECK(r.history[2].lr == 0.001);

  std::ostringstream out;
  deephalo::write_history_csv(r.history, out);
  CHECK(out.str().rfind("epoch,train_loss,val_nll,lr,wall_ms\n", 0) == 0);

  deephalo::TrainConfig bad;
  bad.patience = 200;
  CHECK_THROWS_AS(bad.validate(), deephalo::TrainingError);
  bad.patience = 0;
  bad.learning_rate = -1;
  CHECK_THROWS_AS(bad.validate(), deephalo::TrainingError);
}

TEST_CASE("deep models do not invent context effects on logit data") {
  // Choices drawn from a context-free truth over every subset of size >= 2.
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> truth(5);
  for (double& v : truth) v = nd(rng);
  data::ProbabilityTable table;
  for (std::uint64_t mask = 1; mask < 32; ++mask) {
    if (std::popcount(mask) < 2) continue;
    std::vector<int> s;
    std::vector<double> u;
    for (int i = 0; i < 5; ++i)
      if (mask >> i & 1) {
        s.push_back(i);
        u.push_back(truth[static_cast<std::size_t>(i)]);
      }
    table.push_back({s, deephalo::choice_probabilities(u)});
  }
  auto d = data::sample_choices(table, 50000 / table.size() + 1, 3, 5);
  data::assign_random_split(d, 0.8, 0.0, 4);
  const auto test_idx = d.indices(data::Split::kTest);

  double oracle = 0.0;
  for (std::size_t i : test_idx) {
    const auto& o = d.observations[i];
    std::vector<double> u;
    for (int k : o.set.items) u.push_back(truth[static_cast<std::size_t>(k)]);
    oracle -= std::log(deephalo::choice_probabilities(u)[static_cast<std::size_t>(o.set.slot_of(o.chosen))]);
  }
  oracle /= static_cast<double>(test_idx.size());

  for (int depth : {1, 2, 3}) {
    deephalo::FeaturelessConfig c;
    c.universe = 5;
    c.depth = depth;
    c.activation = deephalo::Activation::kQuadratic;
    FeaturelessDeepHalo m(c, 8);
    deephalo::TrainConfig tc;
    tc.learning_rate = 0.01;
    tc.batch_size = 1024;
    tc.max_epochs = 40;
    tc.seed = 2;
    deephalo::train(m, d, tc);
    const double fitted = deephalo::evaluate(m, d, test_idx).nll;
    INFO("depth " << depth << " fitted " << fitted << " oracle " << oracle);
    CHECK(std::abs(fitted - oracle) <= 0.01);
  }
}
