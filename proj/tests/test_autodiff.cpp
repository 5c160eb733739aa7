#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "support.hpp"

#include "deephalo/autodiff.hpp"
#include "deephalo/errors.hpp"

using deephalo::Matrix;
namespace ad = deephalo::ad;

namespace {

// Central difference of a scalar function of one leaf matrix.
Matrix numeric_grad(const Matrix& x, const std::function<double(const Matrix&)>& f, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

double max_rel(const Matrix& a, const Matrix& n) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, support::floored_rel(a[i], n[i]));
  return worst;
}

// Unary op under test: builds sum(w ⊙ op(x)) so every output entry matters.
using UnaryOp = std::function<ad::Var(ad::Var)>;

double check_unary(const UnaryOp& op, const Matrix& x, const Matrix& w) {
  ad::Tape t;
  const ad::Var xv = t.variable(x);
  const ad::Var out = op(xv);
  t.backward(ad::sum(ad::hadamard(out, t.constant(w))));
  const Matrix analytic = xv.grad();
  const Matrix numeric = numeric_grad(x, [&](const Matrix& p) {
    ad::Tape tt(ad::GradMode::kDisabled);
    return ad::sum(ad::hadamard(op(tt.variable(p)), tt.constant(w))).value()[0];
  });
  return max_rel(analytic, numeric);
}

}  // namespace

TEST_CASE("matmul values and gradients") {
  ad::Tape t;
  const ad::Var i2 = t.constant(Matrix::identity(2));
  const ad::Var m = t.constant(Matrix::from_rows({{1, 2}, {3, 4}}));
  CHECK(ad::matmul(i2, m).value() == Matrix::from_rows({{1, 2}, {3, 4}}));

  ad::Tape t2;
  const ad::Var a = t2.variable(Matrix::from_rows({{1, 2}}));
  const ad::Var b = t2.variable(Matrix::from_rows({{3}, {4}}));
  const ad::Var out = ad::matmul(a, b);
  CHECK(out.value() == Matrix::from_rows({{11}}));
  t2.backward(out);
  const Matrix numeric = numeric_grad(a.value(), [&](const Matrix& p) {
    return deephalo::matmul(p, b.value())(0, 0);
  }, 1e-6);
  CHECK(a.grad()(0, 0) == doctest::Approx(numeric(0, 0)).epsilon(1e-8));
  CHECK(a.grad()(0, 1) == doctest::Approx(numeric(0, 1)).epsilon(1e-8));
  CHECK(a.grad() == Matrix::from_rows({{3, 4}}));
  CHECK(b.grad() == Matrix::from_rows({{1}, {2}}));
}

TEST_CASE("matmul with a zero factor") {
  std::mt19937_64 rng(3);
  ad::Tape t;
  const ad::Var z = t.variable(Matrix(2, 3));
  const ad::Var x = t.variable(support::random_matrix(3, 2, rng));
  const ad::Var out = ad::matmul(z, x);
  CHECK(deephalo::max_abs(out.value()) == 0.0);
  t.backward(ad::sum(out));
  // d/dx of sum(0·x) vanishes; d/dz is the row sums of x, matching differences.
  CHECK(deephalo::max_abs(x.grad()) == 0.0);
  const Matrix numeric = numeric_grad(z.value(), [&](const Matrix& p) {
    const Matrix prod = deephalo::matmul(p, x.value());
    double s = 0;
    for (double v : prod.data()) s += v;
    return s;
  });
  CHECK(max_rel(z.grad(), numeric) < 1e-8);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  ad::Tape t;
  const ad::Var a = t.constant(Matrix(2, 3));
  const ad::Var b = t.constant(Matrix(2, 3));
  CHECK_THROWS_WITH_AS(ad::matmul(a, b), "matmul shape mismatch: 2x3 * 2x3", deephalo::DimensionError);
}

TEST_CASE("hadamard masks and gradients") {
  ad::Tape t;
  const ad::Var a = t.variable(Matrix::from_rows({{1, 2, 3}}));
  CHECK(ad::hadamard(a, t.constant(Matrix::from_rows({{1, 1, 1}}))).value() == Matrix::from_rows({{1, 2, 3}}));
  CHECK(ad::hadamard(a, t.constant(Matrix::from_rows({{0, 1, 0}}))).value() == Matrix::from_rows({{0, 2, 0}}));

  ad::Tape t2;
  const Matrix bv = Matrix::from_rows({{0.5, -2, 7}});
  const ad::Var x = t2.variable(Matrix::from_rows({{1, 2, 3}}));
  t2.backward(ad::sum(ad::hadamard(x, t2.constant(bv))));
  CHECK(x.grad() == bv);
  CHECK_THROWS_AS(ad::hadamard(x, t2.constant(Matrix(3, 1))), deephalo::DimensionError);
}

TEST_CASE("elementwise square") {
  ad::Tape t;
  const ad::Var a = t.variable(Matrix::from_rows({{-2, 0, 3}}));
  CHECK(ad::elementwise_square(a).value() == Matrix::from_rows({{4, 0, 9}}));
  ad::Tape t2;
  const ad::Var b = t2.variable(Matrix::from_rows({{1, 2}}));
  t2.backward(ad::sum(ad::elementwise_square(b)));
  CHECK(b.grad() == Matrix::from_rows({{2, 4}}));
  ad::Tape t3;
  CHECK(ad::elementwise_square(t3.constant(Matrix(3, 4))).value() == Matrix(3, 4));
}

TEST_CASE("relu, mean over columns, layer norm basics") {
  ad::Tape t;
  CHECK(ad::relu(t.constant(Matrix::from_rows({{-1, 2}}))).value() == Matrix::from_rows({{0, 2}}));

  const Matrix x = Matrix::from_rows({{1, 3, 100}, {2, 4, -50}});
  const Matrix mask = Matrix::from_rows({{1, 1, 0}});
  const ad::Var m = ad::mean_over_columns(t.constant(x), mask);
  CHECK(m.value() == Matrix::from_rows({{2}, {3}}));

  Matrix other = x;
  other(0, 2) = -7;
  other(1, 2) = 1e9;
  const Matrix masked_out = ad::mean_over_columns(t.constant(other), mask).value();
  CHECK(masked_out == m.value());

  CHECK_THROWS_AS(ad::mean_over_columns(t.constant(x), Matrix(1, 3)), deephalo::DegenerateSetError);

  const ad::Var ln = ad::layer_norm(t.constant(Matrix(3, 1, 4.2)), t.constant(Matrix(3, 1, 1.0)),
                                    t.constant(Matrix(3, 1, 0.0)));
  CHECK(ln.value() == Matrix(3, 1));
  const ad::Var ln_bias = ad::layer_norm(t.constant(Matrix(2, 1, -1.0)), t.constant(Matrix(2, 1, 3.0)),
                                         t.constant(Matrix::from_rows({{0.5}, {-0.25}})));
  CHECK(ln_bias.value() == Matrix::from_rows({{0.5}, {-0.25}}));
}

TEST_CASE("segmented mean per group") {
  ad::Tape t;
  const Matrix x = Matrix::from_rows({{1, 2, 9, 4, 6, 8}});
  const Matrix mask = Matrix::from_rows({{1, 1, 0, 1, 1, 1}});
  const ad::Var m = ad::mean_over_columns(t.constant(x), mask, 3);
  CHECK(m.value() == Matrix::from_rows({{1.5, 6}}));
}

TEST_CASE("backward semantics") {
  ad::Tape t;
  const ad::Var a = t.variable(Matrix(2, 2, 0.3));
  const ad::Var s = ad::sum(a);
  t.backward(s);
  CHECK(a.grad() == Matrix(2, 2, 1.0));
  t.backward(s);
  CHECK(a.grad() == Matrix(2, 2, 2.0));
  CHECK_THROWS_AS(t.backward(a), deephalo::DimensionError);
}

TEST_CASE("composite sum((Wx)^2) matches finite differences") {
  std::mt19937_64 rng(11);
  const Matrix w0 = support::random_matrix(3, 4, rng);
  const Matrix x = support::random_matrix(4, 2, rng);
  ad::Tape t;
  const ad::Var w = t.variable(w0);
  t.backward(ad::sum(ad::elementwise_square(ad::matmul(w, t.constant(x)))));
  const Matrix numeric = numeric_grad(w0, [&](const Matrix& p) {
    const Matrix prod = deephalo::matmul(p, x);
    double s = 0;
    for (double v : prod.data()) s += v * v;
    return s;
  });
  CHECK(max_rel(w.grad(), numeric) <= 1e-5);
}

TEST_CASE("every differentiable op passes 100 random finite-difference trials") {
  std::mt19937_64 rng(2024);
  const Matrix mask = Matrix::from_rows({{1, 0, 1, 1}});
  const std::vector<int> gather_index = {2, -1, 0, 1, 0, 2, -1, 1};
  const std::vector<int> pick_rows = {0, 2, 1, 0};
  double worst_overall = 0.0;

  const std::vector<std::pair<const char*, UnaryOp>> ops = {
      {"transpose", [](ad::Var a) { return ad::transpose(a); }},
      {"scale", [](ad::Var a) { return ad::scale(a, -1.7); }},
      {"square", [](ad::Var a) { return ad::elementwise_square(a); }},
      {"relu", [](ad::Var a) { return ad::relu(a); }},
      {"mean", [&](ad::Var a) { return ad::mean_over_columns(a, mask); }},
      {"segmented mean", [&](ad::Var a) { return ad::mean_over_columns(a, mask, 2); }},
      {"repeat", [](ad::Var a) { return ad::repeat_columns(a, 3); }},
      {"row", [](ad::Var a) { return ad::row(a, 1); }},
      {"reshape", [](ad::Var a) { return ad::reshape(a, 4, 3); }},
      {"gather", [&](ad::Var a) { return ad::gather_rows(a, gather_index, 2); }},
      {"pick", [&](ad::Var a) { return ad::pick(a, pick_rows); }},
      {"matmul left", [&](ad::Var a) {
         return ad::matmul(a, a.tape()->constant(Matrix::from_rows({{1, -2}, {0.5, 3}, {2, 1}, {-1, 0}})));
       }},
      {"matmul right", [&](ad::Var a) {
         return ad::matmul(a.tape()->constant(Matrix::from_rows({{1, -2, 0.5}, {3, 2, 1}})), a);
       }},
      {"add", [](ad::Var a) { return ad::add(a, a); }},
      {"sub", [](ad::Var a) { return ad::sub(a, ad::elementwise_square(a)); }},
      {"hadamard", [](ad::Var a) { return ad::hadamard(a, ad::scale(a, 2.0)); }},
      {"add_col_broadcast", [](ad::Var a) {
         return ad::add_col_broadcast(a, ad::transpose(ad::row(ad::transpose(a), 0)));
       }},
      {"mul_row_broadcast", [](ad::Var a) { return ad::mul_row_broadcast(a, ad::row(a, 2)); }},
      {"mul_col_broadcast", [](ad::Var a) {
         return ad::mul_col_broadcast(a, ad::transpose(ad::row(ad::transpose(a), 1)));
       }},
      {"layer_norm", [](ad::Var a) {
         const ad::Var g = ad::transpose(ad::row(ad::transpose(a), 0));
         const ad::Var b = ad::transpose(ad::row(ad::transpose(a), 2));
         return ad::layer_norm(a, g, b);
       }},
      {"masked_softmax", [&](ad::Var a) {
         return ad::masked_softmax(ad::transpose(ad::row(a, 0)), deephalo::transpose(mask));
       }},
      {"masked_softmax 3x3", [&](ad::Var a) {
         return ad::masked_softmax(ad::reshape(ad::row(ad::reshape(a, 1, 12), 0), 3, 4), Matrix(3, 4, 1.0));
       }},
      {"masked_log_softmax", [&](ad::Var a) {
         return ad::pick(ad::masked_log_softmax(ad::reshape(ad::reshape(a, 1, 12), 4, 3), Matrix(4, 3, 1.0)),
                         std::vector<int>{0, 3, 2});
       }},
  };
  for (const auto& [name, op] : ops) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix x = support::random_matrix(3, 4, rng);
      ad::Tape probe(ad::GradMode::kDisabled);
      const ad::Var y = op(probe.constant(x));
      const Matrix w = support::random_matrix(y.rows(), y.cols(), rng);
      worst = std::max(worst, check_unary(op, x, w));
    }
    INFO(name);
    CHECK(worst <= 1e-4);
    worst_overall = std::max(worst_overall, worst);
  }
  CHECK(worst_overall <= 1e-4);
}

TEST_CASE("shared subexpressions match the expanded tree") {
  std::mt19937_64 rng(5);
  const Matrix x0 = support::random_matrix(3, 3, rng);
  // DAG: s = x·x reused twice. Tree: the same product recomputed.
  ad::Tape dag;
  const ad::Var xd = dag.variable(x0);
  const ad::Var s = ad::matmul(xd, xd);
  dag.backward(ad::sum(ad::hadamard(s, s)));

  ad::Tape tree;
  const ad::Var xt = tree.variable(x0);
  const ad::Var a1 = ad::matmul(xt, tree.constant(x0));
  const ad::Var a2 = ad::matmul(tree.constant(x0), xt);
  const ad::Var sc = tree.constant(deephalo::matmul(x0, x0));
  // d/dx sum(s⊙s) = 2·(d s) against s, with ds from each factor of s.
  tree.backward(ad::sum(ad::scale(ad::add(ad::hadamard(a1, sc), ad::hadamard(a2, sc)), 2.0)));
  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(std::abs(xd.grad()[i] - xt.grad()[i]) <= 1e-12 * std::max(1.0, std::abs(xt.grad()[i])));
  }
}

TEST_CASE("masked softmax gives exact zeros at dummies") {
  ad::Tape t;
  const Matrix u = Matrix::from_rows({{5}, {ad::kMaskedUtility}, {5}});
  const Matrix mask = Matrix::from_rows({{1}, {0}, {1}});
  const ad::Var p = ad::masked_softmax(t.constant(u), mask);
  CHECK(p.value()(0, 0) == 0.5);
  CHECK(p.value()(1, 0) == 0.0);
  CHECK(p.value()(2, 0) == 0.5);
  CHECK_THROWS_AS(ad::masked_softmax(t.constant(u), Matrix(3, 1)), deephalo::DegenerateSetError);
  const ad::Var lp = ad::masked_log_softmax(t.constant(Matrix::from_rows({{0}, {-2000}})), Matrix(2, 1, 1.0));
  CHECK(std::isfinite(lp.value()(1, 0)));
  CHECK(lp.value()(1, 0) == doctest::Approx(-2000.0));
}

TEST_CASE("gradient-disabled tapes record no rules") {
  ad::Tape t(ad::GradMode::kDisabled);
  const ad::Var a = t.variable(Matrix(1, 1, 2.0));
  CHECK_FALSE(a.requires_grad());
  const ad::Var s = ad::sum(ad::elementwise_square(a));
  CHECK(s.value()[0] == 4.0);
  t.backward(s);
  CHECK(a.grad().empty());
}

TEST_CASE("parameter leaves accumulate into the parameter") {
  ad::Parameter p("w", Matrix::from_rows({{1, -1}}));
  {
    ad::Tape t;
    t.backward(ad::sum(ad::scale(t.parameter(p), 3.0)));
  }
  CHECK(p.grad == Matrix::from_rows({{3, 3}}));
  {
    ad::Tape t(ad::GradMode::kEnabled, false);
    t.backward(ad::sum(t.parameter(p)));
    CHECK(p.grad == Matrix::from_rows({{3, 3}}));
    t.flush_parameter_gradients();
  }
  CHECK(p.grad == Matrix::from_rows({{4, 4}}));
  p.trainable = false;
  ad::Tape t;
  CHECK_FALSE(t.parameter(p).requires_grad());
}
