#pragma once

// Test oracles shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "deephalo/autodiff.hpp"
#include "deephalo/choice_model.hpp"
#include "deephalo/featureless.hpp"
#include "deephalo/matrix.hpp"

namespace support {

using deephalo::Matrix;
namespace ad = deephalo::ad;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data()) v = d(rng);
  return m;
}

/// |a − n| / max(|a|, |n|, floor): relative error with a floor for gradients near zero.
inline double floored_rel(double a, double n, double floor = 1e-4) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Max floored relative error between reverse-mode gradients of `loss` and
/// central differences over every entry of every trainable parameter.
inline double gradient_check(const std::vector<ad::Parameter*>& params,
                             const std::function<ad::Var(ad::Tape&)>& loss, double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape tape;
    tape.backward(loss(tape));
  }
  double worst = 0.0;
  for (auto* p : params) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      ad::Tape up(ad::GradMode::kDisabled);
      const double fp = loss(up).value()[0];
      p->value[i] = orig - h;
      ad::Tape down(ad::GradMode::kDisabled);
      const double fm = loss(down).value()[0];
      p->value[i] = orig;
      worst = std::max(worst, floored_rel(p->grad[i], (fp - fm) / (2.0 * h)));
    }
  }
  return worst;
}

/// Utilities of every item in every non-empty subset of a J-universe,
/// indexed [mask][item] (NaN for absent items).
using SetTable = std::vector<std::vector<double>>;

inline SetTable all_set_utilities(const std::function<std::vector<double>(const std::vector<int>&)>& f,
                                  int universe) {
  SetTable t(std::size_t{1} << universe,
             std::vector<double>(static_cast<std::size_t>(universe),
                                 std::numeric_limits<double>::quiet_NaN()));
  for (std::uint64_t m = 1; m < (std::uint64_t{1} << universe); ++m) {
    std::vector<int> items;
    for (int i = 0; i < universe; ++i)
      if (m >> i & 1) items.push_back(i);
    const auto u = f(items);
    for (std::size_t k = 0; k < items.size(); ++k) t[m][static_cast<std::size_t>(items[k])] = u[k];
  }
  return t;
}

/// Möbius inversion over the submasks of T, enumerated by the (r − 1) & T walk.
inline double mobius_v(const SetTable& t, int j, std::uint64_t source) {
  const std::uint64_t jbit = std::uint64_t{1} << j;
  double total = 0.0;
  std::uint64_t r = source;
  while (true) {
    const int gap = std::popcount(source) - std::popcount(r);
    total += (gap % 2 ? -1.0 : 1.0) * t[r | jbit][static_cast<std::size_t>(j)];
    if (r == 0) break;
    r = (r - 1) & source;
  }
  return total;
}

/// α_jk(T) directly from utility differences:
/// Σ_{R⊆T} (−1)^{|T|−|R|} [u_j − u_k](R ∪ {j,k}).
inline double alpha_from_differences(const SetTable& t, int j, int k, std::uint64_t source) {
  const std::uint64_t pair = (std::uint64_t{1} << j) | (std::uint64_t{1} << k);
  double total = 0.0;
  std::uint64_t r = source;
  while (true) {
    const int gap = std::popcount(source) - std::popcount(r);
    const auto& u = t[r | pair];
    total += (gap % 2 ? -1.0 : 1.0) * (u[static_cast<std::size_t>(j)] - u[static_cast<std::size_t>(k)]);
    if (r == 0) break;
    r = (r - 1) & source;
  }
  return total;
}

/// Featureless forward written out with plain matrix products, one set at a time.
inline std::vector<double> reference_featureless(const deephalo::FeaturelessDeepHalo& m,
                                                 const std::vector<int>& set) {
  const auto& c = m.config();
  const auto j = static_cast<std::size_t>(c.universe);
  const auto jp = static_cast<std::size_t>(c.width);
  Matrix e(j, 1);
  for (int i : set) e(static_cast<std::size_t>(i), 0) = 1.0;
  Matrix y = deephalo::matmul(m.theta(1), e);
  if (c.first_layer_residual)
    for (std::size_t i = 0; i < j; ++i) y(i, 0) += e(i, 0);
  for (int l = 2; l <= c.depth; ++l) {
    Matrix h = y;
    for (std::size_t i = 0; i < jp; ++i) {
      if (c.activation == deephalo::Activation::kQuadratic) h(i, 0) = y(i, 0) * y(i, 0);
      else if (i < j) h(i, 0) = y(i, 0) * e(i, 0);
    }
    y += deephalo::matmul(m.theta(l), h);
  }
  const Matrix u = deephalo::matmul(m.output(), y);
  std::vector<double> out;
  for (int i : set) out.push_back(u(static_cast<std::size_t>(i), 0));
  return out;
}

struct OrderReport {
  double max_high = 0.0;  // largest |v_j(T)| with |T| above the order
  double max_low = 0.0;   // largest |v_j(T)| at exactly the order
  double max_u = 0.0;
};

/// Inverts a full utility table and splits |v| by the size of T.
inline OrderReport order_report(const SetTable& t, int universe, int order) {
  OrderReport r;
  const std::uint64_t full = (std::uint64_t{1} << universe) - 1;
  for (std::uint64_t m = 1; m <= full; ++m)
    for (int i = 0; i < universe; ++i)
      if (m >> i & 1) r.max_u = std::max(r.max_u, std::abs(t[m][static_cast<std::size_t>(i)]));
  for (int j = 0; j < universe; ++j) {
    const std::uint64_t others = full & ~(std::uint64_t{1} << j);
    for (std::uint64_t src = others;; src = (src - 1) & others) {
      const int size = std::popcount(src);
      const double v = std::abs(mobius_v(t, j, src));
      if (size > order) r.max_high = std::max(r.max_high, v);
      if (size == order) r.max_low = std::max(r.max_low, v);
      if (src == 0) break;
    }
  }
  return r;
}

}  // namespace support
