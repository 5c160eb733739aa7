#include "deephalo/featureless.hpp"

#include <cmath>
#include <random>

#include "deephalo/errors.hpp"

namespace deephalo {

namespace {

constexpr double kInitStd = 0.02;

Matrix normal_matrix(std::size_t r, std::size_t c, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(r, c);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

}  // namespace

const char* activation_name(Activation a) {
  return a == Activation::kLinear ? "linear" : "quadratic";
}

Activation parse_activation(const std::string& s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "quadratic") return Activation::kQuadratic;
  throw ModelError("unknown activation '" + s + "' (expected linear or quadratic)");
}

FeaturelessDeepHalo::FeaturelessDeepHalo(FeaturelessConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  auto& c = config_;
  if (c.universe < 1) throw ModelError("featureless model needs a universe of at least 1 item");
  if (c.width == 0) c.width = c.universe;
  if (c.width < c.universe) {
    throw ModelError("width " + std::to_string(c.width) + " is smaller than the universe size " +
                     std::to_string(c.universe));
  }
  if (c.depth < 1) throw ModelError("depth must be at least 1");
  if (c.rank && *c.rank < 1) throw ModelError("rank must be at least 1");
  if (c.diagonal_only && (c.depth != 1 || c.width != c.universe)) {
    throw ModelError("diagonal restriction needs depth 1 and width J");
  }
  if (c.diagonal_only) c.rank.reset();

  std::mt19937_64 rng(seed);
  const auto jp = static_cast<std::size_t>(c.width);
  for (int l = 1; l <= c.depth; ++l) {
    const std::string name = "theta" + std::to_string(l);
    if (c.rank) {
      // Factor entries scaled so the product has roughly kInitStd spread.
      const auto h = static_cast<std::size_t>(*c.rank);
      const double s = std::sqrt(kInitStd / std::sqrt(static_cast<double>(h)));
      layers_.emplace_back(name + ".A", normal_matrix(h, jp, s, rng));
      layers_.emplace_back(name + ".B", normal_matrix(h, in_dim(l), s, rng));
    } else {
      Matrix t = normal_matrix(jp, in_dim(l), kInitStd, rng);
      if (c.diagonal_only) {
        for (std::size_t i = 0; i < t.rows(); ++i)
          for (std::size_t j = 0; j < t.cols(); ++j)
            if (i != j) t(i, j) = 0.0;
      }
      layers_.emplace_back(name, std::move(t));
    }
  }
  const auto j = static_cast<std::size_t>(c.universe);
  Matrix out = c.output_trainable ? normal_matrix(j, jp, kInitStd, rng) : Matrix(j, jp);
  for (std::size_t i = 0; i < j; ++i) out(i, i) += 1.0;
  output_ = ad::Parameter("w_out", std::move(out), c.output_trainable);
  if (c.diagonal_only) diagonal_mask_ = Matrix::identity(j);
}

FeaturelessDeepHalo FeaturelessDeepHalo::mnl(int universe, std::uint64_t seed) {
  FeaturelessConfig c;
  c.universe = universe;
  c.depth = 1;
  c.diagonal_only = true;
  c.output_trainable = false;
  c.preset = "mnl";
  return FeaturelessDeepHalo(c, seed);
}

FeaturelessDeepHalo FeaturelessDeepHalo::cmnl(int universe, std::uint64_t seed) {
  FeaturelessConfig c;
  c.universe = universe;
  c.depth = 1;
  c.preset = "cmnl";
  return FeaturelessDeepHalo(c, seed);
}

std::size_t FeaturelessDeepHalo::in_dim(int layer) const {
  return static_cast<std::size_t>(layer == 1 ? config_.universe : config_.width);
}

std::vector<ad::Parameter*> FeaturelessDeepHalo::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& p : layers_) out.push_back(&p);
  out.push_back(&output_);
  return out;
}

std::unique_ptr<ChoiceModel> FeaturelessDeepHalo::clone() const {
  return std::make_unique<FeaturelessDeepHalo>(*this);
}

int FeaturelessDeepHalo::max_interaction_order() const {
  return deephalo::max_interaction_order(config_.activation, config_.depth);
}

ad::Var FeaturelessDeepHalo::theta_var(ad::Tape& tape, int layer) {
  const auto l = static_cast<std::size_t>(layer - 1);
  if (config_.rank) {
    const ad::Var a = tape.parameter(layers_[2 * l]);
    const ad::Var b = tape.parameter(layers_[2 * l + 1]);
    return ad::matmul(ad::transpose(a), b);
  }
  const ad::Var t = tape.parameter(layers_[l]);
  if (config_.diagonal_only) return ad::hadamard(t, tape.constant(diagonal_mask_));
  return t;
}

Matrix FeaturelessDeepHalo::theta(int layer) const {
  if (layer < 1 || layer > config_.depth) throw ModelError("layer index out of range");
  const auto l = static_cast<std::size_t>(layer - 1);
  if (config_.rank) return matmul(transpose(layers_[2 * l].value), layers_[2 * l + 1].value);
  Matrix t = layers_[l].value;
  if (config_.diagonal_only) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= diagonal_mask_[i];
  }
  return t;
}

void FeaturelessDeepHalo::set_theta(int layer, const Matrix& value) {
  if (config_.rank) throw ModelError("set_theta on a rank-factored model; use set_factors");
  if (layer < 1 || layer > config_.depth) throw ModelError("layer index out of range");
  auto& p = layers_[static_cast<std::size_t>(layer - 1)];
  if (!p.value.same_shape(value)) {
    throw DimensionError("theta" + std::to_string(layer) + " must be " + p.value.shape_string() +
                         ", got " + value.shape_string());
  }
  p.value = value;
}

void FeaturelessDeepHalo::set_factors(int layer, const Matrix& a, const Matrix& b) {
  if (!config_.rank) throw ModelError("set_factors on a dense model");
  if (layer < 1 || layer > config_.depth) throw ModelError("layer index out of range");
  const auto l = static_cast<std::size_t>(layer - 1);
  if (!layers_[2 * l].value.same_shape(a) || !layers_[2 * l + 1].value.same_shape(b)) {
    throw DimensionError("factor shapes do not match layer " + std::to_string(layer));
  }
  layers_[2 * l].value = a;
  layers_[2 * l + 1].value = b;
}

void FeaturelessDeepHalo::set_output(const Matrix& value) {
  if (!output_.value.same_shape(value)) {
    throw DimensionError("w_out must be " + output_.value.shape_string() + ", got " +
                         value.shape_string());
  }
  output_.value = value;
}

ad::Var FeaturelessDeepHalo::utilities(ad::Tape& tape, const Batch& batch) {
  if (batch.universe != config_.universe) {
    throw DataError("batch universe " + std::to_string(batch.universe) +
                    " does not match model universe " + std::to_string(config_.universe));
  }
  const std::size_t j = static_cast<std::size_t>(config_.universe);
  const std::size_t jp = static_cast<std::size_t>(config_.width);
  const std::size_t n = batch.size;

  const ad::Var e = tape.constant(batch.presence);
  Matrix lifted(jp, n);
  Matrix mask(jp, n, 1.0);
  for (std::size_t i = 0; i < j; ++i)
    for (std::size_t b = 0; b < n; ++b) {
      lifted(i, b) = batch.presence(i, b);
      mask(i, b) = batch.presence(i, b);
    }

  ad::Var y = ad::matmul(theta_var(tape, 1), e);
  if (config_.first_layer_residual) y = ad::add(tape.constant(std::move(lifted)), y);
  const ad::Var m = tape.constant(std::move(mask));
  for (int l = 2; l <= config_.depth; ++l) {
    const ad::Var h = config_.activation == Activation::kLinear ? ad::hadamard(y, m)
                                                                 : ad::elementwise_square(y);
    y = ad::add(y, ad::matmul(theta_var(tape, l), h));
  }
  const ad::Var u = ad::matmul(tape.parameter(output_), y);
  const ad::Var slots = ad::gather_rows(u, batch.items, batch.width);
  return apply_dummy_mask(slots, batch.mask);
}

int required_depth_quadratic(int universe) {
  if (universe < 2) {
    throw ModelError("required_depth_quadratic needs J >= 2, got " + std::to_string(universe));
  }
  // Smallest L with 2^(L-1) >= J-1, i.e. ceil(1 + log2(J-1)).
  int depth = 1;
  long long reach = 1;
  while (reach < universe - 1) {
    reach *= 2;
    ++depth;
  }
  return depth;
}

int max_interaction_order(Activation activation, int depth) {
  if (depth < 1) throw ModelError("depth must be at least 1");
  if (activation == Activation::kLinear) return depth;
  if (depth > 31) throw ModelError("depth too large for an order count");
  return 1 << (depth - 1);
}

}  // namespace deephalo
