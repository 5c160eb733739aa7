#include "deephalo/featured.hpp"

#include <cmath>
#include <random>

#include "deephalo/errors.hpp"

namespace deephalo {

namespace {

Matrix uniform_fan_in(std::size_t r, std::size_t c, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(r, c);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

std::string layer_prefix(int l) { return "layer" + std::to_string(l) + "."; }

}  // namespace

const char* variant_name(FeaturedVariant v) { return v == FeaturedVariant::kHeads ? "heads" : "resnet"; }

FeaturedVariant parse_variant(const std::string& s) {
  if (s == "heads") return FeaturedVariant::kHeads;
  if (s == "resnet") return FeaturedVariant::kResNet;
  throw ModelError("unknown featured variant '" + s + "' (expected heads or resnet)");
}

const char* aggregation_name(Aggregation a) { return a == Aggregation::kMean ? "mean" : "sum"; }

Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::kMean;
  if (s == "sum") return Aggregation::kSum;
  throw ModelError("unknown aggregation '" + s + "' (expected mean or sum)");
}

const char* embedding_name(Embedding e) { return e == Embedding::kMlp ? "mlp" : "identity"; }

Embedding parse_embedding(const std::string& s) {
  if (s == "mlp") return Embedding::kMlp;
  if (s == "identity") return Embedding::kIdentity;
  throw ModelError("unknown embedding '" + s + "' (expected mlp or identity)");
}

const char* head_name(HeadKind h) { return h == HeadKind::kMlp ? "mlp" : "diagonal"; }

HeadKind parse_head(const std::string& s) {
  if (s == "mlp") return HeadKind::kMlp;
  if (s == "diagonal") return HeadKind::kDiagonal;
  throw ModelError("unknown head kind '" + s + "' (expected mlp or diagonal)");
}

FeaturedDeepHalo::FeaturedDeepHalo(FeaturedConfig config, std::uint64_t seed)
    : config_(config) {
  const auto& c = config_;
  if (c.input_dim < 1) throw ModelError("featured model needs at least one input feature");
  if (c.dim < 1 || c.heads < 1 || c.depth < 1) {
    throw ModelError("dim, heads and depth must all be at least 1");
  }
  if (c.embedding == Embedding::kIdentity && c.dim != c.input_dim) {
    throw ModelError("identity embedding needs d == d_x (" + std::to_string(c.dim) + " vs " +
                     std::to_string(c.input_dim) + ")");
  }
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(c.dim);
  const auto dx = static_cast<std::size_t>(c.input_dim);
  const auto h = static_cast<std::size_t>(c.heads);

  if (c.embedding == Embedding::kMlp) {
    add("embed.W1", uniform_fan_in(d, dx, dx, rng));
    add("embed.b1", uniform_fan_in(d, 1, dx, rng));
    add("embed.W2", uniform_fan_in(d, d, d, rng));
    add("embed.b2", uniform_fan_in(d, 1, d, rng));
    add("embed.W3", uniform_fan_in(d, d, d, rng));
    add("embed.b3", uniform_fan_in(d, 1, d, rng));
    add("embed.ln_gain", Matrix(d, 1, 1.0));
    add("embed.ln_bias", Matrix(d, 1));
  }
  for (int l = 1; l <= c.depth; ++l) {
    const std::string pre = layer_prefix(l);
    if (c.variant == FeaturedVariant::kResNet) {
      add(pre + "W", uniform_fan_in(d, d, d, rng));
      continue;
    }
    add(pre + "W", uniform_fan_in(h, d, d, rng));
    for (int k = 0; k < c.heads; ++k) {
      const std::string hp = pre + "head" + std::to_string(k) + ".";
      if (c.head == HeadKind::kDiagonal) {
        add(hp + "q", uniform_fan_in(d, 1, 1, rng));
      } else {
        add(hp + "U", uniform_fan_in(d, d, d, rng));
        add(hp + "c", uniform_fan_in(d, 1, d, rng));
      }
    }
    if (c.head == HeadKind::kMlp) {
      add(pre + "V", uniform_fan_in(d, d, d, rng));
      add(pre + "e", uniform_fan_in(d, 1, d, rng));
      add(pre + "ln_gain", Matrix(d, 1, 1.0));
      add(pre + "ln_bias", Matrix(d, 1));
    }
  }
  std::normal_distribution<double> beta(0.0, 0.02);
  Matrix b(d, 1);
  for (double& v : b.data()) v = beta(rng);
  add("beta", std::move(b));
}

FeaturedDeepHalo::FeaturedDeepHalo(const FeaturedDeepHalo& other)
    : ChoiceModel(other), config_(other.config_), params_(other.params_), index_(other.index_) {}

void FeaturedDeepHalo::add(const std::string& name, Matrix value) {
  index_.emplace(name, params_.size());
  params_.emplace_back(name, std::move(value));
}

ad::Parameter& FeaturedDeepHalo::parameter(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ModelError("featured model has no parameter '" + name + "'");
  return params_[it->second];
}

bool FeaturedDeepHalo::has_parameter(const std::string& name) const { return index_.count(name) > 0; }

std::vector<std::string> FeaturedDeepHalo::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

std::vector<ad::Parameter*> FeaturedDeepHalo::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::unique_ptr<ChoiceModel> FeaturedDeepHalo::clone() const {
  return std::make_unique<FeaturedDeepHalo>(*this);
}

ad::Var FeaturedDeepHalo::var(ad::Tape& tape, const std::string& name) {
  return tape.parameter(parameter(name));
}

ad::Var FeaturedDeepHalo::embed(ad::Tape& tape, const Batch& batch) {
  if (batch.features.rows() != static_cast<std::size_t>(config_.input_dim)) {
    throw DimensionError("featured model expects " + std::to_string(config_.input_dim) +
                         " feature rows, batch has " + std::to_string(batch.features.rows()));
  }
  const ad::Var x = tape.constant(batch.features);
  if (config_.embedding == Embedding::kIdentity) return x;
  ad::Var h = ad::relu(ad::add_col_broadcast(ad::matmul(var(tape, "embed.W1"), x), var(tape, "embed.b1")));
  h = ad::relu(ad::add_col_broadcast(ad::matmul(var(tape, "embed.W2"), h), var(tape, "embed.b2")));
  h = ad::add_col_broadcast(ad::matmul(var(tape, "embed.W3"), h), var(tape, "embed.b3"));
  h = ad::layer_norm(h, var(tape, "embed.ln_gain"), var(tape, "embed.ln_bias"));
  return ad::mul_row_broadcast(h, tape.constant(batch.flat_mask));
}

ad::Var FeaturedDeepHalo::head(ad::Tape& tape, int layer, int h, ad::Var z0) {
  const std::string pre = layer_prefix(layer);
  const std::string hp = pre + "head" + std::to_string(h) + ".";
  if (config_.head == HeadKind::kDiagonal) return ad::mul_col_broadcast(z0, var(tape, hp + "q"));
  ad::Var t = ad::relu(ad::add_col_broadcast(ad::matmul(var(tape, hp + "U"), z0), var(tape, hp + "c")));
  t = ad::add_col_broadcast(ad::matmul(var(tape, pre + "V"), t), var(tape, pre + "e"));
  return ad::layer_norm(t, var(tape, pre + "ln_gain"), var(tape, pre + "ln_bias"));
}

ad::Var FeaturedDeepHalo::utilities(ad::Tape& tape, const Batch& batch) {
  const ad::Var fm = tape.constant(batch.flat_mask);
  const ad::Var z0 = embed(tape, batch);
  Matrix counts(1, batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) counts[b] = batch.set_sizes[b];
  const ad::Var count_row = tape.constant(std::move(counts));

  ad::Var z = z0;
  for (int l = 1; l <= config_.depth; ++l) {
    const ad::Var s = config_.sigma == Activation::kQuadratic ? ad::elementwise_square(z) : z;
    ad::Var summary = ad::mean_over_columns(ad::matmul(var(tape, layer_prefix(l) + "W"), s),
                                            batch.flat_mask, batch.width);
    if (config_.aggregation == Aggregation::kSum) summary = ad::mul_row_broadcast(summary, count_row);
    const ad::Var spread = ad::repeat_columns(summary, batch.width);

    ad::Var update;
    if (config_.variant == FeaturedVariant::kResNet) {
      update = spread;
    } else {
      for (int h = 0; h < config_.heads; ++h) {
        const ad::Var term = ad::mul_row_broadcast(head(tape, l, h, z0),
                                                   ad::row(spread, static_cast<std::size_t>(h)));
        update = h == 0 ? term : ad::add(update, term);
      }
      update = ad::scale(update, 1.0 / config_.heads);
    }
    z = ad::mul_row_broadcast(ad::add(z, update), fm);
  }
  const ad::Var u = ad::matmul(ad::transpose(var(tape, "beta")), z);
  const ad::Var grid = ad::transpose(ad::reshape(u, batch.size, batch.width));
  return apply_dummy_mask(grid, batch.mask);
}

}  // namespace deephalo
