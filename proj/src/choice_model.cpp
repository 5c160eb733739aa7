#include "deephalo/choice_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deephalo/errors.hpp"

namespace deephalo {

namespace {

void fill_slots(Batch& b, std::size_t col, const std::vector<int>& items) {
  for (std::size_t s = 0; s < items.size(); ++s) {
    b.items[s * b.size + col] = items[s];
    b.mask(s, col) = 1.0;
    b.flat_mask[col * b.width + s] = 1.0;
    if (b.universe > 0) {
      const int id = items[s];
      if (id < 0 || id >= b.universe) {
        throw DataError("item id " + std::to_string(id) + " outside universe of " +
                        std::to_string(b.universe));
      }
      b.presence(static_cast<std::size_t>(id), col) = 1.0;
    }
  }
  b.set_sizes[col] = static_cast<double>(items.size());
}

void init_batch(Batch& b, std::size_t size, std::size_t width, int universe) {
  b.size = size;
  b.width = width;
  b.universe = universe;
  b.items.assign(size * width, data::kNullItem);
  b.mask = Matrix(width, size);
  b.flat_mask = Matrix(1, size * width);
  b.presence = universe > 0 ? Matrix(static_cast<std::size_t>(universe), size) : Matrix();
  b.chosen_slot.assign(size, -1);
  b.set_sizes.assign(size, 0.0);
}

}  // namespace

Batch make_batch(const data::Dataset& d, std::span<const std::size_t> indices,
                 std::size_t width) {
  if (width == 0) width = d.max_set_size;
  Batch b;
  init_batch(b, indices.size(), width, d.universe_size);
  if (d.featured()) b.features = Matrix(static_cast<std::size_t>(d.feature_dim), b.size * width);
  for (std::size_t col = 0; col < indices.size(); ++col) {
    const auto& o = d.observations.at(indices[col]);
    if (o.set.size() == 0) throw DataError("empty choice set in batch");
    if (o.set.size() > width) {
      throw DataError("set of size " + std::to_string(o.set.size()) +
                      " does not fit padded width " + std::to_string(width));
    }
    fill_slots(b, col, o.set.items);
    const int slot = o.set.slot_of(o.chosen);
    if (slot < 0) throw DataError("chosen item " + std::to_string(o.chosen) + " not in its set");
    b.chosen_slot[col] = slot;
    if (d.featured()) {
      for (std::size_t r = 0; r < o.features.rows(); ++r)
        for (std::size_t s = 0; s < o.set.size(); ++s)
          b.features(r, col * width + s) = o.features(r, s);
    }
  }
  return b;
}

Batch make_set_batch(const std::vector<std::vector<int>>& sets, int universe,
                     const Matrix& item_features, std::size_t width) {
  if (width == 0) {
    for (const auto& s : sets) width = std::max(width, s.size());
  }
  Batch b;
  init_batch(b, sets.size(), width, universe);
  const bool featured = !item_features.empty();
  if (featured) b.features = Matrix(item_features.cols(), b.size * width);
  for (std::size_t col = 0; col < sets.size(); ++col) {
    const auto& items = sets[col];
    if (items.empty()) throw DegenerateSetError("empty choice set");
    if (items.size() > width) throw DataError("set does not fit padded width");
    fill_slots(b, col, items);
    if (featured) {
      for (std::size_t s = 0; s < items.size(); ++s) {
        const int id = items[s];
        if (id < 0 || static_cast<std::size_t>(id) >= item_features.rows()) {
          throw DataError("no feature row for item " + std::to_string(id));
        }
        for (std::size_t r = 0; r < item_features.cols(); ++r)
          b.features(r, col * width + s) = item_features(static_cast<std::size_t>(id), r);
      }
    }
  }
  return b;
}

void ChoiceModel::check_compatible(const data::Dataset& d) const {
  const int u = universe_size();
  if (u > 0 && d.universe_size > u) {
    throw DataError("dataset universe of " + std::to_string(d.universe_size) +
                    " items exceeds the model universe of " + std::to_string(u));
  }
  if (feature_dim() != d.feature_dim) {
    throw DataError(kind() + " model expects " + std::to_string(feature_dim()) +
                    " feature rows per item but the dataset has " +
                    std::to_string(d.feature_dim));
  }
}

std::size_t ChoiceModel::parameter_count() {
  std::size_t n = 0;
  for (const auto* p : parameters())
    if (p->trainable) n += p->value.size();
  return n;
}

void ChoiceModel::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::vector<double> choice_probabilities(std::span<const double> utilities) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double u : utilities)
    if (std::isfinite(u)) mx = std::max(mx, u);
  if (!std::isfinite(mx)) throw DegenerateSetError("no finite utility in the set");
  std::vector<double> p(utilities.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(utilities[i])) continue;
    p[i] = std::exp(utilities[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<std::vector<double>> predict_probabilities(ChoiceModel& model, const Batch& batch) {
  ad::Tape tape(ad::GradMode::kDisabled);
  const ad::Var u = model.utilities(tape, batch);
  const ad::Var p = ad::masked_softmax(u, batch.mask);
  std::vector<std::vector<double>> out(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const auto n = static_cast<std::size_t>(batch.set_sizes[b]);
    out[b].resize(n);
    for (std::size_t s = 0; s < n; ++s) out[b][s] = p.value()(s, b);
  }
  return out;
}

std::vector<double> set_utilities(ChoiceModel& model, const std::vector<int>& set,
                                  const Matrix& item_features) {
  const int universe = model.universe_size();
  const Batch batch = make_set_batch({set}, universe, item_features);
  ad::Tape tape(ad::GradMode::kDisabled);
  const ad::Var u = model.utilities(tape, batch);
  std::vector<double> out(set.size());
  for (std::size_t s = 0; s < set.size(); ++s) out[s] = u.value()(s, 0);
  return out;
}

ad::Var apply_dummy_mask(ad::Var u, const Matrix& mask) {
  Matrix offset(mask.rows(), mask.cols());
  for (std::size_t i = 0; i < mask.size(); ++i)
    offset[i] = mask[i] != 0.0 ? 0.0 : ad::kMaskedUtility;
  return ad::add(u, u.tape()->constant(std::move(offset)));
}

std::vector<Matrix> snapshot(ChoiceModel& model) {
  std::vector<Matrix> out;
  for (const auto* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore(ChoiceModel& model, const std::vector<Matrix>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) throw ModelError("snapshot does not match model");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace deephalo
