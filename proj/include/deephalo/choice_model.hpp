#pragma once

// Common interface for choice models and the padded batch layout they consume.
//
// Batch layout: utilities and masks are width x size (slot-major rows, one
// column per observation). Featured inputs are d x (size * width) with the
// slots of observation b in columns b*width .. b*width + width - 1.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "deephalo/autodiff.hpp"
#include "deephalo/choice_data.hpp"
#include "deephalo/matrix.hpp"

namespace deephalo {

struct Batch {
  std::size_t size = 0;
  std::size_t width = 0;
  int universe = 0;
  /// items[s * size + b]; kNullItem in dummy slots.
  std::vector<int> items;
  /// width x size, 1 for real slots.
  Matrix mask;
  /// universe x size indicator of each set (empty when universe is 0).
  Matrix presence;
  /// feature_dim x (size * width); empty for featureless batches.
  Matrix features;
  /// 1 x (size * width) real-slot flags in feature-column order.
  Matrix flat_mask;
  /// Chosen slot per observation, -1 when the batch carries no choices.
  std::vector<int> chosen_slot;
  /// |S| per observation.
  std::vector<double> set_sizes;
};

/// Batch over the given observations. width 0 means the dataset's max set size.
Batch make_batch(const data::Dataset& d, std::span<const std::size_t> indices,
                 std::size_t width = 0);

/// Batch over bare sets. Features, when needed, come from `item_features`
/// (universe x d_x) and must be non-empty for featured models.
Batch make_set_batch(const std::vector<std::vector<int>>& sets, int universe,
                     const Matrix& item_features = Matrix(), std::size_t width = 0);

class ChoiceModel {
 public:
  virtual ~ChoiceModel() = default;

  virtual std::string kind() const = 0;
  /// Universe size the model is tied to; 0 when any item ids are accepted.
  virtual int universe_size() const = 0;
  /// Feature rows expected per item; 0 for featureless models.
  virtual int feature_dim() const = 0;
  virtual std::vector<ad::Parameter*> parameters() = 0;
  virtual std::unique_ptr<ChoiceModel> clone() const = 0;

  /// width x size utilities; dummy slots hold ad::kMaskedUtility.
  virtual ad::Var utilities(ad::Tape& tape, const Batch& batch) = 0;

  /// Throws DataError when the dataset cannot be fed to this model.
  void check_compatible(const data::Dataset& d) const;
  /// Number of trainable scalar entries.
  std::size_t parameter_count();
  void zero_grad();
};

/// Softmax over finite entries; -inf entries get exactly 0. Throws
/// DegenerateSetError when nothing is finite.
std::vector<double> choice_probabilities(std::span<const double> utilities);

/// Per observation, probabilities over its real slots (no gradient).
std::vector<std::vector<double>> predict_probabilities(ChoiceModel& model, const Batch& batch);

/// Utilities of the items of one set in slot order (no gradient).
std::vector<double> set_utilities(ChoiceModel& model, const std::vector<int>& set,
                                  const Matrix& item_features = Matrix());

/// Adds kMaskedUtility to dummy slots of a width x size utility node.
ad::Var apply_dummy_mask(ad::Var u, const Matrix& mask);

/// Copies parameter values (same order as parameters()).
std::vector<Matrix> snapshot(ChoiceModel& model);
void restore(ChoiceModel& model, const std::vector<Matrix>& values);

}  // namespace deephalo
