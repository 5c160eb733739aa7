#pragma once

// Choice observations, padding masks, CSV formats, and data generators.
//
// Item ids are 0-based everywhere. A choice set lists its items in slot order;
// when a batch is assembled, sets are padded to a common width with
// kNullItem slots whose mask entry is 0 and whose feature columns are zero.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "deephalo/matrix.hpp"

namespace deephalo::data {

inline constexpr int kNullItem = -1;

struct ChoiceSet {
  std::vector<int> items;

  std::size_t size() const { return items.size(); }
  bool contains(int item) const;
  /// Slot holding `item`, or -1.
  int slot_of(int item) const;
  /// Item ids followed by kNullItem up to `width`.
  std::vector<int> padded(std::size_t width) const;
  /// 1 x width row with 1 for real slots.
  Matrix mask(std::size_t width) const;
};

struct Observation {
  ChoiceSet set;
  int chosen = kNullItem;
  /// Feature columns for the real slots (d x |set|); empty for featureless data.
  /// Shared features, when present, are already stacked below item features.
  Matrix features;

  /// d x width with zero columns in dummy slots.
  Matrix padded_features(std::size_t width) const;
};

enum class Split : std::uint8_t { kTrain, kVal, kTest };

const char* split_name(Split s);

struct Dataset {
  std::vector<Observation> observations;
  int universe_size = 0;
  /// Effective feature rows per item (item + shared); 0 for featureless data.
  int feature_dim = 0;
  std::size_t max_set_size = 0;
  /// One tag per observation; empty means everything is training data.
  std::vector<Split> splits;
  /// Item feature table (universe_size x item feature count) for featured data.
  Matrix item_features;

  std::size_t size() const { return observations.size(); }
  bool empty() const { return observations.empty(); }
  bool featured() const { return feature_dim > 0; }
  bool has_split(Split s) const;
  /// Observation indices with the given tag (all indices for kTrain when untagged).
  std::vector<std::size_t> indices(Split s) const;
  std::vector<std::size_t> all_indices() const;

  /// Recomputes max_set_size and checks every invariant; throws DataError.
  void validate() const;
  void refresh_shape();
};

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices);

/// Set-level probabilities aligned with the item order of `items`.
struct SetProbabilities {
  std::vector<int> items;
  std::vector<double> probabilities;
};
using ProbabilityTable = std::vector<SetProbabilities>;

// ---- CSV formats -----------------------------------------------------------

/// `set,choice` rows, set = semicolon-joined ids. `#` lines are comments.
/// universe_size defaults to max id + 1.
Dataset read_featureless_csv(std::istream& in, const std::string& source = "<stream>",
                             std::optional<int> universe_size = std::nullopt);
Dataset load_featureless_csv(const std::string& path,
                             std::optional<int> universe_size = std::nullopt);
void write_featureless_csv(const Dataset& d, std::ostream& out);
void save_featureless_csv(const Dataset& d, const std::string& path);

/// Items file `item_id,f1..fd`; observations `set,choice,s1..sk`. Shared
/// values are replicated below the item features of every real slot.
Dataset read_featured_csv(std::istream& items, std::istream& observations,
                          const std::string& source = "<stream>");
Dataset load_featured_csv(const std::string& items_path, const std::string& obs_path);

/// `set,probabilities` rows, both fields semicolon-joined.
ProbabilityTable read_probability_table(std::istream& in, const std::string& source = "<stream>");
ProbabilityTable load_probability_table(const std::string& path);
void write_probability_table(const ProbabilityTable& table, std::ostream& out);
void save_probability_table(const ProbabilityTable& table, const std::string& path);

// ---- split manifests -------------------------------------------------------

/// Reads `{"train": [...], "val": [...], "test": [...]}` and tags `d`.
/// Indices not listed remain training data.
void apply_split_manifest(Dataset& d, const std::string& json_text);
std::string split_manifest_json(const Dataset& d);
/// Seeded shuffle then contiguous train/val/test blocks.
void assign_random_split(Dataset& d, double train_fraction, double val_fraction,
                         std::uint64_t seed);

// ---- fixtures and generators ----------------------------------------------

/// Four-drink market-share table. Ids: 0 Pepsi, 1 Coke, 2 7-Up, 3 Sprite
/// (labelled 1..4 in the original presentation).
ProbabilityTable beverage_fixture();
std::vector<std::string> beverage_names();

/// n_per_set i.i.d. categorical draws per set. Throws DataError on negative
/// probabilities or a sum further than 1e-9 from 1.
Dataset sample_choices(const ProbabilityTable& table, std::size_t n_per_set, std::uint64_t seed,
                       std::optional<int> universe_size = std::nullopt);

struct SyntheticData {
  Dataset dataset;
  ProbabilityTable truth;
};

/// Probability vectors uniform on the simplex (normalized Exp(1) draws) for
/// `sets` distinct m-subsets of a J-universe, or all C(J, m) when sets == 0.
SyntheticData gen_synthetic_simplex(int universe, int set_size, std::size_t sets,
                                    std::size_t n_per_set, std::uint64_t seed);

/// Observed choice frequencies per distinct set. Sets are keyed by their
/// sorted items and listed in ascending lexicographic order.
ProbabilityTable empirical_frequencies(const Dataset& d);

std::uint64_t binomial(int n, int k);

}  // namespace deephalo::data
