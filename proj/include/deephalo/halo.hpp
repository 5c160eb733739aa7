#pragma once

// Context effects by exact inclusion-exclusion over subsets.
//
//   v_j(T)    = Σ_{R⊆T} (−1)^{|T|−|R|} u_j(R ∪ {j})
//   u_j(S)    = Σ_{T⊆S∖{j}} v_j(T)
//   α_jk(T)   = (v_j(T) + v_j(T∪{k})) − (v_k(T) + v_k(T∪{j}))
//
// Sets are passed as sorted id lists; internally they are 64-bit masks.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deephalo/choice_model.hpp"

namespace deephalo::halo {

/// Anything that maps a set to per-item utilities.
class UtilitySource {
 public:
  virtual ~UtilitySource() = default;
  virtual int universe_size() const = 0;
  /// Utilities of the items of `set` (sorted ascending), in the same order.
  virtual std::vector<double> utilities(const std::vector<int>& set) = 0;
};

/// Evaluates a model on each set with only that set's items unmasked.
class ModelSource final : public UtilitySource {
 public:
  /// `universe` is required for featured models, which carry no universe of
  /// their own; `item_features` supplies their per-item columns.
  ModelSource(ChoiceModel& model, int universe = 0, Matrix item_features = Matrix());
  int universe_size() const override { return universe_; }
  std::vector<double> utilities(const std::vector<int>& set) override;

 private:
  ChoiceModel& model_;
  int universe_;
  Matrix item_features_;
};

class FunctionSource final : public UtilitySource {
 public:
  using Fn = std::function<std::vector<double>(const std::vector<int>&)>;
  FunctionSource(int universe, Fn fn) : universe_(universe), fn_(std::move(fn)) {}
  int universe_size() const override { return universe_; }
  std::vector<double> utilities(const std::vector<int>& set) override { return fn_(set); }

 private:
  int universe_;
  Fn fn_;
};

struct Limits {
  /// Largest |T| accepted by marginal_v (2^|T| evaluations).
  int max_subset_size = 12;
  /// Largest universe accepted by full-table extraction.
  int max_universe = 10;
  bool force = false;
};

/// Memoizing evaluator. Not thread-safe; one per thread.
class Analyzer {
 public:
  explicit Analyzer(UtilitySource& source, Limits limits = {});

  int universe_size() const { return universe_; }
  double utility(int j, const std::vector<int>& set);
  double marginal_v(int j, const std::vector<int>& source_set);
  double reconstruct_utility(int j, const std::vector<int>& set);
  double relative_alpha(int j, int k, const std::vector<int>& source_set);
  std::size_t evaluations() const { return evaluations_; }
  const Limits& limits() const { return limits_; }

 private:
  double utility_mask(int j, std::uint64_t mask);
  double marginal_mask(int j, std::uint64_t t);
  std::uint64_t to_mask(const std::vector<int>& set, const char* what) const;
  void check_subset_size(std::size_t n) const;

  UtilitySource& source_;
  Limits limits_;
  int universe_;
  std::unordered_map<std::uint64_t, std::vector<double>> cache_;
  std::size_t evaluations_ = 0;
};

/// Sorted subsets of `items` with size ≤ max_size, ordered by (size, lexicographic).
std::vector<std::vector<int>> subsets_by_size(const std::vector<int>& items, int max_size);

struct ContextEffect {
  int j = 0;
  std::vector<int> source;
  double v = 0.0;
};

struct ContextEffectTable {
  int universe = 0;
  int max_order = 0;
  std::vector<ContextEffect> entries;
  std::optional<double> find(int j, const std::vector<int>& source) const;
};

/// v_j(T) for every j and every T ⊆ universe∖{j} with |T| ≤ max_order.
ContextEffectTable context_effect_table(Analyzer& a, int max_order);

struct RelativeEffect {
  int j = 0;
  int k = 0;
  std::vector<int> source;
  double alpha = 0.0;
};

struct RelativeHaloTable {
  int universe = 0;
  int max_order = 0;
  /// Pairs j<k in lexicographic order; within a pair, T by (|T|, lexicographic).
  std::vector<RelativeEffect> entries;

  std::optional<double> find(int j, int k, const std::vector<int>& source) const;
  bool operator==(const RelativeHaloTable& other) const;
};

/// α_jk(T) for every pair j<k and T ⊆ universe∖{j,k} with |T| ≤ max_order.
/// `only_pair` restricts the output to one (unordered) pair.
RelativeHaloTable full_relative_table(Analyzer& a, int max_order,
                                      std::optional<std::pair<int, int>> only_pair = std::nullopt);

/// CSV `pair_j,pair_k,source_set,alpha`; source_set semicolon-joined, empty for ∅.
void write_alpha_csv(const RelativeHaloTable& table, std::ostream& out);
void save_alpha_csv(const RelativeHaloTable& table, const std::string& path);
RelativeHaloTable read_alpha_csv(std::istream& in, const std::string& source = "<stream>");
RelativeHaloTable load_alpha_csv(const std::string& path);

/// Self-contained SVG heatmap: one row per pair, one column per source set
/// (ordered by size then lexicographically), blank where the set meets the
/// pair. Blue for negative, red for positive, numeric label in each cell.
std::string render_heatmap_svg(const RelativeHaloTable& table,
                               const std::vector<std::string>& labels = {});
void save_heatmap_svg(const RelativeHaloTable& table, const std::string& path,
                      const std::vector<std::string>& labels = {});

/// Σ_{q=2}^{n} C(n,q)(q−1). Throws AnalysisError for n < 2.
std::uint64_t identifiability_count(int n);
/// Counts, for every subset of size q ≥ 2, the q−1 differences (first item
/// against each other item) that span its utility gaps.
std::uint64_t identifiability_count_enumerated(int n);

std::string format_set(const std::vector<int>& set, char sep = ';');

}  // namespace deephalo::halo
