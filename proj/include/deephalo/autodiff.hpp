#pragma once

// Tape-based reverse-mode automatic differentiation over dense matrices.
//
// A Tape records one forward pass. Values are immutable once recorded;
// backward() walks the tape in reverse recording order, which is a
// topological order of the computation graph.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "deephalo/matrix.hpp"

namespace deephalo::ad {

/// Persistent trainable weight. Lives outside any tape; a tape leaf bound to
/// it accumulates into `grad` on backward.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value, bool trainable = true);

  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  void zero_grad() { grad.fill(0.0); }
};

enum class GradMode { kEnabled, kDisabled };

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient accumulated by backward(); zero-shaped before the first call.
  const Matrix& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  /// Backward rule: receives the tape and the node's upstream adjoint.
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  explicit Tape(GradMode mode = GradMode::kEnabled,
                bool accumulate_into_parameters = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  Var parameter(Parameter& p);

  /// Records a derived node. The rule is dropped when no parent requires grad.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn rule);

  /// Propagates d(root)/d(node) into every node that requires grad.
  /// Repeated calls accumulate. Root must be 1x1.
  void backward(Var root);

  /// For deferred parameter accumulation: adds each parameter leaf's gradient
  /// into its Parameter, in recording order.
  void flush_parameter_gradients();

  const Matrix& value(std::size_t i) const { return nodes_[i].value; }
  const Matrix& grad(std::size_t i) const { return nodes_[i].grad; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  GradMode mode() const { return mode_; }

  /// Adjoint buffer of node i during backward(); zero-initialized on first use.
  Matrix& adjoint(std::size_t i);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn rule;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;
  GradMode mode_;
  bool accumulate_into_parameters_;
};

/// Additive stand-in for -inf inside differentiable paths.
inline constexpr double kMaskedUtility = -1e30;
inline constexpr double kLayerNormEpsilon = 1e-5;

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double c);
Var elementwise_square(Var a);
Var relu(Var a);
Var sum(Var a);

/// a (m x n) + b (m x 1) broadcast over columns.
Var add_col_broadcast(Var a, Var b);
/// a (m x n) scaled per column by r (1 x n).
Var mul_row_broadcast(Var a, Var r);
/// a (m x n) scaled per row by c (m x 1).
Var mul_col_broadcast(Var a, Var c);

/// Mean over unmasked columns. `mask` is 1 x n with 0/1 entries. With
/// `segment` > 0 the columns are split into consecutive groups of that width
/// and one mean is produced per group (m x n/segment). Summation within a
/// group runs over values in ascending order so the result does not depend on
/// the column order. Throws DegenerateSetError for an all-masked group.
Var mean_over_columns(Var a, const Matrix& mask, std::size_t segment = 0);

/// Repeats each column `times` times consecutively (m x n -> m x n*times).
Var repeat_columns(Var a, std::size_t times);

/// Row slice (1 x n).
Var row(Var a, std::size_t i);

/// Same data, new shape (row-major order preserved).
Var reshape(Var a, std::size_t rows, std::size_t cols);

/// out(s, b) = a(index[s * n + b], b), or 0 where the index is negative.
Var gather_rows(Var a, std::span<const int> index, std::size_t out_rows);

/// out(0, b) = a(rows[b], b).
Var pick(Var a, std::span<const int> rows);

/// Column-wise layer normalization with affine gain and bias (both m x 1).
Var layer_norm(Var a, Var gain, Var bias);

/// Column-wise softmax restricted to entries with mask 1; masked entries are 0.
Var masked_softmax(Var a, const Matrix& mask);
/// Column-wise log-softmax restricted to unmasked entries; masked entries -inf.
Var masked_log_softmax(Var a, const Matrix& mask);

}  // namespace deephalo::ad
