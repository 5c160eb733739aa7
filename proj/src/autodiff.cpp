#include "deephalo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "deephalo/errors.hpp"

namespace deephalo::ad {

Parameter::Parameter(std::string name_, Matrix value_, bool trainable_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(value.rows(), value.cols()),
      trainable(trainable_) {}

const Matrix& Var::value() const { return tape_->value(index_); }
const Matrix& Var::grad() const { return tape_->grad(index_); }
bool Var::requires_grad() const { return tape_->requires_grad(index_); }

Tape::Tape(GradMode mode, bool accumulate_into_parameters)
    : mode_(mode), accumulate_into_parameters_(accumulate_into_parameters) {}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = mode_ == GradMode::kEnabled;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = mode_ == GradMode::kEnabled && p.trainable;
  n.param = &p;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn rule) {
  Node n;
  n.value = std::move(value);
  if (mode_ == GradMode::kEnabled) {
    for (const Var& p : parents) {
      if (p.tape() != this) throw Error("operand recorded on a different tape");
      if (nodes_[p.index()].requires_grad) n.requires_grad = true;
    }
  }
  if (n.requires_grad) n.rule = std::move(rule);
  return push(std::move(n));
}

Matrix& Tape::adjoint(std::size_t i) {
  Matrix& adj = adjoints_[i];
  if (adj.empty() && !nodes_[i].value.empty()) {
    adj = Matrix(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  return adj;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw Error("backward root belongs to a different tape");
  const Matrix& rv = nodes_[root.index()].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw DimensionError("backward requires a scalar (1x1) root, got " + rv.shape_string());
  }
  if (!nodes_[root.index()].requires_grad) return;

  adjoints_.assign(nodes_.size(), Matrix());
  adjoints_[root.index()] = Matrix(1, 1, 1.0);
  for (std::size_t k = root.index() + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (!node.requires_grad || adjoints_[k].empty()) continue;
    if (node.rule) node.rule(*this, adjoints_[k]);
  }
  for (std::size_t k = 0; k <= root.index(); ++k) {
    Node& node = nodes_[k];
    Matrix& adj = adjoints_[k];
    if (!node.requires_grad || adj.empty()) continue;
    if (node.param != nullptr && accumulate_into_parameters_) node.param->grad += adj;
    if (node.grad.empty()) {
      node.grad = std::move(adj);
    } else {
      node.grad += adj;
    }
  }
  adjoints_.clear();
}

void Tape::flush_parameter_gradients() {
  for (Node& node : nodes_) {
    if (node.param != nullptr && node.requires_grad && !node.grad.empty()) {
      node.param->grad += node.grad;
    }
  }
}

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw Error("operands must live on the same tape");
  }
  return *a.tape();
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + " shape mismatch: " + a.shape_string() +
                         " vs " + b.shape_string());
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul shape mismatch: " + av.shape_string() + " * " +
                         bv.shape_string());
  }
  Matrix out(av.rows(), bv.cols());
  matmul_accumulate(av, bv, out);
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) matmul_nt_accumulate(g, tp.value(ib), tp.adjoint(ia));
    if (tp.requires_grad(ib)) matmul_tn_accumulate(tp.value(ia), g, tp.adjoint(ib));
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.index();
  return t.record(deephalo::transpose(a.value()), {a}, [ia](Tape& tp, const Matrix& g) {
    tp.adjoint(ia) += deephalo::transpose(g);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.adjoint(ia) += g;
    if (tp.requires_grad(ib)) tp.adjoint(ib) += g;
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.adjoint(ia) += g;
    if (tp.requires_grad(ib)) tp.adjoint(ib) -= g;
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("hadamard", a.value(), b.value());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) {
      Matrix& da = tp.adjoint(ia);
      const Matrix& bv = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      Matrix& db = tp.adjoint(ib);
      const Matrix& av = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Tape& t = *a.tape();
  const std::size_t ia = a.index();
  return t.record(a.value() * c, {a}, [ia, c](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += c * g[i];
  });
}

Var elementwise_square(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value();
  for (double& v : out.data()) v *= v;
  const std::size_t ia = a.index();
  return t.record(std::move(out), {a}, [ia](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    const Matrix& av = tp.value(ia);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += 2.0 * av[i] * g[i];
  });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.index();
  return t.record(std::move(out), {a}, [ia](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    const Matrix& av = tp.value(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) da[i] += g[i];
    }
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.index();
  return t.record(Matrix(1, 1, s), {a}, [ia](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    for (double& v : da.data()) v += g[0];
  });
}

Var add_col_broadcast(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (bv.rows() != av.rows() || bv.cols() != 1) {
    throw DimensionError("add_col_broadcast expects " + std::to_string(av.rows()) +
                         "x1 operand, got " + bv.shape_string());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) += bv[i];
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.adjoint(ia) += g;
    if (tp.requires_grad(ib)) {
      Matrix& db = tp.adjoint(ib);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) db[i] += g(i, j);
    }
  });
}

Var mul_row_broadcast(Var a, Var r) {
  Tape& t = tape_of(a, r);
  const Matrix& av = a.value();
  const Matrix& rv = r.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("mul_row_broadcast expects 1x" + std::to_string(av.cols()) +
                         " operand, got " + rv.shape_string());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) *= rv[j];
  const std::size_t ia = a.index(), ir = r.index();
  return t.record(std::move(out), {a, r}, [ia, ir](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    const Matrix& rv = tp.value(ir);
    if (tp.requires_grad(ia)) {
      Matrix& da = tp.adjoint(ia);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) da(i, j) += g(i, j) * rv[j];
    }
    if (tp.requires_grad(ir)) {
      Matrix& dr = tp.adjoint(ir);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) dr[j] += g(i, j) * av(i, j);
    }
  });
}

Var mul_col_broadcast(Var a, Var c) {
  Tape& t = tape_of(a, c);
  const Matrix& av = a.value();
  const Matrix& cv = c.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) {
    throw DimensionError("mul_col_broadcast expects " + std::to_string(av.rows()) +
                         "x1 operand, got " + cv.shape_string());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) *= cv[i];
  const std::size_t ia = a.index(), ic = c.index();
  return t.record(std::move(out), {a, c}, [ia, ic](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    const Matrix& cv = tp.value(ic);
    if (tp.requires_grad(ia)) {
      Matrix& da = tp.adjoint(ia);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) da(i, j) += g(i, j) * cv[i];
    }
    if (tp.requires_grad(ic)) {
      Matrix& dc = tp.adjoint(ic);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) dc[i] += g(i, j) * av(i, j);
    }
  });
}

Var mean_over_columns(Var a, const Matrix& mask, std::size_t segment) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  const std::size_t n = av.cols();
  if (mask.rows() != 1 || mask.cols() != n) {
    throw DimensionError("mean_over_columns mask must be 1x" + std::to_string(n) +
                         ", got " + mask.shape_string());
  }
  const std::size_t width = segment == 0 ? n : segment;
  if (width == 0 || n % width != 0) {
    throw DimensionError("mean_over_columns: " + std::to_string(n) +
                         " columns do not split into segments of " + std::to_string(width));
  }
  const std::size_t groups = n / width;
  std::vector<double> counts(groups, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t c = g * width; c < (g + 1) * width; ++c) counts[g] += mask[c] != 0.0;
    if (counts[g] == 0.0) {
      throw DegenerateSetError("mean over an all-masked set (segment " + std::to_string(g) +
                               ")");
    }
  }
  Matrix out(av.rows(), groups);
  std::vector<double> buf;
  buf.reserve(width);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t g = 0; g < groups; ++g) {
      buf.clear();
      for (std::size_t c = g * width; c < (g + 1) * width; ++c) {
        if (mask[c] != 0.0) buf.push_back(av(i, c));
      }
      std::sort(buf.begin(), buf.end());
      double s = 0.0;
      for (double v : buf) s += v;
      out(i, g) = s / counts[g];
    }
  }
  const std::size_t ia = a.index();
  return t.record(std::move(out), {a},
                  [ia, mask, width, counts = std::move(counts)](Tape& tp, const Matrix& g) {
                    Matrix& da = tp.adjoint(ia);
                    for (std::size_t i = 0; i < da.rows(); ++i) {
                      for (std::size_t c = 0; c < da.cols(); ++c) {
                        if (mask[c] == 0.0) continue;
                        const std::size_t grp = c / width;
                        da(i, c) += g(i, grp) / counts[grp];
                      }
                    }
                  });
}

Var repeat_columns(Var a, std::size_t times) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols() * times);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j)
      for (std::size_t k = 0; k < times; ++k) out(i, j * times + k) = av(i, j);
  const std::size_t ia = a.index();
  return t.record(std::move(out), {a}, [ia, times](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    for (std::size_t i = 0; i < da.rows(); ++i)
      for (std::size_t j = 0; j < da.cols(); ++j)
        for (std::size_t k = 0; k < times; ++k) da(i, j) += g(i, j * times + k);
  });
}

Var row(Var a, std::size_t r) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  if (r >= av.rows()) {
    throw DimensionError("row " + std::to_string(r) + " out of range for " +
                         av.shape_string());
  }
  Matrix out(1, av.cols());
  for (std::size_t j = 0; j < av.cols(); ++j) out[j] = av(r, j);
  const std::size_t ia = a.index();
  return t.record(std::move(out), {a}, [ia, r](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    for (std::size_t j = 0; j < g.cols(); ++j) da(r, j) += g[j];
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  if (rows * cols != av.size()) {
    throw DimensionError("cannot reshape " + av.shape_string() + " to " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix out(rows, cols, av.storage());
  const std::size_t ia = a.index();
  return t.record(std::move(out), {a}, [ia](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
  });
}

Var gather_rows(Var a, std::span<const int> index, std::size_t out_rows) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  const std::size_t n = av.cols();
  if (index.size() != out_rows * n) {
    throw DimensionError("gather_rows index length " + std::to_string(index.size()) +
                         " does not match " + std::to_string(out_rows) + "x" +
                         std::to_string(n));
  }
  Matrix out(out_rows, n);
  for (std::size_t s = 0; s < out_rows; ++s) {
    for (std::size_t b = 0; b < n; ++b) {
      const int r = index[s * n + b];
      if (r < 0) continue;
      if (static_cast<std::size_t>(r) >= av.rows()) {
        throw DimensionError("gather_rows index " + std::to_string(r) + " out of range for " +
                             av.shape_string());
      }
      out(s, b) = av(static_cast<std::size_t>(r), b);
    }
  }
  const std::size_t ia = a.index();
  std::vector<int> idx(index.begin(), index.end());
  return t.record(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    const std::size_t n = g.cols();
    for (std::size_t s = 0; s < g.rows(); ++s)
      for (std::size_t b = 0; b < n; ++b) {
        const int r = idx[s * n + b];
        if (r >= 0) da(static_cast<std::size_t>(r), b) += g(s, b);
      }
  });
}

Var pick(Var a, std::span<const int> rows) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  if (rows.size() != av.cols()) {
    throw DimensionError("pick needs one row index per column of " + av.shape_string());
  }
  Matrix out(1, av.cols());
  for (std::size_t b = 0; b < av.cols(); ++b) {
    if (rows[b] < 0 || static_cast<std::size_t>(rows[b]) >= av.rows()) {
      throw DimensionError("pick row " + std::to_string(rows[b]) + " out of range for " +
                           av.shape_string());
    }
    out[b] = av(static_cast<std::size_t>(rows[b]), b);
  }
  const std::size_t ia = a.index();
  std::vector<int> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    for (std::size_t b = 0; b < idx.size(); ++b)
      da(static_cast<std::size_t>(idx[b]), b) += g[b];
  });
}

Var layer_norm(Var a, Var gain, Var bias) {
  Tape& t = tape_of(a, gain);
  tape_of(a, bias);
  const Matrix& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (gain.value().rows() != m || gain.value().cols() != 1 || !gain.value().same_shape(bias.value())) {
    throw DimensionError("layer_norm affine parameters must be " + std::to_string(m) +
                         "x1, got " + gain.value().shape_string() + " and " +
                         bias.value().shape_string());
  }
  Matrix normalized(m, n);
  std::vector<double> inv_std(n);
  for (std::size_t c = 0; c < n; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += av(i, c);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (av(i, c) - mean) * (av(i, c) - mean);
    var /= static_cast<double>(m);
    inv_std[c] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t i = 0; i < m; ++i) normalized(i, c) = (av(i, c) - mean) * inv_std[c];
  }
  Matrix out(m, n);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < n; ++c) out(i, c) = gv[i] * normalized(i, c) + bv[i];

  const std::size_t ia = a.index(), ig = gain.index(), ib = bias.index();
  return t.record(
      std::move(out), {a, gain, bias},
      [ia, ig, ib, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          Tape& tp, const Matrix& g) {
        const std::size_t m = g.rows(), n = g.cols();
        if (tp.requires_grad(ig)) {
          Matrix& dg = tp.adjoint(ig);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t c = 0; c < n; ++c) dg[i] += g(i, c) * normalized(i, c);
        }
        if (tp.requires_grad(ib)) {
          Matrix& db = tp.adjoint(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t c = 0; c < n; ++c) db[i] += g(i, c);
        }
        if (tp.requires_grad(ia)) {
          Matrix& da = tp.adjoint(ia);
          const Matrix& gv = tp.value(ig);
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t c = 0; c < n; ++c) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
              const double d = g(i, c) * gv[i];
              mean_d += d;
              mean_dx += d * normalized(i, c);
            }
            mean_d *= inv_m;
            mean_dx *= inv_m;
            for (std::size_t i = 0; i < m; ++i) {
              const double d = g(i, c) * gv[i];
              da(i, c) += inv_std[c] * (d - mean_d - normalized(i, c) * mean_dx);
            }
          }
        }
      });
}

namespace {

// Column-wise masked softmax values.
Matrix softmax_columns(const Matrix& a, const Matrix& mask) {
  require_same_shape("masked softmax", a, mask);
  Matrix p(a.rows(), a.cols());
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.rows(); ++i)
      if (mask(i, c) != 0.0) mx = std::max(mx, a(i, c));
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw DegenerateSetError("softmax over a column with no real entries");
    }
    double z = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      if (mask(i, c) == 0.0) continue;
      p(i, c) = std::exp(a(i, c) - mx);
      z += p(i, c);
    }
    for (std::size_t i = 0; i < a.rows(); ++i) p(i, c) /= z;
  }
  return p;
}

}  // namespace

Var masked_softmax(Var a, const Matrix& mask) {
  Tape& t = *a.tape();
  Matrix p = softmax_columns(a.value(), mask);
  const std::size_t ia = a.index();
  Matrix probs = p;
  return t.record(std::move(p), {a}, [ia, probs = std::move(probs)](Tape& tp, const Matrix& g) {
    Matrix& da = tp.adjoint(ia);
    for (std::size_t c = 0; c < g.cols(); ++c) {
      double inner = 0.0;
      for (std::size_t i = 0; i < g.rows(); ++i) inner += probs(i, c) * g(i, c);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        if (probs(i, c) != 0.0) da(i, c) += probs(i, c) * (g(i, c) - inner);
      }
    }
  });
}

Var masked_log_softmax(Var a, const Matrix& mask) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix p = softmax_columns(av, mask);
  Matrix out(av.rows(), av.cols(), -std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < av.cols(); ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < av.rows(); ++i)
      if (mask(i, c) != 0.0) mx = std::max(mx, av(i, c));
    double z = 0.0;
    for (std::size_t i = 0; i < av.rows(); ++i)
      if (mask(i, c) != 0.0) z += std::exp(av(i, c) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < av.rows(); ++i)
      if (mask(i, c) != 0.0) out(i, c) = av(i, c) - lse;
  }
  const std::size_t ia = a.index();
  return t.record(std::move(out), {a},
                  [ia, mask, p = std::move(p)](Tape& tp, const Matrix& g) {
                    Matrix& da = tp.adjoint(ia);
                    for (std::size_t c = 0; c < g.cols(); ++c) {
                      double total = 0.0;
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        if (mask(i, c) != 0.0) total += g(i, c);
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        if (mask(i, c) != 0.0) da(i, c) += g(i, c) - p(i, c) * total;
                    }
                  });
}

}  // namespace deephalo::ad
