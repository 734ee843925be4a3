/* Copyright 2026 The latmem Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Dense float64 tensors (rank 0, 1 or 2) with define-by-run reverse-mode
// automatic differentiation.
//
// A Tensor is a reference handle: copies share storage and gradient. Every
// operation that has at least one input requiring a gradient records a node
// holding its backward closure; backward() replays the recorded nodes in
// reverse creation order. The graph is owned by the handles, so dropping the
// loss frees the tape.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "latmem/errors.hpp"

namespace latmem {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Identifies a primitive for fault injection in gradient-check tests.
enum class OpKind {
  kMatmul, kAdd, kSub, kMul, kDiv, kScale, kExp, kLog, kTanh, kGelu,
  kSoftmax, kLayerNorm, kEmbedding, kConcat, kSlice, kSum, kMean,
  kTranspose, kMaskedFill, kCount
};

inline const char* op_name(OpKind k) {
  static constexpr const char* kNames[] = {
      "matmul", "add", "sub", "mul", "div", "scale", "exp", "log", "tanh",
      "gelu", "softmax", "layer_norm", "embedding", "concat", "slice", "sum",
      "mean", "transpose", "masked_fill"};
  return kNames[static_cast<int>(k)];
}

inline std::optional<OpKind> op_from_name(const std::string& name) {
  for (int i = 0; i < static_cast<int>(OpKind::kCount); ++i) {
    if (name == op_name(static_cast<OpKind>(i))) return static_cast<OpKind>(i);
  }
  return std::nullopt;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t order = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_order() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

inline thread_local bool grad_disabled = false;
inline thread_local int corrupted_op = -1;

// Scale applied to the gradient a primitive emits; 1 unless a test hook
// corrupts that primitive.
inline double backward_gain(OpKind k) {
  return corrupted_op == static_cast<int>(k) ? 1.5 : 1.0;
}

}  // namespace detail

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_disabled) { detail::grad_disabled = true; }
  ~NoGradGuard() { detail::grad_disabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Test hook: makes the backward of one primitive emit a wrong gradient.
class CorruptBackwardGuard {
 public:
  explicit CorruptBackwardGuard(OpKind k) : prev_(detail::corrupted_op) {
    detail::corrupted_op = static_cast<int>(k);
  }
  ~CorruptBackwardGuard() { detail::corrupted_op = prev_; }
  CorruptBackwardGuard(const CorruptBackwardGuard&) = delete;
  CorruptBackwardGuard& operator=(const CorruptBackwardGuard&) = delete;

 private:
  int prev_;
};

class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.size() > 2) {
      throw DimensionError("tensor rank " + std::to_string(shape.size()) +
                           " not supported (max 2)");
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->order = detail::next_order();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{}, {v}, requires_grad);
  }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v), requires_grad);
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> d;
    d.reserve(m * n);
    for (const auto& r : rows) {
      if (r.size() != n) throw DimensionError("ragged matrix literal");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor(Shape{m, n}, std::move(d), requires_grad);
  }
  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Rows/cols view: rank 0 is 1x1, rank 1 is a 1xn row.
  std::size_t rows() const { return rank() == 2 ? shape()[0] : 1; }
  std::size_t cols() const {
    return rank() == 2 ? shape()[1] : (rank() == 1 ? shape()[0] : 1);
  }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Zero-filled view when no gradient has been accumulated yet.
  std::span<const double> grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
  }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool is_leaf() const { return !node_->backward_fn; }

  double item() const {
    if (numel() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
  }
  double at(std::size_t i, std::size_t j) const { return node_->data[i * cols() + j]; }
  double& at(std::size_t i, std::size_t j) { return node_->data[i * cols() + j]; }

  // Same values, no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  if (grad_disabled) return false;
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Builds the output node; attaches the backward closure only when recording.
inline Tensor make_result(Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  bool record = false;
  if (!grad_disabled) {
    for (const Tensor& t : inputs) record = record || t.requires_grad();
  }
  if (record) {
    Node& n = out.node();
    n.requires_grad = true;
    n.parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n.parents.push_back(t.node_ptr());
    n.backward_fn = std::move(backward);
  }
  return out;
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

enum class Broadcast { kNone, kRow, kCol, kScalar };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.numel() == 1) return Broadcast::kScalar;
  if (b.rank() == 1 && a.rank() == 2 && b.shape()[0] == a.cols()) return Broadcast::kRow;
  if (b.rank() == 2 && a.rank() == 2 && b.shape()[0] == a.rows() && b.shape()[1] == 1) {
    return Broadcast::kCol;
  }
  if (b.rank() == 2 && a.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == a.cols()) {
    return Broadcast::kRow;
  }
  throw DimensionError(std::string(op) + ": cannot combine " + shape_str(a.shape()) +
                       " with " + shape_str(b.shape()));
}

inline std::size_t bindex(Broadcast k, std::size_t i, std::size_t j, std::size_t cols) {
  switch (k) {
    case Broadcast::kNone: return i * cols + j;
    case Broadcast::kRow: return j;
    case Broadcast::kCol: return i;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

// Shared driver for the broadcasting binary ops. `fwd(x, y)` is the value,
// `da(x, y, out)`/`db(x, y, out)` the partial derivatives.
template <typename Fwd, typename Da, typename Db>
Tensor binary(OpKind kind, const char* name, const Tensor& a, const Tensor& b,
              Fwd fwd, Da da, Db db) {
  const Broadcast bk = broadcast_kind(a, b, name);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = fwd(av[i * n + j], bv[bindex(bk, i, j, n)]);
    }
  }
  Node* an = &a.node();
  Node* bn = &b.node();
  return make_result(a.shape(), std::move(out), {a, b},
                     [=](Node& o) {
                       const double g = backward_gain(kind);
                       const auto& x = an->data;
                       const auto& y = bn->data;
                       if (an->requires_grad) {
                         auto& ga = an->grad_buffer();
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) {
                             const std::size_t p = i * n + j;
                             const std::size_t q = bindex(bk, i, j, n);
                             ga[p] += g * o.grad[p] * da(x[p], y[q], o.data[p]);
                           }
                         }
                       }
                       if (bn->requires_grad) {
                         auto& gb = bn->grad_buffer();
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) {
                             const std::size_t p = i * n + j;
                             const std::size_t q = bindex(bk, i, j, n);
                             gb[q] += g * o.grad[p] * db(x[p], y[q], o.data[p]);
                           }
                         }
                       }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary(OpKind kind, const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  Node* an = &a.node();
  return make_result(a.shape(), std::move(out), {a}, [=](Node& o) {
    const double g = backward_gain(kind);
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += g * o.grad[i] * deriv(an->data[i], o.data[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  if (m && n && k) {
    detail::MutMap(out.data(), m, n).noalias() =
        detail::ConstMap(a.values().data(), m, k) * detail::ConstMap(b.values().data(), k, n);
  }
  detail::Node* an = &a.node();
  detail::Node* bn = &b.node();
  return detail::make_result({m, n}, std::move(out), {a, b}, [=](detail::Node& o) {
    if (!m || !n || !k) return;
    const double g = detail::backward_gain(OpKind::kMatmul);
    detail::ConstMap dc(o.grad.data(), m, n);
    if (an->requires_grad) {
      detail::MutMap ga(an->grad_buffer().data(), m, k);
      ga.noalias() += g * (dc * detail::ConstMap(bn->data.data(), k, n).transpose());
    }
    if (bn->requires_grad) {
      detail::MutMap gb(bn->grad_buffer().data(), k, n);
      gb.noalias() += g * (detail::ConstMap(an->data.data(), m, k).transpose() * dc);
    }
  });
}

// Elementwise binary ops. `b` may broadcast as a row ([n] or [1 x n]), a
// column ([m x 1]) or a scalar against a.
inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::kAdd, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::kSub, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::kMul, "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::kDiv, "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(
      OpKind::kScale, a, [s](double x) { return s * x; },
      [s](double, double) { return s; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      OpKind::kExp, a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      OpKind::kLog, a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      OpKind::kTanh, a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

// Exact (erf) GELU.
inline Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary(
      OpKind::kGelu, a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

// Softmax along the last dimension (each row of a matrix).
inline Tensor softmax(const Tensor& a) {
  if (a.numel() == 0 || a.cols() == 0) {
    throw DimensionError("softmax: empty input " + shape_str(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.numel());
  const auto& x = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double* y = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(row[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  detail::Node* an = &a.node();
  return detail::make_result(a.shape(), std::move(out), {a}, [=](detail::Node& o) {
    const double g = detail::backward_gain(OpKind::kSoftmax);
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = o.data.data() + i * n;
      const double* dy = o.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g * y[j] * (dy[j] - dot);
    }
  });
}

// Row-wise layer normalisation with affine gain/bias of width cols().
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gain " +
                         shape_str(gamma.shape()) + " and bias " + shape_str(beta.shape()));
  }
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(m);
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xv.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += r[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (r[j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  detail::Node* xn = &x.node();
  detail::Node* gn = &gamma.node();
  detail::Node* bn = &beta.node();
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& o) {
        const double g = detail::backward_gain(OpKind::kLayerNorm);
        const auto& dy = o.grad;
        if (gn->requires_grad || bn->requires_grad) {
          auto& gg = gn->grad_buffer();
          auto& gb = bn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              gg[j] += g * dy[i * n + j] * xhat[i * n + j];
              gb[j] += g * dy[i * n + j];
            }
          }
        }
        if (xn->requires_grad) {
          auto& gx = xn->grad_buffer();
          const auto& gv2 = gn->data;
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = dy[i * n + j] * gv2[j];
              s1 += dxh;
              s2 += dxh * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = dy[i * n + j] * gv2[j];
              gx[i * n + j] += g * inv_std[i] * (dxh - inv_n * s1 - xhat[i * n + j] * inv_n * s2);
            }
          }
        }
      });
}

// Gathers rows of `table` ([V x d]) for each id.
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be a matrix");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= v) {
      throw DimensionError("embedding: id " + std::to_string(idx[r]) +
                           " out of range for table " + shape_str(table.shape()));
    }
    std::copy_n(table.values().data() + idx[r] * d, d, out.data() + r * d);
  }
  detail::Node* tn = &table.node();
  Shape shape{idx.size(), d};
  return detail::make_result(std::move(shape), std::move(out), {table},
                             [=, idx = std::move(idx)](detail::Node& o) {
                               const double g = detail::backward_gain(OpKind::kEmbedding);
                               auto& gt = tn->grad_buffer();
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                 for (std::size_t j = 0; j < d; ++j) {
                                   gt[idx[r] * d + j] += g * o.grad[r * d + j];
                                 }
                               }
                             });
}

// Concatenation of matrices along axis 0 (rows) or 1 (columns).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  std::size_t m = 0, n = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2) throw DimensionError("concat: inputs must be matrices");
  }
  if (axis == 0) {
    n = parts[0].cols();
    for (const Tensor& p : parts) {
      if (p.cols() != n) {
        throw DimensionError("concat rows: " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
      }
      m += p.rows();
    }
  } else {
    m = parts[0].rows();
    for (const Tensor& p : parts) {
      if (p.rows() != m) {
        throw DimensionError("concat cols: " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
      }
      n += p.cols();
    }
  }
  std::vector<double> out(m * n);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const auto& pv = p.values();
    if (axis == 0) {
      std::copy(pv.begin(), pv.end(), out.begin() + static_cast<std::ptrdiff_t>(off * n));
      off += p.rows();
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(pv.data() + i * p.cols(), p.cols(), out.data() + i * n + off);
      }
      off += p.cols();
    }
  }
  std::vector<detail::Node*> nodes;
  for (const Tensor& p : parts) nodes.push_back(&p.node());
  return detail::make_result(
      {m, n}, std::move(out), parts,
      [=, nodes = std::move(nodes), offsets = std::move(offsets)](detail::Node& o) {
        const double g = detail::backward_gain(OpKind::kConcat);
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          detail::Node* p = nodes[k];
          if (!p->requires_grad) continue;
          auto& gp = p->grad_buffer();
          const std::size_t pr = p->shape[0], pc = p->shape[1];
          for (std::size_t i = 0; i < pr; ++i) {
            for (std::size_t j = 0; j < pc; ++j) {
              const std::size_t src = axis == 0 ? (offsets[k] + i) * n + j
                                                : i * n + offsets[k] + j;
              gp[i * pc + j] += g * o.grad[src];
            }
          }
        }
      });
}

// Half-open range [begin, end) along axis 0 or 1 of a matrix.
inline Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  if (a.rank() != 2) throw DimensionError("slice: input must be a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  const std::size_t lim = axis == 0 ? m : n;
  if (begin > end || end > lim) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + shape_str(a.shape()));
  }
  const std::size_t om = axis == 0 ? end - begin : m;
  const std::size_t on = axis == 0 ? n : end - begin;
  std::vector<double> out(om * on);
  const auto& av = a.values();
  for (std::size_t i = 0; i < om; ++i) {
    for (std::size_t j = 0; j < on; ++j) {
      out[i * on + j] = axis == 0 ? av[(begin + i) * n + j] : av[i * n + begin + j];
    }
  }
  detail::Node* an = &a.node();
  return detail::make_result({om, on}, std::move(out), {a}, [=](detail::Node& o) {
    const double g = detail::backward_gain(OpKind::kSlice);
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < om; ++i) {
      for (std::size_t j = 0; j < on; ++j) {
        const std::size_t dst = axis == 0 ? (begin + i) * n + j : i * n + begin + j;
        ga[dst] += g * o.grad[i * on + j];
      }
    }
  });
}

// Sum of all elements (scalar).
inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  detail::Node* an = &a.node();
  return detail::make_result({}, {s}, {a}, [=](detail::Node& o) {
    const double g = detail::backward_gain(OpKind::kSum) * o.grad[0];
    for (double& v : an->grad_buffer()) v += g;
  });
}

// Sum along one axis of a matrix, keeping it: axis 0 -> [1 x n], axis 1 -> [m x 1].
inline Tensor sum(const Tensor& a, int axis) {
  if (a.rank() != 2) throw DimensionError("sum(axis): input must be a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  const Shape shape = axis == 0 ? Shape{1, n} : Shape{m, 1};
  std::vector<double> out(axis == 0 ? n : m, 0.0);
  const auto& av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += av[i * n + j];
  }
  detail::Node* an = &a.node();
  return detail::make_result(shape, std::move(out), {a}, [=](detail::Node& o) {
    const double g = detail::backward_gain(OpKind::kSum);
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g * o.grad[axis == 0 ? j : i];
    }
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty input");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  detail::Node* an = &a.node();
  return detail::make_result({}, {s * inv}, {a}, [=](detail::Node& o) {
    const double g = detail::backward_gain(OpKind::kMean) * o.grad[0] * inv;
    for (double& v : an->grad_buffer()) v += g;
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: input must be a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  }
  detail::Node* an = &a.node();
  return detail::make_result({n, m}, std::move(out), {a}, [=](detail::Node& o) {
    const double g = detail::backward_gain(OpKind::kTranspose);
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g * o.grad[j * m + i];
    }
  });
}

// Replaces elements where mask is set with `value`; those positions receive
// no gradient.
inline Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask, double value) {
  if (mask.size() != a.numel()) {
    throw DimensionError("masked_fill: mask of " + std::to_string(mask.size()) +
                         " for tensor " + shape_str(a.shape()));
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (m[i]) out[i] = value;
  }
  detail::Node* an = &a.node();
  return detail::make_result(a.shape(), std::move(out), {a},
                             [=, m = std::move(m)](detail::Node& o) {
                               const double g = detail::backward_gain(OpKind::kMaskedFill);
                               auto& ga = an->grad_buffer();
                               for (std::size_t i = 0; i < ga.size(); ++i) {
                                 if (!m[i]) ga[i] += g * o.grad[i];
                               }
                             });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Composites.

// Row-wise log-softmax: x - max - log(sum(exp(x - max))). The max shift is a
// constant so it carries no gradient.
inline Tensor log_softmax(const Tensor& a) {
  if (a.rank() != 2 || a.cols() == 0) {
    throw DimensionError("log_softmax: expects a non-empty matrix, got " + shape_str(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> mx(m);
  for (std::size_t i = 0; i < m; ++i) {
    mx[i] = *std::max_element(a.values().begin() + static_cast<std::ptrdiff_t>(i * n),
                              a.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  }
  const Tensor shift({m, 1}, std::move(mx));
  const Tensor shifted = sub(a, shift);
  const Tensor lse = log(sum(exp(shifted), 1));
  return sub(shifted, lse);
}

// ---------------------------------------------------------------------------
// Tape and backward.

// The recorded operations reachable from a root, in reverse creation order.
class Tape {
 public:
  static Tape record(const Tensor& root) {
    Tape t;
    std::unordered_set<const detail::Node*> seen;
    std::vector<detail::Node*> stack{&root.node()};
    while (!stack.empty()) {
      detail::Node* n = stack.back();
      stack.pop_back();
      if (!n->requires_grad || !seen.insert(n).second) continue;
      t.nodes_.push_back(n);
      for (const auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(t.nodes_.begin(), t.nodes_.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->order > b->order; });
    return t;
  }

  std::span<detail::Node* const> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<detail::Node*> nodes_;
};

// Populates .grad on every requires_grad leaf reachable from `loss`. Leaf
// gradients accumulate across calls; intermediate gradients are recomputed.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  const Tape tape = Tape::record(loss);
  for (detail::Node* n : tape.nodes()) {
    if (n->backward_fn) n->grad.assign(n->data.size(), 0.0);
  }
  loss.node().grad_buffer()[0] += 1.0;
  for (detail::Node* n : tape.nodes()) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace latmem
