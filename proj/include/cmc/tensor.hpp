// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major f64 tensors with tape-style reverse-mode differentiation.
//
// Every op returns a fresh node that remembers its parents and a closure that
// pushes the output gradient back into them. Nodes carry a global sequence
// number assigned at creation, so creation order is a topological order and
// backward() only has to sort the reachable set by that number.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cmc/error.hpp"

namespace cmc {

using Shape = std::vector<std::size_t>;

inline std::string format_shape(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t seq = next_sequence();
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  /// Gradient buffer of parent i, or nullptr when it does not track gradients.
  double* parent_grad(std::size_t i) {
    Node& p = *parents[i];
    if (!p.requires_grad) return nullptr;
    if (p.grad.empty()) p.grad.assign(p.data.size(), 0.0);
    return p.grad.data();
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + format_shape(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw DimensionError("shape " + format_shape(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double value) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.size() > 1 ? node_->shape[1] : 1; }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access. Intended for parameter updates on leaves.
  std::span<double> mutable_data() { return node_->data; }
  std::vector<double> to_vector() const { return node_->data; }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + format_shape(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on && node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  /// Same values, no history, no gradient tracking.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  bool is_leaf() const { return node_->is_leaf(); }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void require_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + where);
  }
}

/// Wrap a computed buffer as an op output, wiring history only when needed.
inline Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn, const char* op_name) {
  require_finite(values, op_name);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  bool tracks = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tracks) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         format_shape(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + format_shape(a.shape()) + " and " +
                         format_shape(b.shape()) + " differ");
  }
}

/// Dot product with four independent partial sums.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t t = 0;
  for (; t + 4 <= n; t += 4) {
    s0 += a[t] * b[t];
    s1 += a[t + 1] * b[t + 1];
    s2 += a[t + 2] * b[t + 2];
    s3 += a[t + 3] * b[t + 3];
  }
  for (; t < n; ++t) s0 += a[t] * b[t];
  return (s0 + s1) + (s2 + s3);
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv, const char* name) {
  std::vector<double> out(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [deriv](Node& self) {
                       double* gx = self.parent_grad(0);
                       const auto& xd = self.parents[0]->data;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         gx[i] += self.grad[i] * deriv(xd[i], self.data[i]);
                       }
                     },
                     name);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [](detail::Node& self) {
                               for (std::size_t p = 0; p < 2; ++p) {
                                 if (double* g = self.parent_grad(p)) {
                                   for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                                 }
                               }
                             },
                             "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [](detail::Node& self) {
                               if (double* g = self.parent_grad(0)) {
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                               }
                               if (double* g = self.parent_grad(1)) {
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
                               }
                             },
                             "sub");
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [](detail::Node& self) {
                               const auto& ad = self.parents[0]->data;
                               const auto& bd = self.parents[1]->data;
                               if (double* g = self.parent_grad(0)) {
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bd[i];
                               }
                               if (double* g = self.parent_grad(1)) {
                                 for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * ad[i];
                               }
                             },
                             "mul");
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [s](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
                             },
                             "scale");
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                             },
                             "add_scalar");
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; }, "exp");
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw RangeError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; }, "log");
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; },
      "relu");
}

/// Subgradient 0 at the kink.
inline Tensor abs(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }, "abs");
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; }, "square");
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      "softplus");
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return detail::make_result({1}, {total}, {a},
                             [](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               std::size_t n = self.parents[0]->data.size();
                               for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
                             },
                             "sum");
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + format_shape(a.shape()) + " as " + format_shape(shape));
  }
  return detail::make_result(std::move(shape), a.to_vector(), {a},
                             [](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                             },
                             "reshape");
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(a.size());
  auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = ad[i * m + j];
  return detail::make_result({m, n}, std::move(out), {a},
                             [n, m](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = 0; j < m; ++j) g[i * m + j] += self.grad[j * n + i];
                             },
                             "transpose");
}

/// Concatenate rank-2 tensors with equal row counts along the feature axis.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  std::size_t n = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row counts differ, " + format_shape(parts[0].shape()) + " vs " +
                           format_shape(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pd = parts[k].data();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(pd.begin() + i * widths[k], widths[k], out.begin() + i * total + offset);
    offset += widths[k];
  }
  return detail::make_result({n, total}, std::move(out), parts,
                             [n, total, widths](detail::Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 if (double* g = self.parent_grad(k)) {
                                   for (std::size_t i = 0; i < n; ++i)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       g[i * widths[k] + j] += self.grad[i * total + off + j];
                                 }
                                 off += widths[k];
                               }
                             },
                             "concat_cols");
}

/// Rows of a [N x d] tensor picked by index, giving [n x d].
inline Tensor select_rows(const Tensor& z, std::vector<std::size_t> idx) {
  detail::require_rank(z, 2, "select_rows");
  std::size_t N = z.rows(), d = z.cols();
  if (idx.empty()) throw DimensionError("select_rows: empty index list");
  std::vector<double> out(idx.size() * d);
  auto zd = z.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= N) throw IndexError("select_rows: row " + std::to_string(idx[r]) + " out of " + std::to_string(N));
    std::copy_n(zd.begin() + idx[r] * d, d, out.begin() + r * d);
  }
  std::size_t n = idx.size();
  return detail::make_result({n, d}, std::move(out), {z},
                             [idx = std::move(idx), d](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                 for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self.grad[r * d + j];
                             },
                             "select_rows");
}

/// Gather candidate rows per anchor: z [N x d], idx (n rows of k indices) -> [n x k x d].
inline Tensor gather_rows(const Tensor& z, std::size_t n, std::size_t k, std::vector<std::size_t> idx) {
  detail::require_rank(z, 2, "gather_rows");
  if (idx.size() != n * k) throw DimensionError("gather_rows: index count does not match n*k");
  std::size_t N = z.rows(), d = z.cols();
  std::vector<double> out(n * k * d);
  auto zd = z.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= N) throw IndexError("gather_rows: row " + std::to_string(idx[r]) + " out of " + std::to_string(N));
    std::copy_n(zd.begin() + idx[r] * d, d, out.begin() + r * d);
  }
  return detail::make_result({n, k, d}, std::move(out), {z},
                             [idx = std::move(idx), d](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                 for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self.grad[r * d + j];
                             },
                             "gather_rows");
}

/// Slice position p of the middle axis: [n x g x d] -> [n x d].
inline Tensor take_middle(const Tensor& t, std::size_t p) {
  detail::require_rank(t, 3, "take_middle");
  std::size_t n = t.dim(0), g = t.dim(1), d = t.dim(2);
  if (p >= g) throw IndexError("take_middle: position " + std::to_string(p) + " out of " + std::to_string(g));
  std::vector<double> out(n * d);
  auto td = t.data();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(td.begin() + (i * g + p) * d, d, out.begin() + i * d);
  return detail::make_result({n, d}, std::move(out), {t},
                             [n, g, d, p](detail::Node& self) {
                               double* gr = self.parent_grad(0);
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = 0; j < d; ++j) gr[(i * g + p) * d + j] += self.grad[i * d + j];
                             },
                             "take_middle");
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + format_shape(a.shape()) + " by " + format_shape(b.shape()));
  }
  std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return detail::make_result({n, m}, std::move(out), {a, b},
                             [n, k, m](detail::Node& self) {
                               const auto& ad = self.parents[0]->data;
                               const auto& bd = self.parents[1]->data;
                               const double* go = self.grad.data();
                               if (double* ga = self.parent_grad(0)) {
                                 // dA = dOut * B^T
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     ga[i * k + p] += detail::dot(go + i * m, bd.data() + p * m, m);
                                   }
                               }
                               if (double* gb = self.parent_grad(1)) {
                                 // dB = A^T * dOut
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     double av = ad[i * k + p];
                                     if (av == 0.0) continue;
                                     const double* grow = go + i * m;
                                     double* gbrow = gb + p * m;
                                     for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
                                   }
                               }
                             },
                             "matmul");
}

/// x [n x m] plus bias [m] broadcast over rows.
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 2, "add_row_bias");
  std::size_t n = x.rows(), m = x.cols();
  if (bias.size() != m) {
    throw DimensionError("add_row_bias: bias " + format_shape(bias.shape()) + " does not fit " +
                         format_shape(x.shape()));
  }
  std::vector<double> out(x.size());
  auto xd = x.data();
  auto bd = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = xd[i * m + j] + bd[j];
  return detail::make_result(x.shape(), std::move(out), {x, bias},
                             [n, m](detail::Node& self) {
                               if (double* g = self.parent_grad(0)) {
                                 for (std::size_t i = 0; i < n * m; ++i) g[i] += self.grad[i];
                               }
                               if (double* g = self.parent_grad(1)) {
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
                               }
                             },
                             "add_row_bias");
}

/// Row-wise dot product of two [n x d] tensors, giving [n x 1].
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "row_dot");
  detail::require_same_shape(a, b, "row_dot");
  std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(n, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i] += ad[i * d + j] * bd[i * d + j];
  return detail::make_result({n, 1}, std::move(out), {a, b},
                             [n, d](detail::Node& self) {
                               const auto& ad = self.parents[0]->data;
                               const auto& bd = self.parents[1]->data;
                               if (double* g = self.parent_grad(0)) {
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i] * bd[i * d + j];
                               }
                               if (double* g = self.parent_grad(1)) {
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i] * ad[i * d + j];
                               }
                             },
                             "row_dot");
}

/// Dot of each anchor row with its own k candidates: a [n x d], c [n x k x d] -> [n x k].
inline Tensor batched_row_dot(const Tensor& a, const Tensor& c) {
  detail::require_rank(a, 2, "batched_row_dot");
  detail::require_rank(c, 3, "batched_row_dot");
  std::size_t n = a.rows(), d = a.cols(), k = c.dim(1);
  if (c.dim(0) != n || c.dim(2) != d) {
    throw DimensionError("batched_row_dot: anchors " + format_shape(a.shape()) + " vs candidates " +
                         format_shape(c.shape()));
  }
  std::vector<double> out(n * k, 0.0);
  auto ad = a.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = ad.data() + i * d;
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = detail::dot(arow, cd.data() + (i * k + j) * d, d);
  }
  return detail::make_result({n, k}, std::move(out), {a, c},
                             [n, k, d](detail::Node& self) {
                               const auto& ad = self.parents[0]->data;
                               const auto& cd = self.parents[1]->data;
                               if (double* g = self.parent_grad(0)) {
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < k; ++j) {
                                     double gv = self.grad[i * k + j];
                                     const double* crow = cd.data() + (i * k + j) * d;
                                     for (std::size_t t = 0; t < d; ++t) g[i * d + t] += gv * crow[t];
                                   }
                               }
                               if (double* g = self.parent_grad(1)) {
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < k; ++j) {
                                     double gv = self.grad[i * k + j];
                                     double* gc = g + (i * k + j) * d;
                                     for (std::size_t t = 0; t < d; ++t) gc[t] += gv * ad[i * d + t];
                                   }
                               }
                             },
                             "batched_row_dot");
}

/// Rows below this norm are rejected by l2_normalize.
inline constexpr double kNormEpsilon = 1e-8;

/// Scale every row of x [n x d] (or the last axis of a rank-3 tensor) to unit norm.
inline Tensor l2_normalize(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("l2_normalize: scalar input");
  std::size_t d = x.shape().back();
  std::size_t n = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> norms(n);
  auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xd[i * d + j] * xd[i * d + j];
    double norm = std::sqrt(ss);
    if (norm <= kNormEpsilon) {
      throw DegenerateError("l2_normalize: row " + std::to_string(i) + " has norm " + std::to_string(norm));
    }
    norms[i] = norm;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xd[i * d + j] / norm;
  }
  return detail::make_result(x.shape(), std::move(out), {x},
                             [n, d, norms = std::move(norms)](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               const auto& y = self.data;
                               for (std::size_t i = 0; i < n; ++i) {
                                 double proj = 0.0;
                                 for (std::size_t j = 0; j < d; ++j) proj += y[i * d + j] * self.grad[i * d + j];
                                 for (std::size_t j = 0; j < d; ++j)
                                   g[i * d + j] += (self.grad[i * d + j] - y[i * d + j] * proj) / norms[i];
                               }
                             },
                             "l2_normalize");
}

/// Mean over rows of -log softmax(logits)[target].
inline Tensor log_softmax_nll(const Tensor& logits, const std::vector<std::size_t>& targets) {
  detail::require_rank(logits, 2, "log_softmax_nll");
  std::size_t n = logits.rows(), c = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("log_softmax_nll: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  auto ld = logits.data();
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) {
      throw IndexError("log_softmax_nll: target " + std::to_string(targets[i]) + " out of " + std::to_string(c) +
                       " classes");
    }
    const double* row = ld.data() + i * c;
    double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += -(row[targets[i]] - mx - std::log(z));
  }
  double loss = total / static_cast<double>(n);
  return detail::make_result({1}, {loss}, {logits},
                             [n, c, targets, probs = std::move(probs)](detail::Node& self) {
                               double* g = self.parent_grad(0);
                               double s = self.grad[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) g[i * c + j] += s * probs[i * c + j];
                                 g[i * c + targets[i]] -= s;
                               }
                             },
                             "log_softmax_nll");
}

// ---------------------------------------------------------------------------
// Reverse pass

/// Populate grad on every tracked tensor reachable from the scalar root.
/// Leaf gradients accumulate across calls; intermediate ones are reset.
inline void backward(const Tensor& root) {
  if (root.size() != 1) throw ContractError("backward: root must be scalar, got " + format_shape(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root.node().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    detail::Node* node = stack.back();
    stack.pop_back();
    order.push_back(node);
    for (auto& p : node->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  for (detail::Node* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
  }
  detail::Node& top = *root.node();
  if (top.grad.empty()) top.grad.assign(1, 0.0);
  top.grad[0] += 1.0;

  for (detail::Node* node : order) {
    if (!node->is_leaf()) node->backward_fn(*node);
  }
  for (detail::Node* node : order) {
    if (node->is_leaf()) detail::require_finite(node->grad, "backward");
  }
}

// ---------------------------------------------------------------------------
// Gradient oracle

/// Compare analytic gradients of f w.r.t. the given leaf parameters against
/// central differences. f must rebuild its graph from the current parameter
/// values on every call. Returns the max relative error over all coordinates.
inline double finite_diff_check_params(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                       double h = 1e-5) {
  if (!(h > 0.0)) throw ParameterError("finite_diff_check: step must be positive");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor y = f();
  backward(y);
  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    if (analytic.empty()) analytic.assign(p.size(), 0.0);  // unreachable from the output
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      double saved = values[i];
      values[i] = saved + h;
      double up = f().item();
      values[i] = saved - h;
      double down = f().item();
      values[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-10);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

/// Gradient check of a tensor-to-scalar function at x.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor probe(x.shape(), x.to_vector(), true);
  return finite_diff_check_params([&] { return f(probe); }, {probe}, h);
}

}  // namespace cmc
