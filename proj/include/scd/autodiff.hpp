#pragma once

// Minimal tape-free reverse-mode differentiation over matrix-shaped tensors.
// Every operation allocates a node that owns its value and a backward closure
// accumulating into its parents; `grad` walks the graph in reverse topological
// order. Only the operations needed by the networks in this library exist.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scd/error.hpp"
#include "scd/tensor.hpp"

namespace scd::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor* grad_buffer() {
    if (!requires_grad) return nullptr;
    if (grad.size() != value.size() || grad.shape != value.shape) grad = Tensor(value.shape, 0.0);
    return &grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var leaf(Tensor value, bool requires_grad = true) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

inline Var constant(Tensor value) { return leaf(std::move(value), false); }

namespace detail {

inline Var make_op(Tensor value, std::initializer_list<Var> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const Var& p : parents) {
    node->requires_grad = node->requires_grad || p.requires_grad();
    node->parents.push_back(p.node());
  }
  if (node->requires_grad) node->backward = std::move(backward);
  return Var(std::move(node));
}

inline Var make_op(Tensor value, const std::vector<Var>& parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const Var& p : parents) {
    node->requires_grad = node->requires_grad || p.requires_grad();
    node->parents.push_back(p.node());
  }
  if (node->requires_grad) node->backward = std::move(backward);
  return Var(std::move(node));
}

inline void check_same_size(const Var& a, const Var& b, const char* op) {
  if (a.size() != b.size())
    throw Error(std::string(op) + ": size mismatch " + shape_string(a.shape()) + " vs " +
                shape_string(b.shape()));
}

inline Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a (n x k) times b (k x m).
inline Var matmul(const Var& a, const Var& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k)
    throw Error("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor out = Tensor::matrix(n, m);
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv.data() + p * m;
      double* orow = out.data.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += s * brow[j];
    }
  return detail::make_op(std::move(out), {a, b}, [n, k, m](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    const auto& g = self.grad.data;
    if (Tensor* ga = A.grad_buffer()) {
      const auto& bv = B.value.data;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * bv[p * m + j];
          ga->data[i * k + p] += acc;
        }
    }
    if (Tensor* gb = B.grad_buffer()) {
      const auto& av = A.value.data;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          if (s == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb->data[p * m + j] += s * g[i * m + j];
        }
    }
  });
}

/// x (n x k) * w (k x m) + bias (m), bias broadcast over rows.
inline Var affine(const Var& x, const Var& w, const Var& bias) {
  Var prod = matmul(x, w);
  const std::size_t n = prod.rows(), m = prod.cols();
  if (bias.size() != m) throw Error("affine: bias width " + std::to_string(bias.size()) + " != " + std::to_string(m));
  Tensor out = prod.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] += bias.value().data[j];
  return detail::make_op(std::move(out), {prod, bias}, [n, m](Node& self) {
    const auto& g = self.grad.data;
    if (Tensor* gp = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < g.size(); ++i) gp->data[i] += g[i];
    if (Tensor* gb = self.parents[1]->grad_buffer())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb->data[j] += g[i * m + j];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::check_same_size(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    for (int p = 0; p < 2; ++p)
      if (Tensor* g = self.parents[p]->grad_buffer())
        for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i];
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_size(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i];
    if (Tensor* g = self.parents[1]->grad_buffer())
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] -= self.grad.data[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_size(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (Tensor* g = A.grad_buffer())
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i] * B.value.data[i];
    if (Tensor* g = B.grad_buffer())
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i] * A.value.data[i];
  });
}

inline Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data) v *= factor;
  return detail::make_op(std::move(out), {a}, [factor](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += factor * self.grad.data[i];
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data) v += c;
  return detail::make_op(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i];
  });
}

/// Multiplies row i of `a` by the constant coeffs[i].
inline Var scale_rows(const Var& a, std::vector<double> coeffs) {
  if (coeffs.size() != a.rows()) throw Error("scale_rows: coefficient count != rows");
  const std::size_t m = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] *= coeffs[i];
  return detail::make_op(std::move(out), {a}, [coeffs = std::move(coeffs), m](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < coeffs.size(); ++i)
        for (std::size_t j = 0; j < m; ++j) g->data[i * m + j] += coeffs[i] * self.grad.data[i * m + j];
  });
}

namespace detail {

template <class F, class D>
Var unary(const Var& a, F f, D derivative) {
  Tensor out = a.value();
  for (double& v : out.data) v = f(v);
  return make_op(std::move(out), {a}, [derivative](Node& self) {
    Node& A = *self.parents[0];
    if (Tensor* g = A.grad_buffer())
      for (std::size_t i = 0; i < g->size(); ++i)
        g->data[i] += self.grad.data[i] * derivative(A.value.data[i], self.value.data[i]);
  });
}

}  // namespace detail

/// Exact GELU, x * Phi(x).
inline Var gelu(const Var& a) {
  return detail::unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// ---------------------------------------------------------------------------
// Structural

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return detail::make_op(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += self.grad.data[i];
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != n) throw Error("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out = Tensor::matrix(n, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().data;
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.data.data() + i * total + offset);
    offset += widths[k];
  }
  return detail::make_op(std::move(out), parts, [widths, n, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (Tensor* g = self.parents[k]->grad_buffer())
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            g->data[i * widths[k] + j] += self.grad.data[i * total + offset + j];
      offset += widths[k];
    }
  });
}

inline Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const std::size_t n = a.rows(), m = a.cols();
  if (begin + count > m) throw Error("slice_cols: range out of bounds");
  Tensor out = Tensor::matrix(n, count);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(a.value().data.data() + i * m + begin, count, out.data.data() + i * count);
  return detail::make_op(std::move(out), {a}, [n, m, begin, count](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) g->data[i * m + begin + j] += self.grad.data[i * count + j];
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  const std::size_t m = parts.front().cols();
  std::size_t n = 0;
  std::vector<std::size_t> counts;
  for (const Var& p : parts) {
    if (p.cols() != m) throw Error("concat_rows: column count mismatch");
    counts.push_back(p.rows());
    n += p.rows();
  }
  Tensor out = Tensor::matrix(n, m);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  return detail::make_op(std::move(out), parts, [counts, m](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      const std::size_t len = counts[k] * m;
      if (Tensor* g = self.parents[k]->grad_buffer())
        for (std::size_t i = 0; i < len; ++i) g->data[i] += self.grad.data[offset + i];
      offset += len;
    }
  });
}

inline Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  const std::size_t m = a.cols();
  if (begin + count > a.rows()) throw Error("slice_rows: range out of bounds");
  Tensor out = Tensor::matrix(count, m);
  std::copy_n(a.value().data.data() + begin * m, count * m, out.data.data());
  return detail::make_op(std::move(out), {a}, [begin, count, m](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < count * m; ++i) g->data[begin * m + i] += self.grad.data[i];
  });
}

/// Row gather: out[i] = table[index[i]]. Backward scatter-adds into the table.
inline Var gather_rows(const Var& table, std::vector<std::size_t> index) {
  const std::size_t m = table.cols(), v = table.rows();
  Tensor out = Tensor::matrix(index.size(), m);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= v)
      throw Error("gather_rows: index " + std::to_string(index[i]) + " out of range " + std::to_string(v));
    std::copy_n(table.value().data.data() + index[i] * m, m, out.data.data() + i * m);
  }
  return detail::make_op(std::move(out), {table}, [index = std::move(index), m](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t j = 0; j < m; ++j) g->data[index[i] * m + j] += self.grad.data[i * m + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data) acc += v;
  return detail::make_op(detail::scalar(acc), {a}, [](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (double& v : g->data) v += self.grad.data[0];
  });
}

inline Var mean(const Var& a) {
  if (a.size() == 0) throw Error("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// sum_i (a_i - b_i)^2
inline Var squared_distance(const Var& a, const Var& b) {
  detail::check_same_size(a, b, "squared_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.value().data[i] - b.value().data[i];
    acc += d * d;
  }
  return detail::make_op(detail::scalar(acc), {a, b}, [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    const double g0 = self.grad.data[0];
    Tensor* ga = A.grad_buffer();
    Tensor* gb = B.grad_buffer();
    for (std::size_t i = 0; i < A.value.size(); ++i) {
      const double d = 2.0 * g0 * (A.value.data[i] - B.value.data[i]);
      if (ga) ga->data[i] += d;
      if (gb) gb->data[i] -= d;
    }
  });
}

inline Var squared_norm(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data) acc += v * v;
  return detail::make_op(detail::scalar(acc), {a}, [](Node& self) {
    Node& A = *self.parents[0];
    if (Tensor* g = A.grad_buffer())
      for (std::size_t i = 0; i < g->size(); ++i) g->data[i] += 2.0 * self.grad.data[0] * A.value.data[i];
  });
}

/// Row-wise softmax with max subtraction.
inline Var softmax_rows(const Var& a) {
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    double* r = out.data.data() + i * m;
    const double mx = *std::max_element(r, r + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (r[j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < m; ++j) r[j] /= z;
  }
  return detail::make_op(std::move(out), {a}, [n, m](Node& self) {
    if (Tensor* g = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < n; ++i) {
        const double* y = self.value.data.data() + i * m;
        const double* gy = self.grad.data.data() + i * m;
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += y[j] * gy[j];
        for (std::size_t j = 0; j < m; ++j) g->data[i * m + j] += y[j] * (gy[j] - dot);
      }
  });
}

/// Mean over rows of -log softmax(logits)[target].
inline Var cross_entropy(const Var& logits, std::vector<std::size_t> targets) {
  const std::size_t n = logits.rows(), k = logits.cols();
  if (targets.size() != n) throw Error("cross_entropy: target count != rows");
  if (n == 0) throw Error("cross_entropy: empty batch");
  Tensor probs = logits.value();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= k)
      throw Error("cross_entropy: target " + std::to_string(targets[i]) + " out of range [0," + std::to_string(k) + ")");
    double* r = probs.data.data() + i * k;
    const double mx = *std::max_element(r, r + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(r[j] - mx);
    const double log_z = mx + std::log(z);
    loss += log_z - r[targets[i]];
    for (std::size_t j = 0; j < k; ++j) r[j] = std::exp(r[j] - log_z);
  }
  loss /= static_cast<double>(n);
  return detail::make_op(detail::scalar(loss), {logits},
                         [probs = std::move(probs), targets = std::move(targets), n, k](Node& self) {
                           if (Tensor* g = self.parents[0]->grad_buffer()) {
                             const double s = self.grad.data[0] / static_cast<double>(n);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < k; ++j)
                                 g->data[i * k + j] +=
                                     s * (probs.data[i * k + j] - (j == targets[i] ? 1.0 : 0.0));
                           }
                         });
}

/// (2 / (n(n-1))) * sum_{i<j} ||a_i - a_j||^2 over the rows of `a`; 0 when n < 2.
inline Var mean_pairwise_squared_distance(const Var& a) {
  const std::size_t n = a.rows(), m = a.cols();
  if (n < 2) return detail::make_op(detail::scalar(0.0), {a}, [](Node&) {});
  const auto& v = a.value().data;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t c = 0; c < m; ++c) {
        const double d = v[i * m + c] - v[j * m + c];
        acc += d * d;
      }
  const double coeff = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  return detail::make_op(detail::scalar(coeff * acc), {a}, [n, m, coeff](Node& self) {
    Node& A = *self.parents[0];
    Tensor* g = A.grad_buffer();
    if (!g) return;
    // d/da_i sum_{i<j} ||a_i - a_j||^2 = 2 (n a_i - sum_j a_j)
    std::vector<double> total(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < m; ++c) total[c] += A.value.data[i * m + c];
    const double s = self.grad.data[0] * coeff * 2.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < m; ++c)
        g->data[i * m + c] += s * (static_cast<double>(n) * A.value.data[i * m + c] - total[c]);
  });
}

/// Logits -||x_i - table_k||^2 / temperature for every row i and table entry k.
inline Var negative_distance_logits(const Var& x, const Var& table, double temperature) {
  const std::size_t n = x.rows(), d = x.cols(), v = table.rows();
  if (table.cols() != d) throw Error("negative_distance_logits: width mismatch");
  if (!(temperature > 0.0)) throw Error("negative_distance_logits: temperature must be positive");
  Tensor out = Tensor::matrix(n, v);
  const auto& xv = x.value().data;
  const auto& tv = table.value().data;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < v; ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = xv[i * d + c] - tv[k * d + c];
        acc += diff * diff;
      }
      out.data[i * v + k] = -acc / temperature;
    }
  return detail::make_op(std::move(out), {x, table}, [n, d, v, temperature](Node& self) {
    Node& X = *self.parents[0];
    Node& E = *self.parents[1];
    Tensor* gx = X.grad_buffer();
    Tensor* ge = E.grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < v; ++k) {
        const double g = self.grad.data[i * v + k] * (-2.0 / temperature);
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = X.value.data[i * d + c] - E.value.data[k * d + c];
          if (gx) gx->data[i * d + c] += g * diff;
          if (ge) ge->data[k * d + c] -= g * diff;
        }
      }
  });
}

/// Multi-head causal self-attention. q, k, v are (seq_len * batch) x width in
/// position-major layout (row = position * batch + b). Query position i attends
/// to key positions j <= i of the same batch row only.
inline Var causal_attention(const Var& q, const Var& k, const Var& v, std::size_t seq_len, std::size_t heads) {
  if (seq_len == 0 || q.rows() % seq_len != 0) throw Error("causal_attention: rows not divisible by seq_len");
  if (k.shape() != q.shape() || v.shape() != q.shape()) throw Error("causal_attention: q/k/v shape mismatch");
  const std::size_t batch = q.rows() / seq_len, width = q.cols();
  if (heads == 0 || width % heads != 0) throw Error("causal_attention: width not divisible by heads");
  const std::size_t hd = width / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
  // weights[((b * heads + h) * L + i) * L + j]
  std::vector<double> weights(batch * heads * seq_len * seq_len, 0.0);
  Tensor out = Tensor::matrix(q.rows(), width);
  const auto& qv = q.value().data;
  const auto& kv = k.value().data;
  const auto& vv = v.value().data;
  auto row = [batch](std::size_t pos, std::size_t b) { return pos * batch + b; };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < seq_len; ++i) {
        double* w = weights.data() + ((b * heads + h) * seq_len + i) * seq_len;
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c)
            s += qv[row(i, b) * width + h * hd + c] * kv[row(j, b) * width + h * hd + c];
          w[j] = s * inv;
          mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) z += (w[j] = std::exp(w[j] - mx));
        for (std::size_t j = 0; j <= i; ++j) w[j] /= z;
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t c = 0; c < hd; ++c)
            out.data[row(i, b) * width + h * hd + c] += w[j] * vv[row(j, b) * width + h * hd + c];
      }
  return detail::make_op(
      std::move(out), {q, k, v},
      [weights = std::move(weights), batch, heads, seq_len, width, hd, inv](Node& self) {
        Node& Q = *self.parents[0];
        Node& K = *self.parents[1];
        Node& V = *self.parents[2];
        Tensor* gq = Q.grad_buffer();
        Tensor* gk = K.grad_buffer();
        Tensor* gv = V.grad_buffer();
        const auto& go = self.grad.data;
        auto row = [batch](std::size_t pos, std::size_t b) { return pos * batch + b; };
        std::vector<double> dw(seq_len);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < seq_len; ++i) {
              const double* w = weights.data() + ((b * heads + h) * seq_len + i) * seq_len;
              const double* gor = go.data() + row(i, b) * width + h * hd;
              double dot = 0.0;
              for (std::size_t j = 0; j <= i; ++j) {
                const double* vr = V.value.data.data() + row(j, b) * width + h * hd;
                double acc = 0.0;
                for (std::size_t c = 0; c < hd; ++c) acc += gor[c] * vr[c];
                dw[j] = acc;
                dot += w[j] * acc;
                if (gv)
                  for (std::size_t c = 0; c < hd; ++c) gv->data[row(j, b) * width + h * hd + c] += w[j] * gor[c];
              }
              for (std::size_t j = 0; j <= i; ++j) {
                const double ds = w[j] * (dw[j] - dot) * inv;
                if (ds == 0.0) continue;
                for (std::size_t c = 0; c < hd; ++c) {
                  if (gq) gq->data[row(i, b) * width + h * hd + c] += ds * K.value.data[row(j, b) * width + h * hd + c];
                  if (gk) gk->data[row(j, b) * width + h * hd + c] += ds * Q.value.data[row(i, b) * width + h * hd + c];
                }
              }
            }
      });
}

// ---------------------------------------------------------------------------
// Gradient evaluation

/// Reverse-mode gradients of a scalar `loss` with respect to each tensor in
/// `wrt`. Every requested tensor must require gradients and be reachable from
/// the loss.
inline std::vector<Tensor> grad(const Var& loss, std::span<const Var> wrt) {
  if (!loss.valid() || loss.size() != 1) throw Error("grad: loss must be a scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (const Var& w : wrt) {
    if (!w.valid() || !seen.contains(w.node().get()))
      throw Error("grad: requested tensor " + (w.valid() ? shape_string(w.shape()) : std::string("<null>")) +
                  " is not part of the loss graph");
    if (!w.requires_grad()) throw Error("grad: requested tensor does not require gradients");
  }
  for (Node* n : order) n->grad = Tensor();
  Node* root = loss.node().get();
  if (root->requires_grad) {
    root->grad = Tensor(root->value.shape, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
  }
  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    const Node& n = *w.node();
    result.push_back(n.grad.size() == n.value.size() ? n.grad : Tensor(n.value.shape, 0.0));
  }
  return result;
}

inline Tensor grad(const Var& loss, const Var& wrt) {
  const Var one[] = {wrt};
  return std::move(grad(loss, std::span<const Var>(one))[0]);
}

}  // namespace scd::ad
