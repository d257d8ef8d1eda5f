#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tta/errors.hpp"

namespace tta {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

namespace detail {
struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major float64 tensor. Cheap to copy (shared storage); the data
/// buffer is treated as immutable once built, except through mutable_data()
/// which exists for optimizer parameter updates between tapes. Every value
/// committed through from_data is finite.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw DimensionError("tensor: shape " + shape_str(shape) + " expects " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!std::isfinite(data[i]))
        throw NumericsError("tensor: non-finite value at flat index " +
                            std::to_string(i));
    auto s = std::make_shared<detail::TensorStorage>();
    s->shape = std::move(shape);
    s->data = std::move(data);
    s->requires_grad = requires_grad;
    Tensor t;
    t.s_ = std::move(s);
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), value);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<const double> data() const { return s_->data; }
  std::vector<double>& mutable_data() const { return s_->data; }

  double operator[](std::size_t i) const { return s_->data[i]; }
  double operator()(std::size_t r, std::size_t c) const {
    return s_->data[r * s_->shape[1] + c];
  }

  double value() const {
    if (numel() != 1)
      throw ContractError("tensor: value() requires a scalar, shape is " +
                          shape_str(shape()));
    return s_->data[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool rg) const { s_->requires_grad = rg; }

  bool has_grad() const { return defined() && !s_->grad.empty(); }
  std::span<const double> grad() const { return s_->grad; }

  // Allocates a zeroed gradient buffer on first use.
  std::vector<double>& grad_buffer() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
    return s_->grad;
  }

  void clear_grad() const { s_->grad.clear(); }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  Tensor clone() const {
    Tensor t = from_data(shape(), {s_->data.begin(), s_->data.end()},
                         requires_grad());
    return t;
  }

 private:
  std::shared_ptr<detail::TensorStorage> s_;
};

/// Reverse-mode tape. Nodes are recorded in execution order, which is a
/// topological order by construction; backward() replays them exactly once
/// in reverse. One tape per logical thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t node_count() const { return nodes_.size(); }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients accumulate (+=) into
  // the buffers of every requires_grad tensor reached from the loss; callers
  // clear leaf gradients between independent passes.
  void backward(const Tensor& loss) const {
    if (!loss.defined() || loss.numel() != 1)
      throw ContractError("backward: loss must be a scalar tensor");
    if (nodes_.empty()) throw ContractError("backward: tape is empty");
    auto& g = loss.grad_buffer();
    g[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace ops {

namespace detail {

inline bool track(const Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(r) + " tensor, got " +
                         shape_str(t.shape()));
}

}  // namespace detail

/// C = A (m,k) x B (k,n).
inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dims " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t t = 0; t < k; ++t) {
        const double aik = pa[i * k + t];
        const double* brow = pb + t * n;
        double* crow = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
  }
  Tensor c = Tensor::from_data({m, n}, std::move(out));
  if (detail::track(tape, {&a, &b})) {
    c.set_requires_grad(true);
    tape->record([a, b, c, m, k, n] {
      if (!c.has_grad()) return;
      const double* gc = c.grad().data();
      if (a.requires_grad()) {
        double* ga = a.grad_buffer().data();
        const double* pb = b.data().data();
        // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = gc[i * n + j];
            for (std::size_t t = 0; t < k; ++t) ga[i * k + t] += g * pb[t * n + j];
          }
      }
      if (b.requires_grad()) {
        double* gb = b.grad_buffer().data();
        const double* pa = a.data().data();
        // dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            const double av = pa[i * k + t];
            for (std::size_t j = 0; j < n; ++j) gb[t * n + j] += av * gc[i * n + j];
          }
      }
    });
  }
  return c;
}

/// Elementwise a + b, or row-broadcast bias: (m,n) + (n).
inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0);
  if (!same && !bias)
    throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) +
                         " + " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  } else {
    const std::size_t n = b.dim(0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i % n];
  }
  Tensor c = Tensor::from_data(a.shape(), std::move(out));
  if (detail::track(tape, {&a, &b})) {
    c.set_requires_grad(true);
    tape->record([a, b, c, same] {
      if (!c.has_grad()) return;
      const double* gc = c.grad().data();
      if (a.requires_grad()) {
        double* ga = a.grad_buffer().data();
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += gc[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad_buffer().data();
        if (same) {
          for (std::size_t i = 0; i < b.numel(); ++i) gb[i] += gc[i];
        } else {
          const std::size_t n = b.numel();
          for (std::size_t i = 0; i < c.numel(); ++i) gb[i % n] += gc[i];
        }
      }
    });
  }
  return c;
}

/// Elementwise product, same shape.
inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: incompatible shapes " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  Tensor c = Tensor::from_data(a.shape(), std::move(out));
  if (detail::track(tape, {&a, &b})) {
    c.set_requires_grad(true);
    tape->record([a, b, c] {
      if (!c.has_grad()) return;
      const double* gc = c.grad().data();
      if (a.requires_grad()) {
        double* ga = a.grad_buffer().data();
        const double* pb2 = b.data().data();
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += gc[i] * pb2[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad_buffer().data();
        const double* pa2 = a.data().data();
        for (std::size_t i = 0; i < b.numel(); ++i) gb[i] += gc[i] * pa2[i];
      }
    });
  }
  return c;
}

inline Tensor relu(Tape* tape, const Tensor& x) {
  std::vector<double> out(x.numel());
  const double* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] > 0.0 ? px[i] : 0.0;
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  if (detail::track(tape, {&x})) {
    y.set_requires_grad(true);
    tape->record([x, y] {
      if (!y.has_grad()) return;
      const double* gy = y.grad().data();
      const double* px2 = x.data().data();
      double* gx = x.grad_buffer().data();
      for (std::size_t i = 0; i < x.numel(); ++i)
        if (px2[i] > 0.0) gx[i] += gy[i];
    });
  }
  return y;
}

/// Row-wise layer norm over the feature dimension of x (batch, features),
/// y = gamma * (x - mean) / sqrt(var + eps) + beta.
inline Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-5) {
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be > 0");
  detail::require_rank(x, 2, "layer_norm");
  detail::require_rank(gamma, 1, "layer_norm");
  detail::require_rank(beta, 1, "layer_norm");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (gamma.dim(0) != d || beta.dim(0) != d)
    throw DimensionError("layer_norm: gamma/beta must have length " +
                         std::to_string(d));
  std::vector<double> out(rows * d);
  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pbt = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * is;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = pg[j] * xh + pbt[j];
    }
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  if (detail::track(tape, {&x, &gamma, &beta})) {
    y.set_requires_grad(true);
    tape->record([x, gamma, beta, y, xhat, inv_std, rows, d] {
      if (!y.has_grad()) return;
      const double* gy = y.grad().data();
      const double* pg2 = gamma.data().data();
      if (gamma.requires_grad()) {
        double* gg = gamma.grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j)
            gg[j] += gy[r * d + j] * (*xhat)[r * d + j];
      }
      if (beta.requires_grad()) {
        double* gb = beta.grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += gy[r * d + j];
      }
      if (x.requires_grad()) {
        double* gx = x.grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gy[r * d + j] * pg2[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * (*xhat)[r * d + j];
          }
          const double is = (*inv_std)[r];
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gy[r * d + j] * pg2[j];
            gx[r * d + j] += is * (dxh - inv_d * sum_dxhat -
                                   (*xhat)[r * d + j] * inv_d * sum_dxhat_xhat);
          }
        }
      }
    });
  }
  return y;
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax(Tape* tape, const Tensor& logits) {
  detail::require_rank(logits, 2, "softmax");
  const std::size_t rows = logits.dim(0), c = logits.dim(1);
  std::vector<double> out(rows * c);
  const double* pz = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = pz + r * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - m);
      out[r * c + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= sum;
  }
  Tensor p = Tensor::from_data(logits.shape(), std::move(out));
  if (detail::track(tape, {&logits})) {
    p.set_requires_grad(true);
    tape->record([logits, p, rows, c] {
      if (!p.has_grad()) return;
      const double* gp = p.grad().data();
      const double* pp = p.data().data();
      double* gz = logits.grad_buffer().data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += gp[r * c + j] * pp[r * c + j];
        for (std::size_t j = 0; j < c; ++j)
          gz[r * c + j] += pp[r * c + j] * (gp[r * c + j] - dot);
      }
    });
  }
  return p;
}

/// Elementwise natural log; input must be strictly positive.
inline Tensor log(Tape* tape, const Tensor& x) {
  std::vector<double> out(x.numel());
  const double* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(px[i] > 0.0))
      throw NumericsError("log: non-positive input at flat index " +
                          std::to_string(i));
    out[i] = std::log(px[i]);
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  if (detail::track(tape, {&x})) {
    y.set_requires_grad(true);
    tape->record([x, y] {
      if (!y.has_grad()) return;
      const double* gy = y.grad().data();
      const double* px2 = x.data().data();
      double* gx = x.grad_buffer().data();
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += gy[i] / px2[i];
    });
  }
  return y;
}

/// Sum of all elements -> scalar.
inline Tensor sum(Tape* tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = Tensor::scalar(s);
  if (detail::track(tape, {&x})) {
    y.set_requires_grad(true);
    tape->record([x, y] {
      if (!y.has_grad()) return;
      const double g = y.grad()[0];
      double* gx = x.grad_buffer().data();
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
  }
  return y;
}

/// Multiply by a compile-time-known constant.
inline Tensor scale(Tape* tape, const Tensor& x, double factor) {
  if (!std::isfinite(factor)) throw ParameterError("scale: non-finite factor");
  std::vector<double> out(x.numel());
  const double* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * factor;
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  if (detail::track(tape, {&x})) {
    y.set_requires_grad(true);
    tape->record([x, y, factor] {
      if (!y.has_grad()) return;
      const double* gy = y.grad().data();
      double* gx = x.grad_buffer().data();
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += gy[i] * factor;
    });
  }
  return y;
}

/// Extract x(row, col) as a scalar.
inline Tensor pick(Tape* tape, const Tensor& x, std::size_t row,
                   std::size_t col) {
  detail::require_rank(x, 2, "pick");
  if (row >= x.dim(0) || col >= x.dim(1))
    throw DimensionError("pick: index (" + std::to_string(row) + "," +
                         std::to_string(col) + ") outside " +
                         shape_str(x.shape()));
  Tensor y = Tensor::scalar(x(row, col));
  if (detail::track(tape, {&x})) {
    y.set_requires_grad(true);
    const std::size_t flat = row * x.dim(1) + col;
    tape->record([x, y, flat] {
      if (!y.has_grad()) return;
      x.grad_buffer()[flat] += y.grad()[0];
    });
  }
  return y;
}

/// Per-row Shannon entropy of softmax(logits), in nats: (batch,) output.
/// Computed in the log domain so extreme logits stay finite; the gradient is
/// dH/dz_j = -p_j (log p_j + H).
inline Tensor softmax_entropy(Tape* tape, const Tensor& logits) {
  detail::require_rank(logits, 2, "softmax_entropy");
  const std::size_t rows = logits.dim(0), c = logits.dim(1);
  std::vector<double> ent(rows);
  auto probs = std::make_shared<std::vector<double>>(rows * c);
  auto logp = std::make_shared<std::vector<double>>(rows * c);
  const double* pz = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = pz + r * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - m);
    const double lse = m + std::log(sum);
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double lp = row[j] - lse;
      const double p = std::exp(lp);
      (*logp)[r * c + j] = lp;
      (*probs)[r * c + j] = p;
      h -= p * lp;  // p -> 0 makes p*lp -> 0
    }
    ent[r] = h;
  }
  Tensor h = Tensor::from_data({rows}, std::move(ent));
  if (detail::track(tape, {&logits})) {
    h.set_requires_grad(true);
    tape->record([logits, h, probs, logp, rows, c] {
      if (!h.has_grad()) return;
      const double* gh = h.grad().data();
      double* gz = logits.grad_buffer().data();
      const double* ph = h.data().data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const double p = (*probs)[r * c + j];
          gz[r * c + j] += gh[r] * (-p * ((*logp)[r * c + j] + ph[r]));
        }
    });
  }
  return h;
}

/// Mean cross-entropy of logits (batch, classes) against integer labels.
inline Tensor cross_entropy_mean(Tape* tape, const Tensor& logits,
                                 const std::vector<int>& labels) {
  detail::require_rank(logits, 2, "cross_entropy_mean");
  const std::size_t rows = logits.dim(0), c = logits.dim(1);
  if (labels.size() != rows)
    throw DimensionError("cross_entropy_mean: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw ParameterError("cross_entropy_mean: label out of range");
  auto probs = std::make_shared<std::vector<double>>(rows * c);
  const double* pz = logits.data().data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = pz + r * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - m);
    const double lse = m + std::log(sum);
    for (std::size_t j = 0; j < c; ++j)
      (*probs)[r * c + j] = std::exp(row[j] - lse);
    total += lse - row[static_cast<std::size_t>(labels[r])];
  }
  Tensor loss = Tensor::scalar(total / static_cast<double>(rows));
  if (detail::track(tape, {&logits})) {
    loss.set_requires_grad(true);
    tape->record([logits, loss, probs, labels, rows, c] {
      if (!loss.has_grad()) return;
      const double g = loss.grad()[0] / static_cast<double>(rows);
      double* gz = logits.grad_buffer().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) gz[r * c + j] += g * (*probs)[r * c + j];
        gz[r * c + static_cast<std::size_t>(labels[r])] -= g;
      }
    });
  }
  return loss;
}

}  // namespace ops

/// Euclidean norm over the concatenation of the listed tensors' gradient
/// buffers. An empty list, or tensors whose gradient was never touched,
/// contribute zero; the empty set returns 0 by convention.
inline double grad_l2_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.defined() || !p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

}  // namespace tta
