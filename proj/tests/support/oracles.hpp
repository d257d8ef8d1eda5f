// Independent oracle implementations used by the unit and acceptance suites.
// Everything here recomputes results from scratch (naive loops, finite
// differences, pairwise enumeration) and stays off the library's fast paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <set>
#include <span>
#include <vector>

#include "tta/classifier.hpp"
#include "tta/metrics.hpp"
#include "tta/selection.hpp"
#include "tta/tensor.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Central difference of f() with respect to element i of t, restoring t.
inline double central_diff(const std::function<double()>& f, const tta::Tensor& t,
                           std::size_t i, double step) {
  auto& d = t.mutable_data();
  const double orig = d[i];
  d[i] = orig + step;
  const double hi = f();
  d[i] = orig - step;
  const double lo = f();
  d[i] = orig;
  return (hi - lo) / (2.0 * step);
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-3});
  return std::abs(a - b) / denom;
}

// ---------------------------------------------------------------------------
// Naive numerics
// ---------------------------------------------------------------------------

inline std::vector<double> matmul_naive(std::span<const double> a,
                                        std::span<const double> b, std::size_t m,
                                        std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

inline std::vector<double> softmax_naive(std::span<const double> logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline double entropy_naive(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

// Re-implemented classifier forward: raw loops over the model's weights.
inline std::vector<double> forward_probs_naive(const tta::ClassifierModel& model,
                                               std::span<const double> x) {
  std::vector<double> h(x.begin(), x.end());
  const double eps = model.layer_norm_eps();
  for (const auto& block : model.blocks()) {
    const std::size_t in = block.weight.dim(0), out = block.weight.dim(1);
    std::vector<double> z(out, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
      double acc = block.bias[j];
      for (std::size_t i = 0; i < in; ++i) acc += h[i] * block.weight(i, j);
      z[j] = acc;
    }
    double mean = 0.0;
    for (double v : z) mean += v;
    mean /= static_cast<double>(out);
    double var = 0.0;
    for (double v : z) var += (v - mean) * (v - mean);
    var /= static_cast<double>(out);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < out; ++j) {
      const double xh = (z[j] - mean) * inv_std;
      const double y = block.gamma[j] * xh + block.beta[j];
      z[j] = y > 0.0 ? y : 0.0;
    }
    h = std::move(z);
  }
  const std::size_t in = model.head_weight().dim(0);
  const std::size_t c = model.head_weight().dim(1);
  std::vector<double> logits(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    double acc = model.head_bias()[j];
    for (std::size_t i = 0; i < in; ++i) acc += h[i] * model.head_weight()(i, j);
    logits[j] = acc;
  }
  return softmax_naive(logits);
}

// Per-sample entropy-loss gradient norm over the adaptable parameters, by
// central differences through the naive forward.
inline double grad_norm_fd_naive(const tta::ClassifierModel& model,
                                 std::span<const double> x, double step = 1e-6) {
  tta::ClassifierModel m = model.clone();
  std::vector<double> xv(x.begin(), x.end());
  auto loss = [&]() { return entropy_naive(forward_probs_naive(m, xv)); };
  double sq = 0.0;
  for (const tta::Tensor& p : m.adaptable_params())
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double g = central_diff(loss, p, i, step);
      sq += g * g;
    }
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// Brute-force selection filter (exhaustively recomputed, own gating code)
// ---------------------------------------------------------------------------

struct BruteForceSelection {
  std::set<std::size_t> selected;
  std::set<std::size_t> gate1;
};

inline double quantile_naive(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  if (xs.size() == 1) return xs.front();
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline std::vector<double> apply_perm_naive(std::span<const double> img,
                                            std::size_t h, std::size_t w,
                                            const std::vector<std::size_t>& perm,
                                            std::size_t patch) {
  const std::size_t cols = w / patch;
  std::vector<double> out(h * w);
  for (std::size_t slot = 0; slot < perm.size(); ++slot) {
    const std::size_t from = perm[slot];
    for (std::size_t r = 0; r < patch; ++r)
      for (std::size_t c = 0; c < patch; ++c)
        out[((slot / cols) * patch + r) * w + (slot % cols) * patch + c] =
            img[((from / cols) * patch + r) * w + (from % cols) * patch + c];
  }
  return out;
}

// grad_norms may be supplied (e.g. FD-computed) to keep the filter itself
// the unit under test; when empty they are FD-recomputed here.
inline BruteForceSelection brute_force_select(
    const tta::ClassifierModel& model, const std::vector<tta::LabeledImage>& batch,
    const tta::Thresholds& th, const std::vector<std::size_t>& perm,
    std::size_t patch_size, const std::vector<double>& grad_norms_in = {}) {
  BruteForceSelection out;
  const std::size_t n = batch.size();

  std::vector<std::vector<double>> probs(n);
  std::vector<double> ent(n);
  std::vector<double> gnorm(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto px = batch[i].pixels.data();
    probs[i] = forward_probs_naive(model, px);
    ent[i] = entropy_naive(probs[i]);
    gnorm[i] = grad_norms_in.empty() ? grad_norm_fd_naive(model, px)
                                     : grad_norms_in[i];
  }

  std::vector<std::size_t> ent_pass;
  for (std::size_t i = 0; i < n; ++i)
    if (ent[i] < th.tau_ent) ent_pass.push_back(i);

  double tau_grad;
  if (th.grad_mode == tta::Thresholds::GradMode::absolute) {
    tau_grad = th.tau_grad;
  } else {
    if (ent_pass.empty()) return out;
    std::vector<double> survivors;
    for (std::size_t i : ent_pass) survivors.push_back(gnorm[i]);
    tau_grad = quantile_naive(survivors, th.grad_quantile);
  }

  for (std::size_t i : ent_pass)
    if (gnorm[i] < tau_grad) out.gate1.insert(i);

  for (std::size_t i : out.gate1) {
    const auto& img = batch[i].pixels;
    std::vector<double> shuffled = apply_perm_naive(
        img.data(), img.dim(0), img.dim(1), perm, patch_size);
    std::vector<double> after = forward_probs_naive(model, shuffled);
    std::size_t yhat = 0;
    for (std::size_t c = 1; c < probs[i].size(); ++c)
      if (probs[i][c] > probs[i][yhat]) yhat = c;
    const double pd = probs[i][yhat] - after[yhat];
    if (pd > th.tau_plpd) out.selected.insert(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric oracles
// ---------------------------------------------------------------------------

inline double accuracy_naive(const std::vector<tta::EvalRecord>& rs) {
  std::size_t c = 0;
  for (const auto& r : rs) c += (r.predicted == r.true_label) ? 1 : 0;
  return static_cast<double>(c) / static_cast<double>(rs.size());
}

// Loop-the-bins enumeration of ECE/MCE over (lo, hi] edges.
inline std::pair<double, double> ece_mce_naive(const std::vector<tta::EvalRecord>& rs,
                                               std::size_t n_bins) {
  double ece = 0.0, mce = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(n_bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    double conf = 0.0, acc = 0.0;
    std::size_t count = 0;
    for (const auto& r : rs) {
      const bool in_bin = b == 0 ? (r.confidence <= hi)
                                 : (r.confidence > lo && r.confidence <= hi);
      if (!in_bin) continue;
      ++count;
      conf += r.confidence;
      acc += (r.predicted == r.true_label) ? 1.0 : 0.0;
    }
    if (count == 0) continue;
    const double gap =
        std::abs(acc / static_cast<double>(count) - conf / static_cast<double>(count));
    ece += (static_cast<double>(count) / static_cast<double>(rs.size())) * gap;
    mce = std::max(mce, gap);
  }
  return {ece, mce};
}

inline double brier_naive(const std::vector<tta::EvalRecord>& rs) {
  double total = 0.0;
  for (const auto& r : rs) {
    double s = 0.0;
    for (std::size_t c = 0; c < r.full_probs.size(); ++c) {
      const double t = static_cast<int>(c) == r.true_label ? 1.0 : 0.0;
      s += (r.full_probs[c] - t) * (r.full_probs[c] - t);
    }
    total += s / static_cast<double>(r.full_probs.size());
  }
  return total / static_cast<double>(rs.size());
}

// O(n^2) pairwise comparison with the tie-counts-half convention.
inline double auroc_pairwise(const std::vector<tta::EvalRecord>& rs) {
  std::vector<double> pos, neg;
  for (const auto& r : rs)
    (r.predicted == r.true_label ? pos : neg).push_back(r.confidence);
  double score = 0.0;
  for (double p : pos)
    for (double q : neg) {
      if (p > q)
        score += 1.0;
      else if (p == q)
        score += 0.5;
    }
  return score / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// ---------------------------------------------------------------------------
// Chi-square independence statistic for the spurious-cue check
// ---------------------------------------------------------------------------

inline double chi_square_statistic(const std::vector<std::vector<double>>& table) {
  const std::size_t rows = table.size(), cols = table[0].size();
  std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      row_sum[r] += table[r][c];
      col_sum[c] += table[r][c];
      total += table[r][c];
    }
  double stat = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double expected = row_sum[r] * col_sum[c] / total;
      if (expected > 0.0) {
        const double d = table[r][c] - expected;
        stat += d * d / expected;
      }
    }
  return stat;
}

}  // namespace oracle
