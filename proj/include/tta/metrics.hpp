#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tta/errors.hpp"

namespace tta {

/// One evaluated prediction: the full distribution, its argmax and max, and
/// the ground truth.
struct EvalRecord {
  std::vector<double> full_probs;
  double confidence = 0.0;  // max(full_probs)
  int predicted = 0;        // argmax(full_probs)
  int true_label = 0;
};

inline EvalRecord make_eval_record(std::vector<double> probs, int true_label) {
  if (probs.empty()) throw ContractError("eval record: empty distribution");
  EvalRecord r;
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.size(); ++c)
    if (probs[c] > probs[best]) best = c;
  r.predicted = static_cast<int>(best);
  r.confidence = probs[best];
  r.true_label = true_label;
  r.full_probs = std::move(probs);
  return r;
}

inline double accuracy(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw MetricError("accuracy: no records");
  std::size_t correct = 0;
  for (const auto& r : records)
    if (r.predicted == r.true_label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

namespace detail {

struct BinStats {
  std::size_t count = 0;
  double conf_sum = 0.0;
  double acc_sum = 0.0;
};

// Equal-width bins on (0,1]: bin i covers (i/n, (i+1)/n].
inline std::vector<BinStats> confidence_bins(const std::vector<EvalRecord>& records,
                                             std::size_t n_bins) {
  if (records.empty()) throw MetricError("calibration: no records");
  if (n_bins < 1) throw ParameterError("calibration: n_bins must be >= 1");
  std::vector<BinStats> bins(n_bins);
  for (const auto& r : records) {
    const double c = r.confidence;
    std::size_t idx;
    if (c <= 0.0) {
      idx = 0;
    } else {
      idx = static_cast<std::size_t>(
          std::ceil(c * static_cast<double>(n_bins))) - 1;
      idx = std::min(idx, n_bins - 1);
    }
    bins[idx].count++;
    bins[idx].conf_sum += c;
    bins[idx].acc_sum += (r.predicted == r.true_label) ? 1.0 : 0.0;
  }
  return bins;
}

}  // namespace detail

/// Expected calibration error: sum over non-empty bins of
/// (|bin|/N) * |acc(bin) - conf(bin)|.
inline double ece(const std::vector<EvalRecord>& records, std::size_t n_bins = 15) {
  auto bins = detail::confidence_bins(records, n_bins);
  const double n = static_cast<double>(records.size());
  double out = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    const double cnt = static_cast<double>(b.count);
    out += (cnt / n) * std::abs(b.acc_sum / cnt - b.conf_sum / cnt);
  }
  return out;
}

/// Maximum calibration error: max over non-empty bins of |acc - conf|.
inline double mce(const std::vector<EvalRecord>& records, std::size_t n_bins = 15) {
  auto bins = detail::confidence_bins(records, n_bins);
  double out = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    const double cnt = static_cast<double>(b.count);
    out = std::max(out, std::abs(b.acc_sum / cnt - b.conf_sum / cnt));
  }
  return out;
}

/// Class-normalized Brier score: mean over records of
/// (1/C) * sum_c (p_c - 1[c == true_label])^2.
inline double brier(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw MetricError("brier: no records");
  double total = 0.0;
  for (const auto& r : records) {
    double s = 0.0;
    for (std::size_t c = 0; c < r.full_probs.size(); ++c) {
      const double target = (static_cast<int>(c) == r.true_label) ? 1.0 : 0.0;
      const double d = r.full_probs[c] - target;
      s += d * d;
    }
    total += s / static_cast<double>(r.full_probs.size());
  }
  return total / static_cast<double>(records.size());
}

/// Misclassification-detection AUROC: confidence as a score for the event
/// "prediction is correct", Mann-Whitney formulation with midranks so ties
/// contribute 1/2. Needs at least one correct and one incorrect record.
inline double auroc(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw MetricError("auroc: no records");
  std::vector<std::pair<double, bool>> scored;  // (confidence, is_correct)
  scored.reserve(records.size());
  std::size_t n_pos = 0;
  for (const auto& r : records) {
    const bool correct = r.predicted == r.true_label;
    scored.emplace_back(r.confidence, correct);
    if (correct) ++n_pos;
  }
  const std::size_t n_neg = scored.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("auroc: needs both correct and incorrect records");

  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < scored.size()) {
    std::size_t j = i;
    while (j < scored.size() && scored[j].first == scored[i].first) ++j;
    // midrank of the tie group [i, j), 1-based ranks
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (scored[k].second) rank_sum_pos += midrank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace tta
