#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tta/classifier.hpp"
#include "tta/errors.hpp"
#include "tta/perturb.hpp"
#include "tta/tensor.hpp"

namespace tta {

/// The three selection gates. tau_grad runs in exactly one of two modes:
/// an absolute threshold (absolute, tau_grad, +inf allowed) or a batch
/// quantile (quantile, grad_quantile in (0,1)) resolved over the entropy-gate
/// survivors of each batch. All gate comparisons are strict.
struct Thresholds {
  enum class GradMode { absolute, quantile };

  double tau_ent = 0.0;         // nats, > 0
  GradMode grad_mode = GradMode::quantile;
  double tau_grad = 0.0;        // absolute mode only
  double grad_quantile = 0.9;   // quantile mode only
  double tau_plpd = 0.2;        // in [-1, 1]

  static Thresholds defaults(std::size_t num_classes) {
    Thresholds t;
    t.tau_ent = 0.4 * std::log(static_cast<double>(num_classes));
    t.grad_mode = GradMode::quantile;
    t.grad_quantile = 0.9;
    t.tau_plpd = 0.2;
    return t;
  }

  static Thresholds absolute(double tau_ent, double tau_grad, double tau_plpd) {
    Thresholds t;
    t.tau_ent = tau_ent;
    t.grad_mode = GradMode::absolute;
    t.tau_grad = tau_grad;
    t.tau_plpd = tau_plpd;
    return t;
  }

  void validate() const {
    if (!(tau_ent > 0.0)) throw ParameterError("thresholds: tau_ent must be > 0");
    if (grad_mode == GradMode::absolute) {
      if (std::isnan(tau_grad) || tau_grad <= 0.0)
        throw ParameterError("thresholds: absolute tau_grad must be > 0");
    } else {
      if (!(grad_quantile > 0.0) || !(grad_quantile < 1.0))
        throw ParameterError("thresholds: grad_quantile must be in (0,1)");
    }
    if (tau_plpd < -1.0 || tau_plpd > 1.0)
      throw ParameterError("thresholds: tau_plpd must be in [-1,1]");
  }
};

/// Per-sample diagnostics. plpd is only present when the pipeline computed it
/// (gate-1 survivors in production, everyone in diagnostic mode); a sample
/// without plpd is never selected. Areas follow the entropy x plpd quadrants:
/// 1 entropy fail / plpd fail, 2 entropy fail / plpd pass, 3 entropy pass /
/// plpd fail, 4 entropy pass / plpd pass (the gradient gate then splits area
/// 4 into noisy vs selected). A missing plpd counts as a plpd fail.
struct SampleRecord {
  std::size_t index = 0;
  double entropy = 0.0;
  double grad_norm = 0.0;
  std::optional<double> plpd;
  int area = 1;
  bool selected = false;
  int pseudo_label = 0;
};

enum class SelectionMode { production, diagnostic };

struct SelectionResult {
  std::vector<SampleRecord> records;
  std::vector<std::size_t> selected;          // S'
  std::vector<std::size_t> gate1_survivors;   // entropy + grad gates
  std::optional<double> grad_threshold_used;  // resolved absolute value
};

/// Shannon entropy of a distribution, in nats, with 0*ln(0) := 0. The input
/// must sum to 1 within 1e-6.
inline double entropy(std::span<const double> probs) {
  if (probs.empty()) throw ContractError("entropy: empty distribution");
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0 || p > 1.0)
      throw ContractError("entropy: probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ContractError("entropy: distribution sums to " + std::to_string(sum));
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

/// Eq-style pseudo-label probability difference:
/// probs_before[pseudo_label] - probs_after[pseudo_label].
inline double plpd(std::span<const double> probs_before,
                   std::span<const double> probs_after, int pseudo_label) {
  if (probs_before.size() != probs_after.size())
    throw DimensionError("plpd: distributions differ in length");
  if (pseudo_label < 0 ||
      static_cast<std::size_t>(pseudo_label) >= probs_before.size())
    throw ParameterError("plpd: pseudo_label out of range");
  return probs_before[static_cast<std::size_t>(pseudo_label)] -
         probs_after[static_cast<std::size_t>(pseudo_label)];
}

/// L2 norm of the gradient of the single-sample entropy loss with respect to
/// the model's adaptable parameters. The model is left untouched: gradients
/// are computed on a scratch tape and cleared afterwards. A model with no
/// adaptable parameters yields 0 by the empty-set convention.
inline double sample_grad_norm(const ClassifierModel& model, const Tensor& sample) {
  Tensor row;
  if (sample.rank() == 2 && sample.dim(0) == 1) {
    row = sample;
  } else {
    std::vector<double> buf(sample.data().begin(), sample.data().end());
    row = Tensor::from_data({1, sample.numel()}, std::move(buf));
  }
  std::vector<Tensor> params = model.adaptable_params();
  for (const Tensor& p : params) p.clear_grad();
  Tape tape;
  Tensor h = ops::softmax_entropy(&tape, model.logits(&tape, row));
  if (tape.node_count() == 0) return 0.0;  // nothing adaptable
  tape.backward(h);
  const double norm = grad_l2_norm(params);
  for (const Tensor& p : params) p.clear_grad();
  return norm;
}

/// Linear-interpolation quantile (rank q*(n-1) of the ascending sort).
inline double linear_quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw ContractError("quantile of empty set");
  std::sort(xs.begin(), xs.end());
  if (xs.size() == 1) return xs[0];
  const double pos = q * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

namespace detail {

/// Which gates a strategy applies; select() itself always applies all three.
struct GateSet {
  bool entropy = true;
  bool grad = true;
  bool plpd = true;
};

inline SelectionResult run_selection(const ClassifierModel& model,
                                     const std::vector<LabeledImage>& batch,
                                     std::size_t begin, std::size_t count,
                                     const Thresholds& thresholds,
                                     const PatchShuffleSpec& shuffle_spec,
                                     GateSet gates, SelectionMode mode) {
  if (count == 0) throw ContractError("select: empty batch");
  thresholds.validate();

  SelectionResult result;
  result.records.resize(count);

  Tensor inputs = flatten_images(batch, begin, count);
  Tensor probs_before = model.predict_probs(inputs);
  const std::size_t n_classes = model.num_classes();

  // Entropy gate and pseudo-labels for everyone.
  std::vector<bool> ent_pass(count, true);
  for (std::size_t i = 0; i < count; ++i) {
    SampleRecord& rec = result.records[i];
    rec.index = begin + i;
    std::span<const double> row(probs_before.data().data() + i * n_classes,
                                n_classes);
    rec.entropy = entropy(row);
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c)
      if (row[c] > row[best]) best = c;
    rec.pseudo_label = static_cast<int>(best);
    if (gates.entropy) ent_pass[i] = rec.entropy < thresholds.tau_ent;
  }

  // Per-sample gradient norms. Skipped when the gradient gate is off and no
  // diagnostics were requested.
  const bool need_grad = gates.grad || mode == SelectionMode::diagnostic;
  if (need_grad) {
    std::vector<double> flat(model.input_dim());
    for (std::size_t i = 0; i < count; ++i) {
      std::copy_n(inputs.data().data() + i * model.input_dim(),
                  model.input_dim(), flat.begin());
      result.records[i].grad_norm = sample_grad_norm(
          model, Tensor::from_data({1, model.input_dim()},
                                   {flat.begin(), flat.end()}));
    }
  }

  // Resolve the gradient threshold and apply gate 1.
  std::vector<bool> grad_pass(count, true);
  if (gates.grad) {
    double thr;
    if (thresholds.grad_mode == Thresholds::GradMode::absolute) {
      thr = thresholds.tau_grad;
    } else {
      std::vector<double> survivors;
      for (std::size_t i = 0; i < count; ++i)
        if (ent_pass[i]) survivors.push_back(result.records[i].grad_norm);
      if (survivors.empty()) {
        thr = 0.0;  // no entropy survivors; gate 1 is already empty
      } else {
        thr = linear_quantile(std::move(survivors), thresholds.grad_quantile);
        result.grad_threshold_used = thr;
      }
    }
    if (thresholds.grad_mode == Thresholds::GradMode::absolute)
      result.grad_threshold_used = thr;
    for (std::size_t i = 0; i < count; ++i)
      grad_pass[i] = result.records[i].grad_norm < thr;
  }

  for (std::size_t i = 0; i < count; ++i)
    if (ent_pass[i] && grad_pass[i]) result.gate1_survivors.push_back(i);

  // Patch shuffle + PLPD for gate-1 survivors (everyone in diagnostic mode).
  std::vector<std::size_t> plpd_targets;
  if (mode == SelectionMode::diagnostic) {
    plpd_targets.resize(count);
    std::iota(plpd_targets.begin(), plpd_targets.end(), std::size_t{0});
  } else if (gates.plpd) {
    plpd_targets = result.gate1_survivors;
  }

  if (!plpd_targets.empty()) {
    const std::size_t h = batch[begin].pixels.dim(0);
    const std::size_t w = batch[begin].pixels.dim(1);
    const std::size_t n_patches =
        (h / shuffle_spec.patch_size) * (w / shuffle_spec.patch_size);
    std::vector<std::size_t> shared_perm;
    if (!shuffle_spec.per_image_permutation)
      shared_perm = patch_permutation(n_patches, shuffle_spec.permutation_seed);

    std::vector<double> buf(plpd_targets.size() * model.input_dim());
    for (std::size_t t = 0; t < plpd_targets.size(); ++t) {
      const std::size_t i = plpd_targets[t];
      Tensor shuffled;
      if (shuffle_spec.per_image_permutation) {
        auto perm = patch_permutation(
            n_patches, mix_seed(shuffle_spec.permutation_seed, begin + i));
        shuffled = apply_patch_permutation(batch[begin + i].pixels, perm,
                                           shuffle_spec.patch_size);
      } else {
        shuffled = apply_patch_permutation(batch[begin + i].pixels, shared_perm,
                                           shuffle_spec.patch_size);
      }
      std::copy(shuffled.data().begin(), shuffled.data().end(),
                buf.begin() + static_cast<long>(t * model.input_dim()));
    }
    Tensor probs_after = model.predict_probs(
        Tensor::from_data({plpd_targets.size(), model.input_dim()},
                          std::move(buf)));
    for (std::size_t t = 0; t < plpd_targets.size(); ++t) {
      const std::size_t i = plpd_targets[t];
      SampleRecord& rec = result.records[i];
      std::span<const double> before(probs_before.data().data() + i * n_classes,
                                     n_classes);
      std::span<const double> after(probs_after.data().data() + t * n_classes,
                                    n_classes);
      rec.plpd = plpd(before, after, rec.pseudo_label);
    }
  }

  // Final gate, area assignment, S'.
  for (std::size_t i = 0; i < count; ++i) {
    SampleRecord& rec = result.records[i];
    const bool plpd_pass =
        !gates.plpd || (rec.plpd.has_value() && *rec.plpd > thresholds.tau_plpd);
    const bool in_gate1 = ent_pass[i] && grad_pass[i];
    rec.selected = in_gate1 && plpd_pass &&
                   (!gates.plpd || rec.plpd.has_value());
    if (rec.selected) result.selected.push_back(i);

    const bool area_plpd_pass =
        rec.plpd.has_value() && *rec.plpd > thresholds.tau_plpd;
    const bool area_ent_pass = rec.entropy < thresholds.tau_ent;
    if (!area_ent_pass)
      rec.area = area_plpd_pass ? 2 : 1;
    else
      rec.area = area_plpd_pass ? 4 : 3;
  }
  return result;
}

}  // namespace detail

/// The full three-gate selection (Algorithm-1 semantics): keep samples with
/// entropy < tau_ent and grad_norm < tau_grad, patch-shuffle the survivors,
/// keep plpd > tau_plpd. Records cover every batch element; an empty S' is a
/// valid outcome.
inline SelectionResult select(const ClassifierModel& model,
                              const std::vector<LabeledImage>& batch,
                              const Thresholds& thresholds,
                              const PatchShuffleSpec& shuffle_spec,
                              SelectionMode mode = SelectionMode::production) {
  return detail::run_selection(model, batch, 0, batch.size(), thresholds,
                               shuffle_spec, detail::GateSet{}, mode);
}

/// One CSV row per sample; loads straight into the usual plotting stacks for
/// area scatter plots.
inline void write_sample_records_csv(std::ostream& os,
                                     const std::vector<SampleRecord>& records) {
  os << "index,entropy,grad_norm,plpd,area,selected,pseudo_label\n";
  char line[160];
  for (const SampleRecord& r : records) {
    if (r.plpd.has_value())
      std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%d,%d,%d\n",
                    r.index, r.entropy, r.grad_norm, *r.plpd, r.area,
                    r.selected ? 1 : 0, r.pseudo_label);
    else
      std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,,%d,%d,%d\n", r.index,
                    r.entropy, r.grad_norm, r.area, r.selected ? 1 : 0,
                    r.pseudo_label);
    os << line;
  }
}

inline void write_sample_records_csv(const std::string& path,
                                     const std::vector<SampleRecord>& records) {
  std::ofstream os(path);
  if (!os) throw IoError("sample records: cannot open " + path);
  write_sample_records_csv(os, records);
}

}  // namespace tta
