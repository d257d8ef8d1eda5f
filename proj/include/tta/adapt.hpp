#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tta/classifier.hpp"
#include "tta/errors.hpp"
#include "tta/metrics.hpp"
#include "tta/optimizer.hpp"
#include "tta/selection.hpp"
#include "tta/tensor.hpp"

namespace tta {

/// Adaptation strategies. tent/entropy_plpd are the degenerate gate sets of
/// the full pipeline: tent keeps the entropy gate only (or no gate at all
/// with tent_use_all_samples), entropy_plpd drops the gradient gate.
enum class Strategy { no_adapt, tent, entropy_plpd, etage };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::no_adapt: return "no_adapt";
    case Strategy::tent: return "tent";
    case Strategy::entropy_plpd: return "entropy_plpd";
    case Strategy::etage: return "etage";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "no_adapt") return Strategy::no_adapt;
  if (s == "tent") return Strategy::tent;
  if (s == "entropy_plpd") return Strategy::entropy_plpd;
  if (s == "etage") return Strategy::etage;
  throw ParameterError("unknown strategy: " + s);
}

struct AdaptConfig {
  Strategy strategy = Strategy::etage;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  Thresholds thresholds;          // defaults resolved against C by callers
  PatchShuffleSpec shuffle_spec;  // patch size 4, batch-shared permutation
  std::uint64_t seed = 0;
  bool tent_use_all_samples = false;

  void validate() const {
    if (!(learning_rate > 0.0))
      throw ParameterError("adapt: learning_rate must be > 0");
    if (batch_size < 1) throw ParameterError("adapt: batch_size must be >= 1");
    thresholds.validate();
  }
};

struct StepTrace {
  std::size_t batch_index = 0;
  std::size_t n_gate1_survivors = 0;
  std::size_t n_selected = 0;
  double loss_value = 0.0;         // sum of selected entropies, nats
  double param_update_norm = 0.0;  // L2 of the applied parameter delta
};

/// The patch permutation is resampled for every batch: batch k of a stream
/// draws its permutation from this derived spec.
inline PatchShuffleSpec batch_shuffle_spec(const PatchShuffleSpec& base,
                                           std::size_t batch_index) {
  PatchShuffleSpec spec = base;
  spec.permutation_seed = mix_seed(base.permutation_seed, 0xBA7C4, batch_index);
  return spec;
}

inline detail::GateSet gates_for(Strategy s, bool tent_use_all_samples) {
  switch (s) {
    case Strategy::tent:
      if (tent_use_all_samples) return {false, false, false};
      return {true, false, false};
    case Strategy::entropy_plpd:
      return {true, false, true};
    case Strategy::etage:
    default:
      return {true, true, true};
  }
}

/// Drives the online loop for one stream: selection, entropy-sum loss over
/// S', one momentum-SGD step on the layer-norm affine parameters. Momentum
/// state persists across batches; create a fresh engine per run.
class AdaptEngine {
 public:
  AdaptEngine(ClassifierModel& model, const AdaptConfig& config)
      : model_(&model),
        cfg_(config),
        opt_(model.adaptable_params(), config.learning_rate, config.momentum) {
    cfg_.validate();
    if (!model.backbone_frozen())
      throw ContractError("adapt: model must be pretrained (backbone frozen)");
  }

  const AdaptConfig& config() const { return cfg_; }

  /// One Algorithm-1 step on a batch. If S' comes out empty the parameters
  /// are left untouched (the optimizer is not even ticked).
  StepTrace adapt_step(const std::vector<LabeledImage>& stream, std::size_t begin,
                       std::size_t count, std::size_t batch_index) {
    StepTrace trace;
    trace.batch_index = batch_index;
    if (cfg_.strategy == Strategy::no_adapt || count == 0) return trace;

    SelectionResult sel = detail::run_selection(
        *model_, stream, begin, count, cfg_.thresholds,
        batch_shuffle_spec(cfg_.shuffle_spec, batch_index),
        gates_for(cfg_.strategy, cfg_.tent_use_all_samples),
        SelectionMode::production);
    trace.n_gate1_survivors = sel.gate1_survivors.size();
    trace.n_selected = sel.selected.size();
    if (sel.selected.empty()) return trace;

    std::vector<double> buf(sel.selected.size() * model_->input_dim());
    for (std::size_t t = 0; t < sel.selected.size(); ++t) {
      const auto& px = stream[begin + sel.selected[t]].pixels;
      std::copy(px.data().begin(), px.data().end(),
                buf.begin() + static_cast<long>(t * model_->input_dim()));
    }
    Tensor selected_batch = Tensor::from_data(
        {sel.selected.size(), model_->input_dim()}, std::move(buf));

    Tape tape;
    Tensor entropies =
        ops::softmax_entropy(&tape, model_->logits(&tape, selected_batch));
    Tensor loss = ops::sum(&tape, entropies);
    if (!std::isfinite(loss.value())) {
      std::string idx;
      for (std::size_t i : sel.selected) idx += std::to_string(begin + i) + " ";
      throw DivergenceError("adapt: non-finite loss at batch " +
                            std::to_string(batch_index) + ", selected: " + idx,
                            batch_index);
    }
    trace.loss_value = loss.value();
    opt_.zero_grad();
    tape.backward(loss);
    opt_.step();
    opt_.zero_grad();
    trace.param_update_norm = opt_.last_update_norm();
    return trace;
  }

 private:
  ClassifierModel* model_;
  AdaptConfig cfg_;
  SgdMomentum opt_;
};

struct StreamResult {
  std::vector<StepTrace> traces;
  std::vector<EvalRecord> predictions;  // recorded before adapting on a batch
};

/// Online evaluation protocol: for each batch, predict with the current
/// parameters, then adapt on that same batch. The model is adapted in place;
/// the last partial batch is processed as-is.
inline StreamResult run_stream(ClassifierModel& model,
                               const std::vector<LabeledImage>& stream,
                               const AdaptConfig& config) {
  config.validate();
  StreamResult result;
  result.predictions.reserve(stream.size());
  AdaptEngine engine(model, config);
  std::size_t batch_index = 0;
  for (std::size_t off = 0; off < stream.size(); off += config.batch_size) {
    const std::size_t n = std::min(config.batch_size, stream.size() - off);
    Tensor probs = model.predict_probs(flatten_images(stream, off, n));
    const std::size_t c = model.num_classes();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(probs.data().begin() + static_cast<long>(i * c),
                              probs.data().begin() + static_cast<long>((i + 1) * c));
      result.predictions.push_back(
          make_eval_record(std::move(row), stream[off + i].label));
    }
    result.traces.push_back(engine.adapt_step(stream, off, n, batch_index));
    ++batch_index;
  }
  return result;
}

}  // namespace tta
