#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tta/datagen.hpp"
#include "tta/errors.hpp"
#include "tta/optimizer.hpp"
#include "tta/tensor.hpp"
#include "tta/util.hpp"
#include "tta/version.hpp"

namespace tta {

/// Feed-forward classifier: [linear -> layer_norm -> relu] blocks followed by
/// a linear head. After pretraining the linear weights and biases are frozen;
/// only the layer-norm affine parameters (gamma, beta) stay adaptable.
class ClassifierModel {
 public:
  struct Block {
    Tensor weight;  // (in, out)
    Tensor bias;    // (out)
    Tensor gamma;   // (out)
    Tensor beta;    // (out)
  };

  ClassifierModel() = default;

  static ClassifierModel create(std::size_t input_dim,
                                std::vector<std::size_t> hidden_widths,
                                std::size_t num_classes, std::uint64_t init_seed) {
    if (input_dim == 0 || num_classes < 2 || hidden_widths.empty())
      throw ParameterError("classifier: need input_dim > 0, num_classes >= 2, "
                           "at least one hidden block");
    ClassifierModel m;
    m.input_dim_ = input_dim;
    m.num_classes_ = num_classes;
    Rng rng = make_rng(init_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto he_linear = [&](std::size_t in, std::size_t out) {
      std::vector<double> w(in * out);
      const double scl = std::sqrt(2.0 / static_cast<double>(in));
      for (double& v : w) v = scl * normal(rng);
      return Tensor::from_data({in, out}, std::move(w), true);
    };
    std::size_t in = input_dim;
    for (std::size_t width : hidden_widths) {
      Block b;
      b.weight = he_linear(in, width);
      b.bias = Tensor::zeros({width}, true);
      b.gamma = Tensor::full({width}, 1.0, true);
      b.beta = Tensor::zeros({width}, true);
      m.blocks_.push_back(std::move(b));
      in = width;
    }
    m.head_weight_ = he_linear(in, num_classes);
    m.head_bias_ = Tensor::zeros({num_classes}, true);
    return m;
  }

  /// Forward pass to logits (batch, num_classes). tape may be null for pure
  /// inference.
  Tensor logits(Tape* tape, const Tensor& batch) const {
    if (batch.rank() != 2 || batch.dim(1) != input_dim_)
      throw DimensionError("classifier: expected input (batch," +
                           std::to_string(input_dim_) + "), got " +
                           shape_str(batch.shape()));
    Tensor h = batch;
    for (const Block& b : blocks_) {
      h = ops::add(tape, ops::matmul(tape, h, b.weight), b.bias);
      h = ops::layer_norm(tape, h, b.gamma, b.beta, ln_eps_);
      h = ops::relu(tape, h);
    }
    return ops::add(tape, ops::matmul(tape, h, head_weight_), head_bias_);
  }

  /// Probabilities (batch, num_classes); rows sum to 1 within 1e-12.
  Tensor predict_probs(const Tensor& batch) const {
    return ops::softmax(nullptr, logits(nullptr, batch));
  }

  /// The layer-norm affine parameters in stable order:
  /// gamma_1, beta_1, gamma_2, beta_2, ...
  std::vector<Tensor> adaptable_params() const {
    std::vector<Tensor> out;
    out.reserve(2 * blocks_.size());
    for (const Block& b : blocks_) {
      out.push_back(b.gamma);
      out.push_back(b.beta);
    }
    return out;
  }

  std::vector<Tensor> backbone_params() const {
    std::vector<Tensor> out;
    for (const Block& b : blocks_) {
      out.push_back(b.weight);
      out.push_back(b.bias);
    }
    out.push_back(head_weight_);
    out.push_back(head_bias_);
    return out;
  }

  std::vector<Tensor> all_params() const {
    std::vector<Tensor> out = backbone_params();
    for (const Tensor& t : adaptable_params()) out.push_back(t);
    return out;
  }

  // Freezes everything except the layer-norm affine parameters.
  void freeze_backbone() {
    for (Tensor& t : backbone_params()) t.set_requires_grad(false);
    for (Tensor& t : adaptable_params()) t.set_requires_grad(true);
    frozen_ = true;
  }

  bool backbone_frozen() const { return frozen_; }

  std::uint64_t fingerprint_backbone() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor& t : backbone_params())
      h = fnv1a(t.data().data(), t.numel() * sizeof(double), h);
    return h;
  }

  std::uint64_t fingerprint_all() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor& t : all_params())
      h = fnv1a(t.data().data(), t.numel() * sizeof(double), h);
    return h;
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t num_classes() const { return num_classes_; }
  double layer_norm_eps() const { return ln_eps_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::vector<Block>& blocks() { return blocks_; }
  const Tensor& head_weight() const { return head_weight_; }
  const Tensor& head_bias() const { return head_bias_; }
  std::uint64_t pretrain_seed() const { return pretrain_seed_; }
  void set_pretrain_seed(std::uint64_t s) { pretrain_seed_ = s; }

  /// Deep copy with fresh storage; adaptation on the copy never touches the
  /// original.
  ClassifierModel clone() const {
    ClassifierModel m;
    m.input_dim_ = input_dim_;
    m.num_classes_ = num_classes_;
    m.ln_eps_ = ln_eps_;
    m.frozen_ = frozen_;
    m.pretrain_seed_ = pretrain_seed_;
    for (const Block& b : blocks_)
      m.blocks_.push_back(Block{b.weight.clone(), b.bias.clone(),
                                b.gamma.clone(), b.beta.clone()});
    m.head_weight_ = head_weight_.clone();
    m.head_bias_ = head_bias_.clone();
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open " + path);
    os.write("TTACKPT1", 8);
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(kCheckpointFormatVersion));
    io::write_pod<std::uint64_t>(os, pretrain_seed_);
    io::write_pod<std::uint8_t>(os, frozen_ ? 1 : 0);
    io::write_pod<double>(os, ln_eps_);
    io::write_pod<std::uint64_t>(os, input_dim_);
    io::write_pod<std::uint64_t>(os, num_classes_);
    io::write_pod<std::uint64_t>(os, blocks_.size());
    for (const Block& b : blocks_)
      io::write_pod<std::uint64_t>(os, b.gamma.dim(0));
    auto write_tensor = [&os](const Tensor& t, bool adaptable) {
      io::write_pod<std::uint8_t>(os, adaptable ? 1 : 0);
      io::write_pod<std::uint8_t>(os, t.requires_grad() ? 1 : 0);
      io::write_pod<std::uint64_t>(os, t.rank());
      for (std::size_t i = 0; i < t.rank(); ++i)
        io::write_pod<std::uint64_t>(os, t.dim(i));
      os.write(reinterpret_cast<const char*>(t.data().data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
    };
    for (const Block& b : blocks_) {
      write_tensor(b.weight, false);
      write_tensor(b.bias, false);
      write_tensor(b.gamma, true);
      write_tensor(b.beta, true);
    }
    write_tensor(head_weight_, false);
    write_tensor(head_bias_, false);
    if (!os) throw IoError("checkpoint: write failed for " + path);
  }

  static ClassifierModel load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "TTACKPT1", 8) != 0)
      throw IoError("checkpoint: bad magic in " + path);
    const auto version = io::read_pod<std::uint32_t>(is);
    if (version != static_cast<std::uint32_t>(kCheckpointFormatVersion))
      throw IoError("checkpoint: unsupported version " + std::to_string(version));
    ClassifierModel m;
    m.pretrain_seed_ = io::read_pod<std::uint64_t>(is);
    m.frozen_ = io::read_pod<std::uint8_t>(is) != 0;
    m.ln_eps_ = io::read_pod<double>(is);
    m.input_dim_ = io::read_pod<std::uint64_t>(is);
    m.num_classes_ = io::read_pod<std::uint64_t>(is);
    const auto n_blocks = io::read_pod<std::uint64_t>(is);
    std::vector<std::size_t> widths(n_blocks);
    for (auto& w : widths) w = io::read_pod<std::uint64_t>(is);
    auto read_tensor = [&is, &path]() {
      io::read_pod<std::uint8_t>(is);  // adaptable flag, implied by position
      const bool rg = io::read_pod<std::uint8_t>(is) != 0;
      const auto rank = io::read_pod<std::uint64_t>(is);
      Shape shape(rank);
      for (auto& d : shape) d = io::read_pod<std::uint64_t>(is);
      std::vector<double> data(shape_numel(shape));
      is.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
      if (!is) throw IoError("checkpoint: truncated tensor in " + path);
      return Tensor::from_data(std::move(shape), std::move(data), rg);
    };
    for (std::uint64_t i = 0; i < n_blocks; ++i) {
      Block b;
      b.weight = read_tensor();
      b.bias = read_tensor();
      b.gamma = read_tensor();
      b.beta = read_tensor();
      m.blocks_.push_back(std::move(b));
    }
    m.head_weight_ = read_tensor();
    m.head_bias_ = read_tensor();
    return m;
  }

 private:
  std::vector<Block> blocks_;
  Tensor head_weight_, head_bias_;
  std::size_t input_dim_ = 0;
  std::size_t num_classes_ = 0;
  double ln_eps_ = 1e-5;
  bool frozen_ = false;
  std::uint64_t pretrain_seed_ = 0;
};

/// Default architecture: 16x16 inputs flattened to 256, two hidden blocks of
/// width 128, four classes.
inline ClassifierModel default_classifier(std::uint64_t init_seed,
                                          std::size_t num_classes = 4) {
  return ClassifierModel::create(kImageSide * kImageSide, {128, 128},
                                 num_classes, init_seed);
}

struct PretrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
};

inline constexpr double kPretrainMomentum = 0.9;

struct TrainingCurve {
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
  double final_train_accuracy = 0.0;
  double final_val_accuracy = 0.0;
};

inline double eval_accuracy(const ClassifierModel& model, const Dataset& data) {
  if (data.items.empty()) throw MetricError("eval_accuracy: empty dataset");
  std::size_t correct = 0;
  const std::size_t chunk = 256;
  for (std::size_t off = 0; off < data.items.size(); off += chunk) {
    const std::size_t n = std::min(chunk, data.items.size() - off);
    Tensor probs = model.predict_probs(flatten_images(data.items, off, n));
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < model.num_classes(); ++c)
        if (probs(i, c) > probs(i, best)) best = c;
      if (static_cast<int>(best) == data.items[off + i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.items.size());
}

/// Source pretraining: SGD with momentum 0.9 on all parameters, then the
/// backbone is frozen so only gamma/beta stay adaptable. epochs == 0 leaves
/// the weights untouched (the freeze still happens).
inline TrainingCurve pretrain(ClassifierModel& model, const Dataset& train,
                              const Dataset& val, const PretrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0))
    throw ParameterError("pretrain: learning_rate must be > 0");
  if (cfg.batch_size == 0) throw ParameterError("pretrain: batch_size must be > 0");
  if (train.items.empty()) throw ContractError("pretrain: empty training set");
  for (const auto& im : train.items)
    if (im.label < 0 || static_cast<std::size_t>(im.label) >= model.num_classes())
      throw ParameterError("pretrain: label outside [0,C)");

  TrainingCurve curve;
  SgdMomentum opt(model.all_params(), cfg.learning_rate, kPretrainMomentum);
  Rng rng = make_rng(cfg.seed);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = shuffled_indices(train.items.size(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - off);
      std::vector<double> buf(n * model.input_dim());
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& im = train.items[order[off + i]];
        auto src = im.pixels.data();
        std::copy(src.begin(), src.end(),
                  buf.begin() + static_cast<long>(i * model.input_dim()));
        labels[i] = im.label;
      }
      Tensor batch = Tensor::from_data({n, model.input_dim()}, std::move(buf));
      Tape tape;
      Tensor loss = ops::cross_entropy_mean(&tape, model.logits(&tape, batch), labels);
      if (!std::isfinite(loss.value()))
        throw DivergenceError("pretrain: non-finite loss at epoch " +
                              std::to_string(epoch), epoch);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      loss_sum += loss.value();
      ++batches;
    }
    curve.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  model.freeze_backbone();
  model.set_pretrain_seed(cfg.seed);
  curve.final_train_accuracy = eval_accuracy(model, train);
  curve.final_val_accuracy = val.items.empty() ? 0.0 : eval_accuracy(model, val);
  return curve;
}

}  // namespace tta
