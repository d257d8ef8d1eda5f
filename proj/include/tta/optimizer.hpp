#pragma once

#include <cmath>
#include <vector>

#include "tta/errors.hpp"
#include "tta/tensor.hpp"

namespace tta {

/// Plain SGD with momentum: v = mu*v + g, p -= lr*v. Velocity persists for
/// the lifetime of the optimizer, so online adaptation keeps momentum state
/// across batches and a fresh run gets a fresh optimizer.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double learning_rate, double momentum)
      : params_(std::move(params)), lr_(learning_rate), momentum_(momentum) {
    if (!(lr_ > 0.0)) throw ParameterError("sgd: learning_rate must be > 0");
    if (momentum_ < 0.0 || momentum_ >= 1.0)
      throw ParameterError("sgd: momentum must be in [0,1)");
    velocity_.reserve(params_.size());
    for (const Tensor& p : params_)
      velocity_.emplace_back(p.numel(), 0.0);
  }

  // Applies one update from the gradients currently on the parameters.
  // Parameters without a gradient buffer are treated as zero-gradient.
  void step() {
    double sq = 0.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      std::vector<double>& v = velocity_[i];
      const bool has_g = p.has_grad();
      const double* g = has_g ? p.grad().data() : nullptr;
      double* d = p.mutable_data().data();
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = momentum_ * v[j] + (has_g ? g[j] : 0.0);
        const double delta = lr_ * v[j];
        if (!std::isfinite(delta))
          throw NumericsError("sgd: non-finite parameter update");
        d[j] -= delta;
        sq += delta * delta;
      }
    }
    last_update_norm_ = std::sqrt(sq);
  }

  void zero_grad() {
    for (const Tensor& p : params_) p.clear_grad();
  }

  double last_update_norm() const { return last_update_norm_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
  double last_update_norm_ = 0.0;
};

}  // namespace tta
