#pragma once

#include <cmath>
#include <vector>

#include "ctcdrive/seqmodel/params.hpp"

namespace ctcdrive::train {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.04;
};

/// Adam with decoupled weight decay. Decay applies to matrices and the
/// embedding table (rank >= 2), not to biases or norm parameters.
template <class T>
class AdamW {
 public:
  AdamW(model::ModelParams<T>& params, AdamWOptions options) : options_(options) {
    for (auto* p : params.tensors()) {
      params_.push_back(*p);  // handles share storage with `params`
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  /// Global L2 norm of all parameter gradients.
  double grad_norm() const {
    double s = 0;
    for (const auto& p : params_) {
      for (T g : p.grad()) s += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(s);
  }

  /// Clips the gradient to max_norm, then takes one step. Returns the pre-clip norm.
  double step(double lr, double max_norm) {
    const double norm = grad_norm();
    const double clip = norm > max_norm ? max_norm / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto value = p.mutable_values();
      auto grad = p.grad();
      const bool decay = p.rank() >= 2;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = static_cast<double>(grad[j]) * clip;
        m[j] = options_.beta1 * m[j] + (1 - options_.beta1) * g;
        v[j] = options_.beta2 * v[j] + (1 - options_.beta2) * g * g;
        double x = static_cast<double>(value[j]);
        if (decay) x -= lr * options_.weight_decay * x;
        x -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
        value[j] = static_cast<T>(x);
      }
    }
    return norm;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t steps_taken() const { return t_; }

 private:
  AdamWOptions options_;
  std::vector<grad::Tensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace ctcdrive::train
