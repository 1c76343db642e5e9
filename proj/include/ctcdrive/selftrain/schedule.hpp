#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ctcdrive/rng.hpp"
#include "ctcdrive/selftrain/config.hpp"
#include "ctcdrive/seqmodel/params.hpp"

namespace ctcdrive::train {

/// EMA decay rising from tau0 to 1 along a half cosine.
inline double tau_schedule(std::size_t step, std::size_t total_steps, double tau0) {
  if (step > total_steps) throw std::out_of_range("tau_schedule: step past total_steps");
  if (total_steps == 0) return 1.0;
  if (step == total_steps) return 1.0;
  const double c = std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps));
  return 1.0 - (1.0 - tau0) * (1.0 + c) / 2.0;
}

/// Linear warmup to peak over the first warmup_fraction of steps, then
/// cosine decay to zero at total_steps.
inline double learning_rate(std::size_t step, std::size_t total_steps, double peak, double warmup_fraction) {
  const auto warm = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warm) return peak * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (total_steps <= warm) return peak;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

/// teacher <- tau * teacher + (1 - tau) * student, entrywise.
template <class T>
void ema_update(model::ModelParams<T>& teacher, const model::ModelParams<T>& student, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("ema_update: tau outside [0, 1]");
  auto dst = teacher.tensors();
  auto src = const_cast<model::ModelParams<T>&>(student).tensors();
  if (dst.size() != src.size()) throw std::invalid_argument("ema_update: parameter layouts differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->shape() != src[i]->shape()) throw std::invalid_argument("ema_update: parameter layouts differ");
    if (tau == 1.0) continue;
    auto t = dst[i]->mutable_values();
    auto s = src[i]->values();
    for (std::size_t j = 0; j < t.size(); ++j) {
      t[j] = static_cast<T>(tau * static_cast<double>(t[j]) + (1.0 - tau) * static_cast<double>(s[j]));
    }
  }
}

inline Mode sample_mode(Rng& rng, double p_ar) {
  if (!(p_ar >= 0.0 && p_ar <= 1.0)) throw std::invalid_argument("sample_mode: p_ar outside [0, 1]");
  return rng.bernoulli(p_ar) ? Mode::Ar : Mode::CtcDriven;
}

}  // namespace ctcdrive::train
