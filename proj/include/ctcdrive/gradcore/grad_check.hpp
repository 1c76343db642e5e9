#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ctcdrive/gradcore/tape.hpp"
#include "ctcdrive/gradcore/tensor.hpp"

namespace ctcdrive::grad {

/// Builds a scalar loss on the given tape from the (captured) parameters.
using LossFn = std::function<Tensor<double>(Tape<double>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries = 0;
};

/// Compares analytic gradients with the five-point central difference
/// (8 (f(p+h) - f(p-h)) - (f(p+2h) - f(p-2h))) / 12h.
///
/// Relative error per entry uses max(|analytic|, |numeric|, 1e-8) as the
/// denominator; the maximum over all entries of all `params` is returned.
/// `fn` must be deterministic and must read the parameters it is given.
inline GradCheckResult grad_check(const LossFn& fn, std::vector<Tensor<double>>& params, double h = 1e-4) {
  if (!(h > 0)) throw std::invalid_argument("grad_check: step must be positive");
  for (auto& p : params) p.zero_grad();
  {
    Tape<double> tape;
    auto loss = fn(tape);
    if (!std::isfinite(loss.item())) throw NumericalError("grad_check: non-finite loss");
    tape.backward(loss);
  }
  auto eval = [&fn] {
    Tape<double> tape(false);
    const double v = fn(tape).item();
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss under perturbation");
    return v;
  };
  GradCheckResult result;
  for (auto& p : params) {
    auto values = p.mutable_values();
    auto grad = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return eval();
      };
      const double near = at(h) - at(-h);
      const double far = at(2 * h) - at(-2 * h);
      values[i] = saved;
      const double numeric = (8 * near - far) / (12 * h);
      const double denom = std::max({std::abs(grad[i]), std::abs(numeric), 1e-8});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(grad[i] - numeric) / denom);
      ++result.entries;
    }
  }
  return result;
}

}  // namespace ctcdrive::grad
