#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "ctcdrive/gradcore/tensor.hpp"

namespace ctcdrive::grad {

/// Ordered record of executed differentiable ops.
///
/// Ops append a backward closure when their output requires a gradient.
/// `backward` runs the closures once, newest first, and then the tape is
/// spent. A tape built with `grad_enabled = false` records nothing and
/// every output it produces is a constant; inference uses that mode.
template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return backward_.size(); }

  /// Creates an op output. It tracks gradients iff recording is on and
  /// `needs_grad` is set (some input tracks gradients).
  Tensor<T> output(Shape shape, std::vector<T> values, bool needs_grad, const char* op) {
    check_finite<T>(values, op);
    return Tensor<T>(std::move(shape), std::move(values), grad_enabled_ && needs_grad);
  }

  void record(std::function<void()> fn) {
    if (consumed_) throw std::logic_error("tape already consumed by backward()");
    backward_.push_back(std::move(fn));
  }

  /// Accumulates d(loss)/d(leaf) into every reachable leaf's grad.
  /// Leaves the loss does not reach keep whatever grad they had (zero after reset).
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) {
      throw DimensionError("backward() needs a scalar loss, got " + to_string(loss.shape()));
    }
    if (consumed_) throw std::logic_error("backward() called twice on the same tape");
    consumed_ = true;
    if (!loss.requires_grad()) return;
    loss.node()->grad[0] += T(1);
    for (auto it = backward_.rbegin(); it != backward_.rend(); ++it) (*it)();
    backward_.clear();
  }

 private:
  bool grad_enabled_;
  bool consumed_ = false;
  std::vector<std::function<void()>> backward_;
};

}  // namespace ctcdrive::grad
