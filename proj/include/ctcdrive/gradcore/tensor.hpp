#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctcdrive::grad {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents are incompatible; the message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op produces NaN or infinity.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty unless requires_grad
  bool requires_grad = false;
};

/// Shared handle to a dense row-major array living on a tape.
///
/// Values are fixed after construction. Only leaves created with
/// `parameter` may be mutated in place (by the optimiser or by finite
/// difference probes), never while a tape that references them is live.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<T> values) {
    return Tensor(std::move(shape), std::move(values), false);
  }

  static Tensor zeros(Shape shape) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), false);
  }

  static Tensor scalar(T v) { return constant({1}, {v}); }

  static Tensor parameter(Shape shape, std::vector<T> values) {
    return Tensor(std::move(shape), std::move(values), true);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }

  T item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar " + to_string(shape()));
    return node_->value[0];
  }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  /// Deep copy as a new leaf (parameter if `as_parameter`).
  Tensor clone(bool as_parameter) const {
    return Tensor(shape(), node_->value, as_parameter);
  }

 private:
  template <class>
  friend class Tape;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad)
      : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != values.size()) {
      throw DimensionError("shape " + to_string(shape) + " holds " +
                           std::to_string(numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    for (auto e : shape) {
      if (e == 0) throw DimensionError("zero extent in shape " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad.assign(node_->value.size(), T(0));
  }

  std::shared_ptr<Node<T>> node_;
};

template <class T>
void check_finite(std::span<const T> values, const char* op) {
  for (const T& v : values) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
  }
}

}  // namespace ctcdrive::grad
