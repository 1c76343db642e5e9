#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctcdrive/gradcore/gradcore.hpp"
#include "ctcdrive/rng.hpp"

namespace ctcdrive::testing {

namespace cg = ctcdrive::grad;
using cg::Shape;
using cg::Tape;
using cg::Tensor;

inline std::vector<double> random_values(ctcdrive::Rng& rng, std::size_t n, double lo = -1.5, double hi = 1.5) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor<double> random_param(ctcdrive::Rng& rng, Shape shape) {
  const auto n = cg::numel(shape);
  return Tensor<double>::parameter(std::move(shape), random_values(rng, n));
}

// Contracts an op output against fixed random weights so every output entry
// influences the scalar loss.
inline Tensor<double> contract(Tape<double>& tape, const Tensor<double>& out, std::uint64_t seed) {
  ctcdrive::Rng rng(seed);
  auto w = Tensor<double>::constant(out.shape(), random_values(rng, out.size()));
  return cg::sum(tape, cg::mul(tape, out, w));
}

inline const std::vector<std::string>& primitive_ops() {
  static const std::vector<std::string> ops{"matmul", "linear", "add", "mul", "add_bias", "gelu", "layer_norm",
                                          "embedding", "concat", "zero_spans", "attention", "log_softmax", "reshape",
                                          "token_cross_entropy", "weighted_sum"};
  return ops;
}

/// Max relative gradient error of one primitive on a random instance.
inline double check_primitive(const std::string& op, std::uint64_t seed) {
  ctcdrive::Rng rng(seed);
  const std::size_t a = rng.range(1, 3), b = rng.range(1, 4), c = rng.range(1, 5);
  std::vector<Tensor<double>> params;
  cg::LossFn fn;
  if (op == "matmul") {
    params = {random_param(rng, {a, b}), random_param(rng, {b, c})};
    fn = [&params, seed](Tape<double>& t) { return contract(t, cg::matmul(t, params[0], params[1]), seed); };
  } else if (op == "linear") {
    params = {random_param(rng, {a, b, c}), random_param(rng, {c, b}), random_param(rng, {b})};
    fn = [&params, seed](Tape<double>& t) { return contract(t, cg::linear(t, params[0], params[1], params[2]), seed); };
  } else if (op == "add") {
    params = {random_param(rng, {a, b}), random_param(rng, {a, b})};
    fn = [&params, seed](Tape<double>& t) { return contract(t, cg::add(t, params[0], params[1]), seed); };
  } else if (op == "mul") {
    params = {random_param(rng, {a, b}), random_param(rng, {a, b})};
    fn = [&params, seed](Tape<double>& t) { return contract(t, cg::mul(t, params[0], params[1]), seed); };
  } else if (op == "add_bias") {
    params = {random_param(rng, {a, b, c}), random_param(rng, {c})};
    fn = [&params, seed](Tape<double>& t) { return contract(t, cg::add_bias(t, params[0], params[1]), seed); };
  } else if (op == "gelu") {
    params = {random_param(rng, {a, b, c})};
    fn = [&params, seed](Tape<double>& t) { return contract(t, cg::gelu(t, params[0]), seed); };
  } else if (op == "layer_norm") {
    // two features normalise to roughly +-1 whatever the input, leaving an x-gradient near zero
    params = {random_param(rng, {a, b, c + 2}), random_param(rng, {c + 2}), random_param(rng, {c + 2})};
    fn = [&params, seed](Tape<double>& t) { return contract(t, cg::layer_norm(t, params[0], params[1], params[2]), seed); };
  } else if (op == "embedding") {
    params = {random_param(rng, {c + 1, b})};
    std::vector<int> ids(a * 2);
    for (auto& id : ids) id = rng.range(0, static_cast<int>(c));
    fn = [&params, ids, a, seed](Tape<double>& t) { return contract(t, cg::embedding<double>(t, params[0], ids, {a, 2}), seed); };
  } else if (op == "concat") {
    params = {random_param(rng, {a, b, c}), random_param(rng, {a, b, 2})};
    fn = [&params, seed](Tape<double>& t) { return contract(t, cg::concat_features(t, params[0], params[1]), seed); };
  } else if (op == "zero_spans") {
    params = {random_param(rng, {a, b + 1, c})};
    std::vector<cg::ZeroSpan> spans{{0, 0, 1}, {a - 1, b, b + 1, 0, 1}};
    fn = [&params, spans, seed](Tape<double>& t) { return contract(t, cg::zero_spans<double>(t, params[0], spans), seed); };
  } else if (op == "attention") {
    const std::size_t heads = rng.range(1, 2), d = heads * static_cast<std::size_t>(rng.range(1, 3));
    const std::size_t lq = b, lk = c;
    params = {random_param(rng, {a, lq, d}), random_param(rng, {a, lk, d}), random_param(rng, {a, lk, d})};
    std::vector<double> mask(a * lq * lk, 0.0);
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (i % lk != 0 && rng.bernoulli(0.3)) mask[i] = -1e9;
    fn = [&params, mask, heads, seed](Tape<double>& t) {
      return contract(t, cg::attention<double>(t, params[0], params[1], params[2], mask, heads), seed);
    };
  } else if (op == "log_softmax") {
    params = {random_param(rng, {a, b, c})};
    const int axis = rng.range(0, 2);
    fn = [&params, axis, seed](Tape<double>& t) { return contract(t, cg::log_softmax(t, params[0], axis), seed); };
  } else if (op == "reshape") {
    params = {random_param(rng, {a, b, c})};
    fn = [&params, a, b, c, seed](Tape<double>& t) { return contract(t, cg::reshape(t, params[0], {a * b, c}), seed); };
  } else if (op == "token_cross_entropy") {
    params = {random_param(rng, {a, b, c + 1})};
    std::vector<int> targets(a * b);
    std::vector<double> weights(a * b);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      targets[i] = rng.range(0, static_cast<int>(c));
      weights[i] = rng.bernoulli(0.8) ? rng.uniform(0.1, 2.0) : 0.0;
    }
    fn = [&params, targets, weights](Tape<double>& t) {
      return cg::token_cross_entropy<double>(t, cg::log_softmax(t, params[0]), targets, weights, 0.1);
    };
  } else if (op == "weighted_sum") {
    params = {random_param(rng, {1}), random_param(rng, {1}), random_param(rng, {1})};
    const std::vector<double> w{0.3, -1.2, 2.0};
    fn = [&params, w](Tape<double>& t) {
      auto sq = cg::mul(t, params[2], params[2]);
      return cg::weighted_sum<double>(t, {params[0], params[1], sq}, w);
    };
  }
  return cg::grad_check(fn, params).max_relative_error;
}


}  // namespace ctcdrive::testing
