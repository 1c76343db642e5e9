#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctcdrive/gradcore/tape.hpp"
#include "ctcdrive/gradcore/tensor.hpp"

namespace ctcdrive::grad {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
ConstMatMap<T> cmap(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
MatMap<T> mmap(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

/// Adds the column sums of a row-major [rows x n] block to `out`, one row
/// at a time. Eigen's colwise().sum() orders the additions by the runtime
/// alignment of the data, which breaks run-to-run reproducibility.
template <class T>
void add_column_sums(std::vector<T>& out, const std::vector<T>& m, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = m.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) out[c] += row[c];
  }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shapes differ " + to_string(a) + " vs " + to_string(b));
  }
}

template <class T>
void accumulate(std::vector<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

/// Matrix product of a [m x k] and b [k x n].
template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<T> out(m * n);
  detail::mmap(out, m, n).noalias() =
      detail::cmap(a.node()->value, m, k) * detail::cmap(b.node()->value, k, n);
  auto res = tape.output({m, n}, std::move(out), a.requires_grad() || b.requires_grad(), "matmul");
  if (res.requires_grad()) {
    tape.record([an = a.shared(), bn = b.shared(), on = res.shared(), m, k, n] {
      auto g = detail::cmap(on->grad, m, n);
      if (an->requires_grad) detail::mmap(an->grad, m, k).noalias() += g * detail::cmap(bn->value, k, n).transpose();
      if (bn->requires_grad) detail::mmap(bn->grad, k, n).noalias() += detail::cmap(an->value, m, k).transpose() * g;
    });
  }
  return res;
}

/// x[..., k] * weight[k x n] + bias[n]. The bias may be undefined.
template <class T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.extent(0)) {
    throw DimensionError("linear: incompatible shapes " + to_string(x.shape()) + " and " +
                         to_string(weight.shape()));
  }
  const std::size_t k = weight.extent(0), n = weight.extent(1), rows = x.size() / k;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.extent(0) != n)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match " +
                         to_string(weight.shape()));
  }
  std::vector<T> out(rows * n);
  auto o = detail::mmap(out, rows, n);
  o.noalias() = detail::cmap(x.node()->value, rows, k) * detail::cmap(weight.node()->value, k, n);
  if (has_bias) o.rowwise() += detail::cmap(bias.node()->value, 1, n).row(0);
  Shape shape = x.shape();
  shape.back() = n;
  const bool needs = x.requires_grad() || weight.requires_grad() || (has_bias && bias.requires_grad());
  auto res = tape.output(std::move(shape), std::move(out), needs, "linear");
  if (res.requires_grad()) {
    std::shared_ptr<Node<T>> bn = has_bias ? bias.shared() : nullptr;
    tape.record([xn = x.shared(), wn = weight.shared(), bn, on = res.shared(), rows, k, n] {
      auto g = detail::cmap(on->grad, rows, n);
      if (xn->requires_grad) detail::mmap(xn->grad, rows, k).noalias() += g * detail::cmap(wn->value, k, n).transpose();
      if (wn->requires_grad) detail::mmap(wn->grad, k, n).noalias() += detail::cmap(xn->value, rows, k).transpose() * g;
      if (bn && bn->requires_grad) detail::add_column_sums(bn->grad, on->grad, rows, n);
    });
  }
  return res;
}

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto res = tape.output(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(), "add");
  if (res.requires_grad()) {
    tape.record([an = a.shared(), bn = b.shared(), on = res.shared()] {
      if (an->requires_grad) detail::accumulate<T>(an->grad, on->grad);
      if (bn->requires_grad) detail::accumulate<T>(bn->grad, on->grad);
    });
  }
  return res;
}

template <class T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto res = tape.output(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(), "mul");
  if (res.requires_grad()) {
    tape.record([an = a.shared(), bn = b.shared(), on = res.shared()] {
      const auto& g = on->grad;
      if (an->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->value[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->value[i];
    });
  }
  return res;
}

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= factor;
  auto res = tape.output(x.shape(), std::move(out), x.requires_grad(), "scale");
  if (res.requires_grad()) {
    tape.record([xn = x.shared(), on = res.shared(), factor] {
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += factor * on->grad[i];
    });
  }
  return res;
}

/// Adds bias[n] to every row of x[..., n].
template <class T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = x.shape().back();
  if (bias.rank() != 1 || bias.extent(0) != n) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " vs input " + to_string(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.values().begin(), x.values().end());
  detail::mmap(out, rows, n).rowwise() += detail::cmap(bias.node()->value, 1, n).row(0);
  auto res = tape.output(x.shape(), std::move(out), x.requires_grad() || bias.requires_grad(), "add_bias");
  if (res.requires_grad()) {
    tape.record([xn = x.shared(), bn = bias.shared(), on = res.shared(), rows, n] {
      if (xn->requires_grad) detail::accumulate<T>(xn->grad, on->grad);
      if (bn->requires_grad) detail::add_column_sums(bn->grad, on->grad, rows, n);
    });
  }
  return res;
}

template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  auto res = tape.output({1}, {total}, x.requires_grad(), "sum");
  if (res.requires_grad()) {
    tape.record([xn = x.shared(), on = res.shared()] {
      for (auto& g : xn->grad) g += on->grad[0];
    });
  }
  return res;
}

/// sum_i weights[i] * terms[i] over scalar tensors.
template <class T>
Tensor<T> weighted_sum(Tape<T>& tape, const std::vector<Tensor<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("weighted_sum: term/weight count mismatch");
  T total = 0;
  bool needs = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].size() != 1) throw DimensionError("weighted_sum: non-scalar term " + to_string(terms[i].shape()));
    total += weights[i] * terms[i].item();
    needs = needs || terms[i].requires_grad();
  }
  auto res = tape.output({1}, {total}, needs, "weighted_sum");
  if (res.requires_grad()) {
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& t : terms) nodes.push_back(t.shared());
    tape.record([nodes, weights, on = res.shared()] {
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i]->requires_grad) nodes[i]->grad[0] += weights[i] * on->grad[0];
    });
  }
  return res;
}

/// Tanh-form gaussian error linear unit.
template <class T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  auto res = tape.output(x.shape(), std::move(out), x.requires_grad(), "gelu");
  if (res.requires_grad()) {
    tape.record([xn = x.shared(), on = res.shared()] {
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const T v = xn->value[i];
        const T t = std::tanh(kC * (v + kA * v * v * v));
        const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
        xn->grad[i] += on->grad[i] * d;
      }
    });
  }
  return res;
}

/// Normalises each row of x[..., n] to zero mean and unit variance, then applies gain and bias.
template <class T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  const std::size_t n = x.shape().back();
  if (gain.rank() != 1 || gain.extent(0) != n || bias.rank() != 1 || bias.extent(0) != n) {
    throw DimensionError("layer_norm: gain/bias " + to_string(gain.shape()) + " vs input " + to_string(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<T> out(xv.size()), xhat(xv.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mean) * inv;
      xhat[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  const bool needs = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  auto res = tape.output(x.shape(), std::move(out), needs, "layer_norm");
  if (res.requires_grad()) {
    tape.record([xn = x.shared(), gn = gain.shared(), bn = bias.shared(), on = res.shared(),
                 xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n] {
      const auto& g = on->grad;
      std::vector<T> gh(n);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * n;
        const T* hr = xhat.data() + r * n;
        T mean_gh = 0, mean_ghh = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (gn->requires_grad) gn->grad[j] += gr[j] * hr[j];
          if (bn->requires_grad) bn->grad[j] += gr[j];
          gh[j] = gr[j] * gn->value[j];
          mean_gh += gh[j];
          mean_ghh += gh[j] * hr[j];
        }
        if (!xn->requires_grad) continue;
        mean_gh /= T(n);
        mean_ghh /= T(n);
        for (std::size_t j = 0; j < n; ++j) {
          xn->grad[r * n + j] += inv_std[r] * (gh[j] - mean_gh - hr[j] * mean_ghh);
        }
      }
    });
  }
  return res;
}

/// Gathers rows of table[V x d]; output shape is `prefix` + [d] with numel(prefix) == ids.size().
template <class T>
Tensor<T> embedding(Tape<T>& tape, const Tensor<T>& table, std::span<const int> ids, Shape prefix) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be 2-D, got " + to_string(table.shape()));
  if (numel(prefix) != ids.size()) {
    throw DimensionError("embedding: prefix " + to_string(prefix) + " does not hold " +
                         std::to_string(ids.size()) + " ids");
  }
  const std::size_t vocab = table.extent(0), d = table.extent(1);
  std::vector<T> out(ids.size() * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  prefix.push_back(d);
  auto res = tape.output(std::move(prefix), std::move(out), table.requires_grad(), "embedding");
  if (res.requires_grad()) {
    tape.record([tn = table.shared(), on = res.shared(), ids = std::vector<int>(ids.begin(), ids.end()), d] {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* dst = tn->grad.data() + static_cast<std::size_t>(ids[i]) * d;
        const T* src = on->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return res;
}

/// Concatenates along the last (feature) axis; leading extents must agree.
template <class T>
Tensor<T> concat_features(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  Shape lead_a(a.shape().begin(), a.shape().end() - 1), lead_b(b.shape().begin(), b.shape().end() - 1);
  if (lead_a != lead_b) {
    throw DimensionError("concat_features: leading extents differ " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  const std::size_t fa = a.shape().back(), fb = b.shape().back(), rows = a.size() / fa;
  std::vector<T> out(rows * (fa + fb));
  auto av = a.values(), bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * fa, fa, out.data() + r * (fa + fb));
    std::copy_n(bv.data() + r * fb, fb, out.data() + r * (fa + fb) + fa);
  }
  Shape shape = lead_a;
  shape.push_back(fa + fb);
  auto res = tape.output(std::move(shape), std::move(out), a.requires_grad() || b.requires_grad(), "concat_features");
  if (res.requires_grad()) {
    tape.record([an = a.shared(), bn = b.shared(), on = res.shared(), rows, fa, fb] {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = on->grad.data() + r * (fa + fb);
        if (an->requires_grad)
          for (std::size_t j = 0; j < fa; ++j) an->grad[r * fa + j] += g[j];
        if (bn->requires_grad)
          for (std::size_t j = 0; j < fb; ++j) bn->grad[r * fb + j] += g[fa + j];
      }
    });
  }
  return res;
}

/// Time span [begin, end) of batch row `batch`, restricted to features [feature_begin, feature_end).
struct ZeroSpan {
  std::size_t batch = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t feature_begin = 0;
  std::size_t feature_end = std::numeric_limits<std::size_t>::max();
};

/// Zeroes the given spans of x[B x L x F]. Gradients through zeroed entries are zero.
template <class T>
Tensor<T> zero_spans(Tape<T>& tape, const Tensor<T>& x, std::span<const ZeroSpan> spans) {
  if (x.rank() != 3) throw DimensionError("zero_spans: expected [B x L x F], got " + to_string(x.shape()));
  const std::size_t batch = x.extent(0), len = x.extent(1), feat = x.extent(2);
  std::vector<unsigned char> keep(x.size(), 1);
  for (const auto& s : spans) {
    if (s.batch >= batch || s.begin > s.end || s.end > len) {
      throw DimensionError("zero_spans: span outside " + to_string(x.shape()));
    }
    const std::size_t f1 = std::min(s.feature_end, feat);
    for (std::size_t t = s.begin; t < s.end; ++t)
      for (std::size_t f = s.feature_begin; f < f1; ++f) keep[(s.batch * len + t) * feat + f] = 0;
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!keep[i]) out[i] = T(0);
  auto res = tape.output(x.shape(), std::move(out), x.requires_grad(), "zero_spans");
  if (res.requires_grad()) {
    tape.record([xn = x.shared(), on = res.shared(), keep = std::move(keep)] {
      for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) xn->grad[i] += on->grad[i];
    });
  }
  return res;
}

/// Multi-head scaled dot-product attention.
///
/// q is [B x Lq x D], k and v are [B x Lk x D]; D splits into `heads` equal
/// slices. `additive_mask` is empty or holds B*Lq*Lk values added to the
/// scores before the softmax (large negative values exclude a key).
template <class T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::span<const T> additive_mask, std::size_t heads) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || k.shape() != v.shape() || q.extent(0) != k.extent(0) ||
      q.extent(2) != k.extent(2)) {
    throw DimensionError("attention: incompatible shapes q" + to_string(q.shape()) + " k" + to_string(k.shape()) +
                         " v" + to_string(v.shape()));
  }
  const std::size_t B = q.extent(0), Lq = q.extent(1), Lk = k.extent(1), D = q.extent(2);
  if (heads == 0 || D % heads != 0) throw DimensionError("attention: width " + std::to_string(D) + " not divisible by heads");
  if (!additive_mask.empty() && additive_mask.size() != B * Lq * Lk) {
    throw DimensionError("attention: mask holds " + std::to_string(additive_mask.size()) + " values, expected " +
                         std::to_string(B * Lq * Lk));
  }
  const std::size_t dh = D / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  std::vector<T> out(B * Lq * D);
  std::vector<T> probs(B * heads * Lq * Lk);
  using SMap = detail::StridedMap<T>;
  using CSMap = detail::ConstStridedMap<T>;
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(D));
  const auto eLq = static_cast<Eigen::Index>(Lq), eLk = static_cast<Eigen::Index>(Lk),
             edh = static_cast<Eigen::Index>(dh);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      CSMap qh(q.values().data() + b * Lq * D + h * dh, eLq, edh, stride);
      CSMap kh(k.values().data() + b * Lk * D + h * dh, eLk, edh, stride);
      CSMap vh(v.values().data() + b * Lk * D + h * dh, eLk, edh, stride);
      T* p = probs.data() + ((b * heads + h) * Lq) * Lk;
      detail::MatMap<T> P(p, eLq, eLk);
      P.noalias() = (qh * kh.transpose()) * scale;
      if (!additive_mask.empty()) {
        P += detail::ConstMatMap<T>(additive_mask.data() + b * Lq * Lk, eLq, eLk);
      }
      for (std::size_t i = 0; i < Lq; ++i) {
        T* row = p + i * Lk;
        T mx = row[0];
        for (std::size_t j = 1; j < Lk; ++j) mx = std::max(mx, row[j]);
        T z = 0;
        for (std::size_t j = 0; j < Lk; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::size_t j = 0; j < Lk; ++j) row[j] /= z;
      }
      SMap oh(out.data() + b * Lq * D + h * dh, eLq, edh, stride);
      oh.noalias() = P * vh;
    }
  }
  const bool needs = q.requires_grad() || k.requires_grad() || v.requires_grad();
  auto res = tape.output(q.shape(), std::move(out), needs, "attention");
  if (res.requires_grad()) {
    tape.record([qn = q.shared(), kn = k.shared(), vn = v.shared(), on = res.shared(), probs = std::move(probs), B, Lq,
                 Lk, D, heads, dh, scale] {
      const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(D));
      const auto eLq = static_cast<Eigen::Index>(Lq), eLk = static_cast<Eigen::Index>(Lk),
                 edh = static_cast<Eigen::Index>(dh);
      detail::RowMat<T> dP(eLq, eLk);
      // Inputs that do not track gradients still need a sink for the strided maps.
      std::vector<T> scratch_q, scratch_k, scratch_v;
      auto sink = [](const std::shared_ptr<Node<T>>& n, std::vector<T>& scratch) -> T* {
        if (n->requires_grad) return n->grad.data();
        scratch.assign(n->value.size(), T(0));
        return scratch.data();
      };
      T* gq = sink(qn, scratch_q);
      T* gk = sink(kn, scratch_k);
      T* gv = sink(vn, scratch_v);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          CSMap qh(qn->value.data() + b * Lq * D + h * dh, eLq, edh, stride);
          CSMap kh(kn->value.data() + b * Lk * D + h * dh, eLk, edh, stride);
          CSMap vh(vn->value.data() + b * Lk * D + h * dh, eLk, edh, stride);
          CSMap go(on->grad.data() + b * Lq * D + h * dh, eLq, edh, stride);
          detail::ConstMatMap<T> P(probs.data() + ((b * heads + h) * Lq) * Lk, eLq, eLk);
          SMap(gv + b * Lk * D + h * dh, eLk, edh, stride).noalias() += P.transpose() * go;
          dP.noalias() = go * vh.transpose();
          for (Eigen::Index i = 0; i < eLq; ++i) {
            T dot = 0;  // sequential, like add_column_sums
            for (Eigen::Index j = 0; j < eLk; ++j) dot += dP(i, j) * P(i, j);
            dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix() * scale;
          }
          SMap(gq + b * Lq * D + h * dh, eLq, edh, stride).noalias() += dP * kh;
          SMap(gk + b * Lk * D + h * dh, eLk, edh, stride).noalias() += dP.transpose() * qh;
        }
      }
    });
  }
  return res;
}

/// Log-softmax along `axis`, stabilised by max subtraction.
template <class T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& x, int axis = -1) {
  const int rank = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) {
    throw DimensionError("log_softmax: axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.extent(static_cast<std::size_t>(i));
  for (int i = ax + 1; i < rank; ++i) inner *= x.extent(static_cast<std::size_t>(i));
  const std::size_t n = x.extent(static_cast<std::size_t>(ax));
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < n; ++j) z += std::exp(xv[base + j * inner] - mx);
      const T lse = mx + std::log(z);
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] = xv[base + j * inner] - lse;
    }
  }
  auto res = tape.output(x.shape(), std::move(out), x.requires_grad(), "log_softmax");
  if (res.requires_grad()) {
    tape.record([xn = x.shared(), on = res.shared(), outer, inner, n] {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T gsum = 0;
          for (std::size_t j = 0; j < n; ++j) gsum += on->grad[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            xn->grad[idx] += on->grad[idx] - std::exp(on->value[idx]) * gsum;
          }
        }
      }
    });
  }
  return res;
}

/// Copy with a new shape of equal element count.
template <class T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  auto res = tape.output(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()), x.requires_grad(),
                         "reshape");
  if (res.requires_grad()) {
    tape.record([xn = x.shared(), on = res.shared()] { detail::accumulate<T>(xn->grad, on->grad); });
  }
  return res;
}

/// Label-smoothed cross-entropy summed over rows of log_probs[..., K]:
/// sum_r weights[r] * -[(1 - eps) lp[r, t_r] + (eps / K) sum_k lp[r, k]].
/// Rows with zero weight are skipped and may carry any target.
template <class T>
Tensor<T> token_cross_entropy(Tape<T>& tape, const Tensor<T>& log_probs, std::span<const int> targets,
                              std::span<const T> weights, T epsilon) {
  if (!(epsilon >= T(0) && epsilon < T(1))) throw std::invalid_argument("label smoothing must lie in [0, 1)");
  const std::size_t K = log_probs.shape().back(), rows = log_probs.size() / K;
  if (targets.size() != rows || weights.size() != rows) {
    throw DimensionError("token_cross_entropy: " + std::to_string(rows) + " rows in " + to_string(log_probs.shape()) +
                         " but " + std::to_string(targets.size()) + " targets");
  }
  auto lp = log_probs.values();
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == T(0)) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= K) {
      throw std::out_of_range("token_cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary of " +
                              std::to_string(K));
    }
    const T* row = lp.data() + r * K;
    T all = 0;
    for (std::size_t k = 0; k < K; ++k) all += row[k];
    total -= weights[r] * ((T(1) - epsilon) * row[targets[r]] + epsilon / T(K) * all);
  }
  auto res = tape.output({1}, {total}, log_probs.requires_grad(), "token_cross_entropy");
  if (res.requires_grad()) {
    tape.record([ln = log_probs.shared(), on = res.shared(), t = std::vector<int>(targets.begin(), targets.end()),
                 w = std::vector<T>(weights.begin(), weights.end()), epsilon, K, rows] {
      const T g = on->grad[0];
      for (std::size_t r = 0; r < rows; ++r) {
        if (w[r] == T(0)) continue;
        T* gr = ln->grad.data() + r * K;
        const T uniform = g * w[r] * epsilon / T(K);
        for (std::size_t k = 0; k < K; ++k) gr[k] -= uniform;
        gr[t[r]] -= g * w[r] * (T(1) - epsilon);
      }
    });
  }
  return res;
}

/// Single-row label-smoothed cross-entropy over log_probs[K].
template <class T>
Tensor<T> smoothed_cross_entropy(Tape<T>& tape, const Tensor<T>& log_probs, int target, T epsilon) {
  const int targets[1] = {target};
  const T weights[1] = {T(1)};
  if (log_probs.rank() != 1) {
    throw DimensionError("smoothed_cross_entropy: expected [K], got " + to_string(log_probs.shape()));
  }
  return token_cross_entropy<T>(tape, log_probs, targets, weights, epsilon);
}

}  // namespace ctcdrive::grad
