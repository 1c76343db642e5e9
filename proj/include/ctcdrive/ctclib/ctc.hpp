#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctcdrive/gradcore/ops.hpp"
#include "ctcdrive/gradcore/tape.hpp"

namespace ctcdrive::ctc {

using grad::Tape;
using grad::Tensor;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Frames needed to emit `target`: one per label plus one blank between
/// each adjacent repeat.
inline std::size_t min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1];
  return n;
}

struct CtcResult {
  double loss = 0;        // -log p(target | lattice); +inf when infeasible
  bool feasible = true;
  std::vector<double> grad;  // d loss / d log_probs, [frames x vocab]; empty unless requested
};

/// Negative log marginal over all alignments of `target`, by the forward
/// recursion over the blank-extended label sequence. log_probs is a
/// row-major [frames x vocab] block. With `want_grad`, also returns the
/// gradient with respect to log_probs (minus the posterior occupancy).
template <class T>
CtcResult ctc_forward_backward(std::span<const T> log_probs, std::size_t frames, std::size_t vocab, int blank,
                               std::span<const int> target, bool want_grad) {
  if (log_probs.size() < frames * vocab) throw grad::DimensionError("ctc: lattice smaller than frames x vocab");
  for (int y : target) {
    if (y < 0 || static_cast<std::size_t>(y) >= vocab || y == blank) {
      throw std::out_of_range("ctc: target symbol " + std::to_string(y) + " is not a label");
    }
  }
  CtcResult res;
  if (frames == 0 || min_frames(target) > frames) {
    res.loss = std::numeric_limits<double>::infinity();
    res.feasible = false;
    return res;
  }
  const std::size_t S = 2 * target.size() + 1;
  auto label = [&](std::size_t s) { return s % 2 == 0 ? blank : target[s / 2]; };
  auto lp = [&](std::size_t t, int k) { return static_cast<double>(log_probs[t * vocab + static_cast<std::size_t>(k)]); };
  // a skip from s-2 is allowed into a label that differs from the previous label
  auto can_skip = [&](std::size_t s) { return s >= 2 && s % 2 == 1 && label(s) != label(s - 2); };

  std::vector<double> alpha(frames * S, kNegInf);
  alpha[0] = lp(0, blank);
  if (S > 1) alpha[1] = lp(0, label(1));
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = alpha.data() + (t - 1) * S;
    double* cur = alpha.data() + t * S;
    for (std::size_t s = 0; s < S; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (can_skip(s)) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + lp(t, label(s));
    }
  }
  const double* last = alpha.data() + (frames - 1) * S;
  const double log_p = S > 1 ? log_add(last[S - 1], last[S - 2]) : last[0];
  res.loss = -log_p;
  if (log_p == kNegInf) {
    res.feasible = false;
    return res;
  }
  if (!want_grad) return res;

  // beta excludes the emission at t: paths from state s at t to the end
  std::vector<double> beta(frames * S, kNegInf);
  beta[(frames - 1) * S + S - 1] = 0.0;
  if (S > 1) beta[(frames - 1) * S + S - 2] = 0.0;
  for (std::size_t t = frames - 1; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * S;
    double* cur = beta.data() + t * S;
    for (std::size_t s = 0; s < S; ++s) {
      double b = next[s] + lp(t + 1, label(s));
      if (s + 1 < S) b = log_add(b, next[s + 1] + lp(t + 1, label(s + 1)));
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, next[s + 2] + lp(t + 1, label(s + 2)));
      cur[s] = b;
    }
  }
  res.grad.assign(frames * vocab, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      const double occ = alpha[t * S + s] + beta[t * S + s] - log_p;
      if (occ > -700) res.grad[t * vocab + static_cast<std::size_t>(label(s))] -= std::exp(occ);
    }
  }
  return res;
}

/// Sum over paths of every vocab^frames labelling that collapses to
/// `target`, as a negative log probability. Test oracle; frames <= 8 and
/// vocab <= 5.
inline double brute_force_ctc(std::span<const double> log_probs, std::size_t frames, std::size_t vocab, int blank,
                              std::span<const int> target) {
  if (frames > 8 || vocab > 5) throw std::invalid_argument("brute_force_ctc: enumeration bound is 8 frames, vocab 5");
  std::size_t paths = 1;
  for (std::size_t t = 0; t < frames; ++t) paths *= vocab;
  double total = kNegInf;
  std::vector<int> path(frames), collapsed;
  for (std::size_t code = 0; code < paths; ++code) {
    std::size_t c = code;
    double lp = 0;
    for (std::size_t t = 0; t < frames; ++t) {
      path[t] = static_cast<int>(c % vocab);
      c /= vocab;
      lp += log_probs[t * vocab + static_cast<std::size_t>(path[t])];
    }
    collapsed.clear();
    for (std::size_t t = 0; t < frames; ++t) {
      if (path[t] != blank && (t == 0 || path[t] != path[t - 1])) collapsed.push_back(path[t]);
    }
    if (std::equal(collapsed.begin(), collapsed.end(), target.begin(), target.end())) total = log_add(total, lp);
  }
  return -total;
}

/// Per-frame argmax (ties to the lowest index) and its probability.
struct FramePath {
  std::vector<int> tokens;
  std::vector<double> probs;
};

template <class T>
FramePath ctc_greedy(std::span<const T> log_probs, std::size_t frames, std::size_t vocab) {
  FramePath path;
  path.tokens.reserve(frames);
  path.probs.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const T* row = log_probs.data() + t * vocab;
    std::size_t best = 0;
    for (std::size_t k = 1; k < vocab; ++k) {
      if (row[k] > row[best]) best = k;
    }
    path.tokens.push_back(static_cast<int>(best));
    path.probs.push_back(std::exp(static_cast<double>(row[best])));
  }
  return path;
}

/// Merges adjacent repeats, then removes blanks.
inline std::vector<int> collapse(std::span<const int> path, int blank) {
  std::vector<int> out;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (t > 0 && path[t] == path[t - 1]) continue;
    if (path[t] != blank) out.push_back(path[t]);
  }
  return out;
}

/// Log probability used for a zero confidence.
constexpr double kLogClamp = -1e9;

/// Geometric mean of per-frame (or per-token) probabilities. A zero
/// probability contributes log -1e9, which drives the result to 0.
inline double sequence_confidence(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("sequence_confidence: empty sequence");
  double sum = 0;
  for (double p : probs) sum += p > 0 ? std::log(p) : kLogClamp;
  return std::exp(sum / static_cast<double>(probs.size()));
}

/// Differentiable sum over the batch of weights[b] * CTC(lattice_b, targets[b]).
///
/// log_probs is [B x L x V]; only the first frames[b] frames of row b are
/// used. Samples with zero weight or an infeasible target contribute
/// nothing; `infeasible` (if given) counts the latter.
template <class T>
Tensor<T> ctc_loss(Tape<T>& tape, const Tensor<T>& log_probs, const std::vector<int>& frames,
                   const std::vector<std::vector<int>>& targets, std::span<const T> weights, int blank,
                   std::size_t* infeasible = nullptr) {
  if (log_probs.rank() != 3) throw grad::DimensionError("ctc_loss: lattice must be [B x L x V], got " + grad::to_string(log_probs.shape()));
  const std::size_t B = log_probs.extent(0), L = log_probs.extent(1), V = log_probs.extent(2);
  if (frames.size() != B || targets.size() != B || weights.size() != B) {
    throw grad::DimensionError("ctc_loss: batch " + std::to_string(B) + " with " + std::to_string(frames.size()) +
                               " lengths, " + std::to_string(targets.size()) + " targets");
  }
  const bool want_grad = tape.grad_enabled() && log_probs.requires_grad();
  double total = 0;
  std::vector<std::vector<double>> grads(B);
  std::size_t skipped = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (weights[b] == T(0)) continue;
    if (frames[b] < 1 || static_cast<std::size_t>(frames[b]) > L) throw grad::DimensionError("ctc_loss: frame length out of range");
    auto res = ctc_forward_backward<T>(log_probs.values().subspan(b * L * V), static_cast<std::size_t>(frames[b]), V,
                                       blank, targets[b], want_grad);
    if (!res.feasible) {
      ++skipped;
      continue;
    }
    total += static_cast<double>(weights[b]) * res.loss;
    grads[b] = std::move(res.grad);
  }
  if (infeasible) *infeasible += skipped;
  auto out = tape.output({1}, {static_cast<T>(total)}, log_probs.requires_grad(), "ctc_loss");
  if (out.requires_grad()) {
    std::vector<T> w(weights.begin(), weights.end());
    tape.record([ln = log_probs.shared(), on = out.shared(), grads = std::move(grads), w = std::move(w), L, V] {
      const double g = static_cast<double>(on->grad[0]);
      for (std::size_t b = 0; b < grads.size(); ++b) {
        const auto& gb = grads[b];
        const double scale = g * static_cast<double>(w[b]);
        for (std::size_t i = 0; i < gb.size(); ++i) ln->grad[b * L * V + i] += static_cast<T>(scale * gb[i]);
      }
    });
  }
  return out;
}

}  // namespace ctcdrive::ctc
