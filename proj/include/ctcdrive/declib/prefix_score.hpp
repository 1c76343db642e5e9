#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctcdrive/ctclib/ctc.hpp"

namespace ctcdrive::dec {

using ctc::kNegInf;
using ctc::log_add;

/// Running CTC quantities for one prefix g over frames 0..T-1:
/// blank_end[t] = log P(x_1..t collapses to g, frame t blank),
/// label_end[t] = same with frame t emitting the last label of g.
struct CtcPrefixState {
  std::vector<int> prefix;
  std::vector<double> label_end;
  std::vector<double> blank_end;
  double prefix_score = 0.0;  // log P(some path's collapse starts with prefix)
};

/// Label-synchronous CTC prefix scorer over one utterance lattice.
class CtcPrefixScorer {
 public:
  /// log_probs is [frames x vocab] (any extra rows are ignored).
  template <class T>
  CtcPrefixScorer(std::span<const T> log_probs, std::size_t frames, std::size_t vocab, int blank)
      : frames_(frames), vocab_(vocab), blank_(blank), lp_(log_probs.begin(), log_probs.begin() + frames * vocab) {
    if (frames == 0) throw std::invalid_argument("CtcPrefixScorer: empty lattice");
  }

  std::size_t frames() const { return frames_; }

  CtcPrefixState initial() const {
    CtcPrefixState s;
    s.label_end.assign(frames_, kNegInf);
    s.blank_end.resize(frames_);
    double acc = 0;
    for (std::size_t t = 0; t < frames_; ++t) s.blank_end[t] = acc += lp(t, blank_);
    return s;
  }

  /// State for prefix + [c]; its prefix_score is the log prefix probability.
  CtcPrefixState extend(const CtcPrefixState& s, int c) const {
    if (c < 0 || c == blank_ || static_cast<std::size_t>(c) >= vocab_) {
      throw std::out_of_range("CtcPrefixScorer: symbol " + std::to_string(c) + " is not a label");
    }
    const bool repeat = !s.prefix.empty() && s.prefix.back() == c;
    CtcPrefixState n;
    n.prefix = s.prefix;
    n.prefix.push_back(c);
    n.label_end.assign(frames_, kNegInf);
    n.blank_end.assign(frames_, kNegInf);
    n.label_end[0] = s.prefix.empty() ? lp(0, c) : kNegInf;
    double psi = n.label_end[0];
    for (std::size_t t = 1; t < frames_; ++t) {
      // mass that may start emitting c at frame t
      const double phi = log_add(s.blank_end[t - 1], repeat ? kNegInf : s.label_end[t - 1]);
      n.label_end[t] = log_add(n.label_end[t - 1], phi) + lp(t, c);
      n.blank_end[t] = log_add(n.blank_end[t - 1], n.label_end[t - 1]) + lp(t, blank_);
      psi = log_add(psi, phi + lp(t, c));
    }
    n.prefix_score = psi;
    return n;
  }

  /// log P(the full collapse equals the state's prefix).
  double final_score(const CtcPrefixState& s) const {
    return log_add(s.label_end[frames_ - 1], s.blank_end[frames_ - 1]);
  }

 private:
  double lp(std::size_t t, int k) const { return lp_[t * vocab_ + static_cast<std::size_t>(k)]; }

  std::size_t frames_, vocab_;
  int blank_;
  std::vector<double> lp_;
};

/// From-scratch CTC prefix log probability of prefix + [next_token].
template <class T>
double ctc_prefix_score(std::span<const T> log_probs, std::size_t frames, std::size_t vocab, int blank,
                        std::span<const int> prefix, int next_token) {
  CtcPrefixScorer scorer(log_probs, frames, vocab, blank);
  auto state = scorer.initial();
  for (int c : prefix) state = scorer.extend(state, c);
  return scorer.extend(state, next_token).prefix_score;
}

}  // namespace ctcdrive::dec
