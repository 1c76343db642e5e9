#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "ctcdrive/declib/greedy.hpp"
#include "ctcdrive/declib/prefix_score.hpp"

namespace ctcdrive::dec {

struct BeamOptions {
  std::size_t beam = 8;
  double alpha = 0.1;          // CTC weight in the combined score
  std::size_t max_len = 33;    // content tokens; past this only eos is allowed
  double length_reward = 0.0;  // added per content token
};

struct Hypothesis {
  std::vector<int> tokens;
  double att_score = 0;
  double ctc_score = 0;
  double score = 0;
  bool finished = false;
};

namespace detail {

/// alpha * x with 0 * -inf taken as 0, so a disabled term never poisons the score.
inline double weighted(double alpha, double x) { return alpha == 0.0 ? 0.0 : alpha * x; }

/// Higher score first; equal scores go to the lexicographically smaller
/// token sequence, a finished hypothesis reading as its tokens plus eos.
inline bool better(const Hypothesis& a, const Hypothesis& b, int eos) {
  if (a.score != b.score) return a.score > b.score;
  auto key = [eos](const Hypothesis& h) {
    auto k = h.tokens;
    if (h.finished) k.push_back(eos);
    return k;
  };
  const auto ka = key(a), kb = key(b);
  return std::lexicographical_compare(ka.begin(), ka.end(), kb.begin(), kb.end());
}

}  // namespace detail

/// Label-synchronous joint CTC/attention beam search.
///
/// `next_log_probs(prefixes)` returns, for each content-token prefix, the
/// decoder log distribution over content tokens and eos (index `eos`).
/// A hypothesis scores alpha * ctc + (1 - alpha) * att + reward * length,
/// where ctc is the CTC prefix log probability while open and the full
/// sequence log probability once closed by eos. With a non-positive
/// reward, open hypotheses can only lose score, so the search stops once
/// the best finished hypothesis beats every open one.
template <class NextFn>
Hypothesis joint_beam_search(const CtcPrefixScorer* scorer, NextFn&& next_log_probs, std::size_t content_vocab, int eos,
                             const BeamOptions& opt) {
  if (opt.beam == 0) throw std::invalid_argument("joint_beam_search: beam must be >= 1");
  if (!(opt.alpha >= 0.0 && opt.alpha <= 1.0)) throw std::invalid_argument("joint_beam_search: alpha outside [0, 1]");
  if (opt.alpha > 0.0 && scorer == nullptr) throw std::invalid_argument("joint_beam_search: alpha > 0 needs a CTC lattice");
  const bool use_ctc = opt.alpha > 0.0;
  const auto better = [eos](const Hypothesis& a, const Hypothesis& b) { return detail::better(a, b, eos); };

  struct Open {
    Hypothesis hyp;
    std::optional<CtcPrefixState> state;
  };
  std::vector<Open> open(1);
  if (use_ctc) open[0].state = scorer->initial();
  std::optional<Hypothesis> best_finished;

  for (std::size_t len = 0; len <= opt.max_len && !open.empty(); ++len) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& o : open) prefixes.push_back(o.hyp.tokens);
    const auto dists = next_log_probs(prefixes);

    std::vector<Open> candidates;
    for (std::size_t h = 0; h < open.size(); ++h) {
      const auto& base = open[h];
      const auto& dist = dists[h];
      Open fin{base.hyp, std::nullopt};
      fin.hyp.att_score += dist[static_cast<std::size_t>(eos)];
      fin.hyp.ctc_score = use_ctc ? scorer->final_score(*base.state) : 0.0;
      fin.hyp.finished = true;
      candidates.push_back(std::move(fin));
      if (len == opt.max_len) continue;
      for (std::size_t c = 0; c < content_vocab; ++c) {
        Open ext{base.hyp, std::nullopt};
        ext.hyp.tokens.push_back(static_cast<int>(c));
        ext.hyp.att_score += dist[c];
        if (use_ctc) {
          ext.state = scorer->extend(*base.state, static_cast<int>(c));
          ext.hyp.ctc_score = ext.state->prefix_score;
        }
        candidates.push_back(std::move(ext));
      }
    }
    for (auto& c : candidates) {
      c.hyp.score = detail::weighted(opt.alpha, c.hyp.ctc_score) + detail::weighted(1.0 - opt.alpha, c.hyp.att_score) +
                    opt.length_reward * static_cast<double>(c.hyp.tokens.size());
    }
    const std::size_t keep = std::min(opt.beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [&better](const Open& a, const Open& b) { return better(a.hyp, b.hyp); });
    candidates.resize(keep);

    open.clear();
    for (auto& c : candidates) {
      if (c.hyp.finished) {
        if (!best_finished || better(c.hyp, *best_finished)) best_finished = c.hyp;
      } else {
        open.push_back(std::move(c));
      }
    }
    if (best_finished && opt.length_reward <= 0.0) {
      // open hypotheses only lose score from here; drop those already behind
      std::erase_if(open, [&](const Open& o) { return o.hyp.score < best_finished->score; });
    }
  }
  if (!best_finished) throw std::logic_error("joint_beam_search: no hypothesis finished");
  return *best_finished;
}

/// Beam search for sample `b` of an encoded batch, with its CTC lattice.
template <class T>
Hypothesis joint_beam_search(const Model<T>& model, const EncodedBatch<T>& enc, const Lattice<T>& ctc_lattice,
                             std::size_t b, const BeamOptions& opt) {
  const auto& cfg = model.config();
  const auto single = select_rows(enc, {b});
  std::optional<CtcPrefixScorer> scorer;
  if (opt.alpha > 0.0) {
    scorer.emplace(ctc_lattice.log_probs.values().subspan(b * ctc_lattice.steps() * ctc_lattice.vocab()),
                   static_cast<std::size_t>(ctc_lattice.lengths[b]), ctc_lattice.vocab(), cfg.blank());
  }
  auto next = [&](const std::vector<std::vector<int>>& prefixes) {
    const std::size_t n = prefixes.size(), width = prefixes.front().size() + 1;
    std::vector<std::size_t> rows(n, 0);
    const auto batch = select_rows(single, rows);
    std::vector<int> tokens;
    tokens.reserve(n * width);
    for (const auto& p : prefixes) {
      tokens.push_back(cfg.sos());
      tokens.insert(tokens.end(), p.begin(), p.end());
    }
    Tape<T> tape(false);
    auto lat = model.decode_forced(tape, batch, tokens, std::vector<int>(n, static_cast<int>(width)));
    std::vector<std::vector<double>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = lat.row(i, width - 1);
      out[i].assign(row.begin(), row.end());
    }
    return out;
  };
  return joint_beam_search(scorer ? &*scorer : nullptr, next, cfg.content_vocab, cfg.eos(), opt);
}

}  // namespace ctcdrive::dec
