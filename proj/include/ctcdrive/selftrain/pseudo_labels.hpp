#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ctcdrive/ctclib/ctc.hpp"
#include "ctcdrive/declib/greedy.hpp"
#include "ctcdrive/selftrain/config.hpp"

namespace ctcdrive::train {

enum class SkipReason { None, EmptyPl, Overflow };

inline const char* skip_reason_name(SkipReason r) {
  switch (r) {
    case SkipReason::None:
      return "none";
    case SkipReason::EmptyPl:
      return "empty-pl";
    case SkipReason::Overflow:
      return "overflow";
  }
  return "?";
}

struct PseudoLabel {
  std::vector<int> ctc_pl;
  double ctc_confidence = 0;
  bool accept_ctc = false;
  dec::AttLabelSequence att_pl;
  std::vector<bool> accept_att;  // one per att_pl token
  bool accept_end = false;       // eos target after the last att_pl token
  bool accept_att_seq = false;   // geometric mean of att_pl confidences passes; gates CTC on att_pl
  SkipReason skip = SkipReason::None;

  bool skipped() const { return skip != SkipReason::None; }
};

/// Work done while labelling, for mode-isolation and amortisation checks.
struct PlCounters {
  std::size_t teacher_encodes = 0;  // samples the teacher encoded
  std::size_t ar_calls = 0;
  std::size_t forcing_calls = 0;
  std::size_t forcing_events = 0;         // samples labelled by CTC-driven forcing
  std::size_t forcing_decoder_passes = 0; // decoder passes spent on them
  std::size_t alignment_violations = 0;   // forced labels whose length differs from the CTC label
};

struct PseudoLabelBatch {
  Mode mode = Mode::CtcDriven;
  std::vector<PseudoLabel> items;

  std::size_t skipped() const {
    std::size_t n = 0;
    for (const auto& p : items) n += p.skipped();
    return n;
  }
};

inline bool passes(double confidence, double threshold) { return confidence >= threshold; }

/// Teacher labels for a clean audiovisual batch. The CTC label is the
/// collapsed greedy path; the attention label comes from one forced pass
/// over [sos, ctc label] (CTC-driven) or from greedy autoregressive
/// decoding (AR). Runs without gradients and never throws on bad labels:
/// they are skip-flagged instead.
template <class T>
PseudoLabelBatch generate_pls(const model::Model<T>& teacher, const grad::Tensor<T>& av_frames,
                              const std::vector<int>& lengths, Mode mode, const TrainConfig& cfg,
                              PlCounters* counters = nullptr) {
  const auto& mc = teacher.config();
  model::Tape<T> tape(false);
  const auto enc = teacher.encode(tape, av_frames, lengths, Modality::AV);
  const auto lattice = teacher.ctc_head(tape, enc);
  const std::size_t B = enc.batch();
  PseudoLabelBatch out;
  out.mode = mode;
  out.items.resize(B);
  if (counters) counters->teacher_encodes += B;

  std::vector<std::vector<int>> ctc_labels(B);
  for (std::size_t b = 0; b < B; ++b) {
    auto& pl = out.items[b];
    const auto path = ctc::ctc_greedy<T>(lattice.log_probs.values().subspan(b * lattice.steps() * lattice.vocab()),
                                         static_cast<std::size_t>(lengths[b]), lattice.vocab());
    pl.ctc_pl = ctc::collapse(path.tokens, mc.blank());
    pl.ctc_confidence = ctc::sequence_confidence(path.probs);
    pl.accept_ctc = passes(pl.ctc_confidence, cfg.conf_threshold);
    if (pl.ctc_pl.empty()) pl.skip = SkipReason::EmptyPl;
    ctc_labels[b] = pl.ctc_pl;
  }

  if (mode == Mode::CtcDriven) {
    const auto before = model::decoder_pass_counter().load();
    const auto forced = dec::ctc_driven_forcing(teacher, enc, ctc_labels);
    if (counters) {
      ++counters->forcing_calls;
      counters->forcing_decoder_passes += model::decoder_pass_counter().load() - before;
    }
    for (std::size_t b = 0; b < B; ++b) {
      auto& pl = out.items[b];
      if (forced.skipped[b]) {
        if (!pl.skipped()) pl.skip = SkipReason::Overflow;
        continue;
      }
      pl.att_pl = forced.labels[b];
      if (counters) {
        ++counters->forcing_events;
        if (pl.att_pl.tokens.size() != pl.ctc_pl.size()) ++counters->alignment_violations;
      }
    }
  } else {
    if (counters) ++counters->ar_calls;
    const auto decoded = dec::ar_greedy(teacher, enc, dec::ArGreedyOptions{cfg.ar_max_len, 0});
    for (std::size_t b = 0; b < B; ++b) {
      if (!out.items[b].skipped()) out.items[b].att_pl = decoded[b];
    }
  }

  for (auto& pl : out.items) {
    if (pl.skipped()) continue;
    const auto& att = pl.att_pl;
    for (double c : att.confidences) pl.accept_att.push_back(passes(c, cfg.conf_threshold));
    pl.accept_end = att.ended && passes(att.end_confidence, cfg.conf_threshold);
    pl.accept_att_seq = !att.tokens.empty() && passes(ctc::sequence_confidence(att.confidences), cfg.conf_threshold);
  }
  return out;
}

}  // namespace ctcdrive::train
