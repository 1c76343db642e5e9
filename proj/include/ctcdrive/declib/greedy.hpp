#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ctcdrive/seqmodel/model.hpp"

namespace ctcdrive::dec {

using model::EncodedBatch;
using model::Lattice;
using model::Model;
using model::Tape;
using model::Tensor;

/// Attention-side label sequence with the probability of each chosen token.
struct AttLabelSequence {
  std::vector<int> tokens;  // AR output never holds eos; a forced position's argmax may be eos
  std::vector<double> confidences;
  bool ended = false;           // the sequence was closed by eos
  double end_confidence = 0.0;  // decoder probability of eos where the sequence ends
  std::size_t passes = 0;       // decoder forward passes that included this sample
};

/// Rows `rows` of an encoded batch, as a new constant batch.
template <class T>
EncodedBatch<T> select_rows(const EncodedBatch<T>& enc, const std::vector<std::size_t>& rows) {
  const std::size_t L = enc.frames(), d = enc.hidden.extent(2);
  std::vector<T> hidden(rows.size() * L * d);
  std::vector<int> lengths;
  auto src = enc.hidden.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.begin() + rows[i] * L * d, L * d, hidden.begin() + i * L * d);
    lengths.push_back(enc.lengths[rows[i]]);
  }
  return {Tensor<T>::constant({rows.size(), L, d}, std::move(hidden)), std::move(lengths), enc.modality};
}

template <class T>
std::size_t argmax(std::span<const T> row, std::size_t limit) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < limit; ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

struct ArGreedyOptions {
  std::size_t max_len = 33;
  std::size_t min_len = 0;  // eos is not selectable before this many tokens
};

/// Autoregressive greedy decoding over `batch` samples.
///
/// `step(rows, prefixes)` returns one decoder log distribution (content
/// tokens then eos at index `eos`) per open sample, given its content
/// prefix. Each call counts as one pass for every sample in `rows`, so a
/// sample closed by eos after U tokens takes U + 1 passes and one cut at
/// max_len takes max_len.
template <class StepFn>
std::vector<AttLabelSequence> ar_greedy(StepFn&& step, std::size_t batch, std::size_t eos,
                                        const ArGreedyOptions& options) {
  std::vector<AttLabelSequence> out(batch);
  std::vector<std::size_t> open(batch);
  for (std::size_t b = 0; b < batch; ++b) open[b] = b;
  for (std::size_t len = 0; len < options.max_len && !open.empty(); ++len) {
    std::vector<std::vector<int>> prefixes;
    for (std::size_t b : open) prefixes.push_back(out[b].tokens);
    const auto dists = step(open, prefixes);
    std::vector<std::size_t> still_open;
    for (std::size_t i = 0; i < open.size(); ++i) {
      auto& seq = out[open[i]];
      ++seq.passes;
      const auto& row = dists[i];
      const std::size_t best = argmax<double>(row, len < options.min_len ? eos : row.size());
      const double p = std::exp(row[best]);
      if (best == eos) {
        seq.ended = true;
        seq.end_confidence = p;
      } else {
        seq.tokens.push_back(static_cast<int>(best));
        seq.confidences.push_back(p);
        still_open.push_back(open[i]);
      }
    }
    open = std::move(still_open);
  }
  return out;
}

/// ar_greedy driven by the model's decoder. Each step re-runs the decoder
/// over the full prefix of the open samples (no cached keys or values).
template <class T>
std::vector<AttLabelSequence> ar_greedy(const Model<T>& model, const EncodedBatch<T>& enc,
                                        const ArGreedyOptions& options) {
  const auto& cfg = model.config();
  if (options.max_len + 1 > cfg.max_tokens) {
    throw grad::DimensionError("ar_greedy: max_len " + std::to_string(options.max_len) + " leaves no room for sos");
  }
  auto step = [&](const std::vector<std::size_t>& rows, const std::vector<std::vector<int>>& prefixes) {
    const auto sub = rows.size() == enc.batch() ? enc : select_rows(enc, rows);
    const std::size_t width = prefixes.front().size() + 1;
    std::vector<int> tokens;
    tokens.reserve(rows.size() * width);
    for (const auto& p : prefixes) {
      tokens.push_back(cfg.sos());
      tokens.insert(tokens.end(), p.begin(), p.end());
    }
    Tape<T> tape(false);
    auto lat = model.decode_forced(tape, sub, tokens, std::vector<int>(rows.size(), static_cast<int>(width)));
    std::vector<std::vector<double>> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = lat.row(i, width - 1);
      out[i].assign(row.begin(), row.end());
    }
    return out;
  };
  return ar_greedy(step, enc.batch(), static_cast<std::size_t>(cfg.eos()), options);
}

/// Result of teacher forcing with a fixed (CTC-derived) prefix.
struct ForcedLabels {
  std::vector<AttLabelSequence> labels;  // one per input prefix; empty when skipped
  std::vector<bool> skipped;             // empty prefix or too long for the decoder
};

/// Feeds [sos, prefix...] for every non-empty prefix that fits and reads the
/// argmax at each position in one decoder pass over the batch. Output u
/// conditions on prefix[0..u-1]; the label has exactly prefix.size()
/// tokens. The extra final position gives the eos probability.
template <class T>
ForcedLabels ctc_driven_forcing(const Model<T>& model, const EncodedBatch<T>& enc,
                                const std::vector<std::vector<int>>& prefixes) {
  const auto& cfg = model.config();
  const std::size_t B = enc.batch();
  if (prefixes.size() != B) throw grad::DimensionError("ctc_driven_forcing: one prefix per sample required");
  ForcedLabels out;
  out.labels.resize(B);
  out.skipped.assign(B, false);
  std::vector<std::size_t> rows;
  std::size_t width = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (prefixes[b].empty() || prefixes[b].size() + 1 > cfg.max_tokens) {
      out.skipped[b] = true;
      continue;
    }
    rows.push_back(b);
    width = std::max(width, prefixes[b].size() + 1);
  }
  if (rows.empty()) return out;
  const auto sub = rows.size() == B ? enc : select_rows(enc, rows);
  std::vector<int> tokens(rows.size() * width, cfg.sos());
  std::vector<int> lengths;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& p = prefixes[rows[i]];
    std::copy(p.begin(), p.end(), tokens.begin() + i * width + 1);
    lengths.push_back(static_cast<int>(p.size() + 1));
  }
  Tape<T> tape(false);
  auto lat = model.decode_forced(tape, sub, tokens, lengths);
  const auto eos = static_cast<std::size_t>(cfg.eos());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& seq = out.labels[rows[i]];
    const std::size_t U = prefixes[rows[i]].size();
    for (std::size_t u = 0; u < U; ++u) {
      const auto row = lat.row(i, u);
      const std::size_t best = argmax(row, cfg.vocab());
      seq.tokens.push_back(static_cast<int>(best));
      seq.confidences.push_back(std::exp(static_cast<double>(row[best])));
    }
    seq.end_confidence = std::exp(static_cast<double>(lat.row(i, U)[eos]));
    seq.ended = true;
    seq.passes = 1;
  }
  return out;
}

}  // namespace ctcdrive::dec
