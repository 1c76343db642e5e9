#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ctcdrive/ctclib/ctc.hpp"
#include "ctcdrive/declib/beam.hpp"
#include "ctcdrive/declib/greedy.hpp"
#include "ctcdrive/evalcli/wer.hpp"
#include "ctcdrive/synthdata/batch.hpp"
#include "ctcdrive/synthdata/corpus.hpp"

namespace ctcdrive::eval {

using data::Sample;
using model::Modality;

enum class Strategy { CtcGreedy, AttGreedy, JointBeam };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::CtcGreedy:
      return "ctc-greedy";
    case Strategy::AttGreedy:
      return "att-greedy";
    case Strategy::JointBeam:
      return "joint-beam";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "ctc-greedy") return Strategy::CtcGreedy;
  if (s == "att-greedy") return Strategy::AttGreedy;
  if (s == "joint-beam") return Strategy::JointBeam;
  throw std::invalid_argument("unknown strategy '" + s + "' (expected ctc-greedy, att-greedy or joint-beam)");
}

struct DecodeOptions {
  std::size_t beam = 8;
  double alpha = 0.1;
  std::size_t max_len = 33;
  double length_reward = 0.0;
  std::size_t batch = 32;   // samples encoded together
  std::size_t threads = 1;  // >1 splits the samples into contiguous chunks decoded concurrently
  bool timing = true;       // false writes 0 for decode times, making reports byte-stable
};

/// Hypotheses for every sample, in order. Optionally reports wall time.
template <class T>
std::vector<std::vector<int>> decode_samples(const model::Model<T>& m, const std::vector<const Sample*>& samples,
                                             Modality modality, Strategy strategy, const DecodeOptions& opt,
                                             double* wall_ms = nullptr) {
  const auto& mc = m.config();
  std::vector<std::vector<int>> out(samples.size());
  auto run_chunk = [&](std::size_t begin, std::size_t end) {
    for (std::size_t lo = begin; lo < end; lo += opt.batch) {
      const std::size_t hi = std::min(end, lo + opt.batch);
      const std::vector<const Sample*> part(samples.begin() + static_cast<std::ptrdiff_t>(lo),
                                            samples.begin() + static_cast<std::ptrdiff_t>(hi));
      const auto frames = data::stack_frames<T>(part, modality, mc.frame_dim);
      grad::Tape<T> tape(false);
      const auto enc = m.encode(tape, frames.frames, frames.lengths, modality);
      if (strategy == Strategy::AttGreedy) {
        const auto seqs = dec::ar_greedy(m, enc, dec::ArGreedyOptions{opt.max_len, 0});
        for (std::size_t i = 0; i < part.size(); ++i) out[lo + i] = seqs[i].tokens;
        continue;
      }
      const auto lattice = m.ctc_head(tape, enc);
      for (std::size_t i = 0; i < part.size(); ++i) {
        if (strategy == Strategy::CtcGreedy) {
          const auto path = ctc::ctc_greedy<T>(lattice.log_probs.values().subspan(i * lattice.steps() * lattice.vocab()),
                                               static_cast<std::size_t>(frames.lengths[i]), lattice.vocab());
          out[lo + i] = ctc::collapse(path.tokens, mc.blank());
        } else {
          const dec::BeamOptions bo{opt.beam, opt.alpha, opt.max_len, opt.length_reward};
          out[lo + i] = dec::joint_beam_search(m, enc, lattice, i, bo).tokens;
        }
      }
    }
  };
  const auto start = std::chrono::steady_clock::now();
  const std::size_t threads = std::max<std::size_t>(1, std::min(opt.threads, samples.size()));
  if (threads == 1) {
    run_chunk(0, samples.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (samples.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * per, e = std::min(samples.size(), b + per);
      if (b < e) pool.emplace_back(run_chunk, b, e);
    }
    for (auto& th : pool) th.join();
  }
  if (wall_ms) {
    *wall_ms = opt.timing ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count() : 0.0;
  }
  return out;
}

struct ReportRow {
  std::string modality, strategy, bucket;
  std::size_t samples = 0;
  EditCounts counts;
  double mean_decode_ms = 0;
};

struct EvalReport {
  std::vector<ReportRow> rows;

  static std::string csv_header() {
    return "modality,strategy,bucket,samples,ref_tokens,substitutions,insertions,deletions,wer,mean_decode_ms";
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << csv_header() << '\n';
    for (const auto& r : rows) {
      os << r.modality << ',' << r.strategy << ',' << r.bucket << ',' << r.samples << ',' << r.counts.reference_tokens
         << ',' << r.counts.substitutions << ',' << r.counts.insertions << ',' << r.counts.deletions << ','
         << std::setprecision(9) << r.counts.rate() << ',' << std::setprecision(6) << r.mean_decode_ms << '\n';
    }
    return os.str();
  }

  const ReportRow* find(const std::string& modality, const std::string& strategy, const std::string& bucket) const {
    for (const auto& r : rows) {
      if (r.modality == modality && r.strategy == strategy && r.bucket == bucket) return &r;
    }
    return nullptr;
  }
};

/// WER per reference-length bucket, plus an "all" row, for one modality
/// and strategy. Buckets with no samples are omitted.
template <class T>
EvalReport eval_bucketed(const model::Model<T>& m, const std::vector<const Sample*>& samples, Modality modality,
                         Strategy strategy, const DecodeOptions& opt) {
  double ms = 0;
  const auto hyps = decode_samples(m, samples, modality, strategy, opt, &ms);
  const auto& buckets = data::length_buckets();
  std::vector<EditCounts> per(buckets.size());
  std::vector<std::size_t> count(buckets.size(), 0);
  EditCounts all;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto c = wer(hyps[i], samples[i]->tokens);
    const auto b = data::bucket_of(samples[i]->length());
    per[b] += c;
    ++count[b];
    all += c;
  }
  EvalReport report;
  const double mean_ms = samples.empty() ? 0.0 : ms / static_cast<double>(samples.size());
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    if (count[b] == 0) continue;
    report.rows.push_back({model::modality_name(modality), strategy_name(strategy), buckets[b].label(), count[b], per[b], mean_ms});
  }
  report.rows.push_back({model::modality_name(modality), strategy_name(strategy), "all", samples.size(), all, mean_ms});
  return report;
}

struct SweepRow {
  std::size_t beam = 0;
  double alpha = 0;
  std::size_t samples = 0;
  EditCounts counts;
  double mean_decode_ms = 0;
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "beam,alpha,samples,ref_tokens,substitutions,insertions,deletions,wer,mean_decode_ms\n";
  for (const auto& r : rows) {
    os << r.beam << ',' << r.alpha << ',' << r.samples << ',' << r.counts.reference_tokens << ','
       << r.counts.substitutions << ',' << r.counts.insertions << ',' << r.counts.deletions << ',' << std::setprecision(9)
       << r.counts.rate() << ',' << std::setprecision(6) << r.mean_decode_ms << '\n';
  }
  return os.str();
}

/// Corpus-level joint-beam WER for each beam size (ascending).
template <class T>
std::vector<SweepRow> sweep_beam(const model::Model<T>& m, const std::vector<const Sample*>& samples, Modality modality,
                                 const std::vector<std::size_t>& beams, DecodeOptions opt) {
  if (!std::is_sorted(beams.begin(), beams.end()) || beams.empty() || beams.front() == 0) {
    throw std::invalid_argument("sweep_beam: beams must be positive and ascending");
  }
  std::vector<SweepRow> rows;
  for (std::size_t beam : beams) {
    opt.beam = beam;
    double ms = 0;
    const auto hyps = decode_samples(m, samples, modality, Strategy::JointBeam, opt, &ms);
    SweepRow row{beam, opt.alpha, samples.size(), {}, samples.empty() ? 0.0 : ms / static_cast<double>(samples.size())};
    for (std::size_t i = 0; i < samples.size(); ++i) row.counts += wer(hyps[i], samples[i]->tokens);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ctcdrive::eval
