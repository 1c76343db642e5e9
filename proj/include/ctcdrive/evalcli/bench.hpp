#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ctcdrive/ctclib/ctc.hpp"
#include "ctcdrive/declib/beam.hpp"
#include "ctcdrive/declib/greedy.hpp"
#include "ctcdrive/rng.hpp"
#include "ctcdrive/synthdata/batch.hpp"
#include "ctcdrive/synthdata/corpus.hpp"

namespace ctcdrive::eval {

struct BenchOptions {
  std::size_t batch = 32;
  std::vector<int> lengths{8, 16, 24, 32};
  std::size_t repetitions = 5;  // timed runs per method and length
  std::size_t warmup = 1;       // untimed runs before those
  std::size_t beam = 8;
  double alpha = 0.1;
  bool with_beam = true;
  std::uint64_t seed = 7;
};

struct BenchRow {
  int length = 0;
  std::string method;  // encode, ctc-greedy, forcing, ar-greedy, joint-beam
  double median_ms = 0;
  double passes_per_sample = 0;  // decoder forward passes a sample takes part in
};

struct BenchTable {
  std::vector<BenchRow> rows;

  const BenchRow* find(int length, const std::string& method) const {
    for (const auto& r : rows) {
      if (r.length == length && r.method == method) return &r;
    }
    return nullptr;
  }

  /// ar-greedy time over forcing time at one length.
  double speedup(int length) const {
    const auto* ar = find(length, "ar-greedy");
    const auto* f = find(length, "forcing");
    return ar && f && f->median_ms > 0 ? ar->median_ms / f->median_ms : 0.0;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "length,method,median_ms,passes_per_sample,speedup_vs_ar\n";
    for (const auto& r : rows) {
      const auto* ar = find(r.length, "ar-greedy");
      const double s = ar && r.median_ms > 0 ? ar->median_ms / r.median_ms : 0.0;
      os << r.length << ',' << r.method << ',' << std::setprecision(6) << r.median_ms << ',' << r.passes_per_sample << ','
         << s << '\n';
    }
    return os.str();
  }
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Times pseudo-label generation on AV batches whose references all have
/// `length` tokens. The teacher encoding is shared and timed on its own;
/// the other methods start from it. Forcing prefixes are the collapsed
/// greedy CTC output trimmed or padded (repeating its last token) to
/// exactly `length`, and AR decoding runs with min_len = length so both
/// methods emit labels of the same size whatever the weights are.
template <class T>
BenchTable bench_decode(const model::Model<T>& m, const data::CorpusConfig& corpus_cfg, const BenchOptions& opt) {
  const auto& mc = m.config();
  const data::Sources src = data::Sources::derive(corpus_cfg);
  BenchTable table;
  for (int U : opt.lengths) {
    Rng rng = Rng(opt.seed).derive(static_cast<std::uint64_t>(U));
    std::vector<data::Sample> samples(opt.batch);
    for (auto& s : samples) {
      s.tokens = data::sample_tokens(src, corpus_cfg, U, rng);
      data::render_views(s, src, corpus_cfg, rng);
    }
    std::vector<const data::Sample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    const auto frames = data::stack_frames<T>(ptrs, model::Modality::AV, mc.frame_dim);
    const std::size_t B = samples.size();

    auto encode = [&] {
      grad::Tape<T> tape(false);
      return m.encode(tape, frames.frames, frames.lengths, model::Modality::AV);
    };
    const auto enc = encode();
    auto collapsed = [&](const model::Lattice<T>& lat) {
      std::vector<std::vector<int>> out(B);
      for (std::size_t b = 0; b < B; ++b) {
        const auto path = ctc::ctc_greedy<T>(lat.log_probs.values().subspan(b * lat.steps() * lat.vocab()),
                                             static_cast<std::size_t>(frames.lengths[b]), lat.vocab());
        out[b] = ctc::collapse(path.tokens, mc.blank());
      }
      return out;
    };
    auto ctc_greedy = [&] {
      grad::Tape<T> tape(false);
      return collapsed(m.ctc_head(tape, enc));
    };
    auto forcing = [&] {
      auto prefixes = ctc_greedy();
      for (auto& p : prefixes) {
        const int fill = p.empty() ? 0 : p.back();
        p.resize(static_cast<std::size_t>(U), fill);
      }
      return dec::ctc_driven_forcing(m, enc, prefixes);
    };
    auto ar = [&] {
      return dec::ar_greedy(m, enc, dec::ArGreedyOptions{static_cast<std::size_t>(U) + 1, static_cast<std::size_t>(U)});
    };
    auto beam = [&] {
      grad::Tape<T> tape(false);
      const auto lat = m.ctc_head(tape, enc);
      const dec::BeamOptions bo{opt.beam, opt.alpha, static_cast<std::size_t>(U) + 1, 0.0};
      for (std::size_t b = 0; b < B; ++b) dec::joint_beam_search(m, enc, lat, b, bo);
    };

    // passes: decoder calls during one run, scaled to what one sample sees
    auto time = [&](const std::string& name, const std::function<void()>& fn, bool per_sample_calls) {
      std::vector<double> ms;
      double passes = 0;
      for (std::size_t r = 0; r < opt.warmup + opt.repetitions; ++r) {
        const auto before = model::decoder_pass_counter().load();
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        const auto calls = static_cast<double>(model::decoder_pass_counter().load() - before);
        passes = per_sample_calls ? calls / static_cast<double>(B) : calls;
        if (r >= opt.warmup) ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      table.rows.push_back({U, name, median_of(ms), passes});
    };
    time("encode", [&] { encode(); }, false);
    time("ctc-greedy", [&] { ctc_greedy(); }, false);
    time("forcing", [&] { forcing(); }, false);
    time("ar-greedy", [&] { ar(); }, false);
    if (opt.with_beam) time("joint-beam", beam, true);
  }
  return table;
}

}  // namespace ctcdrive::eval
