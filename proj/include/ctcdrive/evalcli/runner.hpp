#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ctcdrive/evalcli/eval.hpp"
#include "ctcdrive/evalcli/run_config.hpp"
#include "ctcdrive/selftrain/selftrain.hpp"
#include "ctcdrive/seqmodel/checkpoint.hpp"
#include "ctcdrive/synthdata/io.hpp"

namespace ctcdrive::eval {

namespace fs = std::filesystem;

/// Run directory layout.
struct RunDir {
  fs::path root;

  fs::path config() const { return root / "config.txt"; }
  fs::path metrics() const { return root / "metrics.csv"; }
  fs::path manifest() const { return root / "manifest.txt"; }
  fs::path corpus() const { return root / "corpus.bin"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path reports() const { return root / "reports"; }
  fs::path checkpoint(const std::string& who, std::size_t epoch) const {
    return checkpoints() / (who + "-epoch" + std::to_string(epoch));
  }
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Ordered key=value manifest.
struct Manifest {
  std::vector<std::pair<std::string, std::string>> entries;

  void add(const std::string& key, const std::string& value) { entries.emplace_back(key, value); }
  template <class N>
  void add(const std::string& key, N value) {
    add(key, std::to_string(value));
  }
  std::string text() const {
    std::string s;
    for (const auto& [k, v] : entries) s += k + "=" + v + "\n";
    return s;
  }
};

inline data::Corpus load_corpus_or_throw(const std::string& path) {
  try {
    return data::load_corpus(path);
  } catch (const data::CorpusError& e) {
    throw DataError(e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": " + e.what());
  }
}

template <class T>
model::ModelParams<T> load_checkpoint_or_throw(const std::string& path, const model::ModelConfig& mc) {
  try {
    return model::load_checkpoint<T>(path, mc);
  } catch (const model::CheckpointError& e) {
    throw DataError(e.what());
  }
}

struct TrainOutcome {
  fs::path student, teacher;  // final checkpoints; teacher is empty without a semi phase
  train::PlCounters counters;
  std::size_t steps = 0;
  std::size_t epochs = 0;
};

/// Trains on `corpus` and fills `dir`: config echo, metrics.csv, checkpoints
/// and manifest. The corpus settings of `rc` are replaced by the corpus's
/// own so the echo describes the data actually used.
inline TrainOutcome train_run(RunConfig rc, const data::Corpus& corpus, const RunDir& dir,
                              const std::function<void(const train::StepMetrics&)>& progress = {}) {
  for (const auto& [k, v] : corpus.config.to_kv()) rc.set(k, v);
  rc.validate();
  fs::create_directories(dir.checkpoints());
  fs::create_directories(dir.reports());
  write_text(dir.config(), rc.echo());

  std::ofstream metrics(dir.metrics(), std::ios::binary);
  if (!metrics) throw DataError("cannot write " + dir.metrics().string());
  metrics << train::StepMetrics::csv_header() << '\n';

  const auto t0 = std::chrono::steady_clock::now();
  train::TrainState<float> state(rc.model, rc.train);
  TrainOutcome out;
  const std::size_t every = rc.train.checkpoint_every;
  auto on_step = [&](const train::StepMetrics& m) {
    metrics << m.csv_row() << '\n';
    ++out.steps;
    if (progress) progress(m);
  };
  auto on_epoch = [&](const train::TrainState<float>& s, std::size_t epoch, bool last) {
    out.epochs = epoch;
    if (!last && (every == 0 || epoch % every != 0)) return;
    model::save_checkpoint(s.student, dir.checkpoint("student", epoch).string());
    if (s.teacher) model::save_checkpoint(*s.teacher, dir.checkpoint("teacher", epoch).string());
    if (last) {
      out.student = dir.checkpoint("student", epoch);
      if (s.teacher) out.teacher = dir.checkpoint("teacher", epoch);
    }
  };
  train::run_training<float>(state, corpus.split(data::Split::Labelled), corpus.split(data::Split::Unlabelled),
                             on_step, on_epoch);
  metrics.close();
  if (!metrics) throw DataError("write failed for " + dir.metrics().string());
  out.counters = state.counters;

  Manifest man;
  man.add("command", std::string("train"));
  man.add("parameters", state.student.count());
  man.add("steps", out.steps);
  man.add("epochs", out.epochs);
  man.add("labelled_samples", corpus.split(data::Split::Labelled).size());
  man.add("unlabelled_samples", corpus.split(data::Split::Unlabelled).size());
  man.add("student_checkpoint", fs::relative(out.student, dir.root).string());
  man.add("teacher_checkpoint", out.teacher.empty() ? std::string("none") : fs::relative(out.teacher, dir.root).string());
  man.add("teacher_encodes", out.counters.teacher_encodes);
  man.add("ar_calls", out.counters.ar_calls);
  man.add("forcing_calls", out.counters.forcing_calls);
  man.add("forcing_events", out.counters.forcing_events);
  man.add("forcing_decoder_passes", out.counters.forcing_decoder_passes);
  man.add("alignment_violations", out.counters.alignment_violations);
  if (rc.train.record_wall_time) {
    man.add("wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  write_text(dir.manifest(), man.text());
  return out;
}

/// Samples of one split, optionally with audio noise rescaled.
struct EvalSet {
  std::vector<data::Sample> owned;
  std::vector<const data::Sample*> samples;
};

inline EvalSet eval_set(const data::Corpus& corpus, data::Split split, double noise_mult = 1.0) {
  EvalSet set;
  const auto base = corpus.split(split);
  if (noise_mult == 1.0) {
    set.samples = base;
    return set;
  }
  const auto src = data::Sources::derive(corpus.config);
  for (const auto* s : base) set.owned.push_back(data::noise_sweep_view(*s, src, corpus.config, noise_mult));
  for (const auto& s : set.owned) set.samples.push_back(&s);
  return set;
}

/// Bucketed reports for every requested modality and strategy, in order.
template <class T>
EvalReport eval_all(const model::Model<T>& m, const std::vector<const data::Sample*>& samples,
                    const std::vector<model::Modality>& modalities, const std::vector<Strategy>& strategies,
                    const DecodeOptions& opt) {
  EvalReport all;
  for (auto mod : modalities) {
    for (auto s : strategies) {
      auto r = eval_bucketed(m, samples, mod, s, opt);
      all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
    }
  }
  return all;
}

}  // namespace ctcdrive::eval
