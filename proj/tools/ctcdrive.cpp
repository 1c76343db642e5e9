// Command-line front end: corpus generation, training, evaluation and
// decoding benchmarks.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ctcdrive/evalcli/evalcli.hpp"

namespace {

using namespace ctcdrive;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kInternal = 3;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string ckpt;
  std::string split = "id";
  std::string modality = "av";
  std::string strategy = "att-greedy";
  std::size_t beam = 8;
  double alpha = 0.1;
  double noise_mult = 1.0;
  std::size_t threads = 1;
  std::string beams = "1,2,4,8,16";
  std::size_t reps = 5;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Defaults, then a config next to the checkpoint (if any), then --config,
/// then --set in order.
eval::RunConfig build_config(const Common& c, bool look_beside_ckpt) {
  eval::RunConfig rc;
  if (look_beside_ckpt && !c.ckpt.empty() && c.config.empty()) {
    const auto echo = fs::path(c.ckpt).parent_path().parent_path() / "config.txt";
    if (fs::exists(echo)) rc.load(echo.string());
  }
  if (!c.config.empty()) rc.load(c.config);
  for (const auto& s : c.sets) rc.apply(s);
  rc.validate();
  return rc;
}

std::vector<model::Modality> modalities(const std::string& s) {
  if (s == "all") return {model::Modality::A, model::Modality::V, model::Modality::AV};
  try {
    return {model::parse_modality(s)};
  } catch (const std::invalid_argument& e) {
    throw eval::UsageError(e.what());
  }
}

std::vector<eval::Strategy> strategies(const std::string& s) {
  if (s == "all") return {eval::Strategy::CtcGreedy, eval::Strategy::AttGreedy, eval::Strategy::JointBeam};
  try {
    return {eval::parse_strategy(s)};
  } catch (const std::invalid_argument& e) {
    throw eval::UsageError(e.what());
  }
}

data::Split split_of(const std::string& s) {
  if (s == "id") return data::Split::TestId;
  if (s == "ood") return data::Split::TestOod;
  if (s == "labelled") return data::Split::Labelled;
  throw eval::UsageError("unknown split '" + s + "' (expected id, ood or labelled)");
}

eval::DecodeOptions decode_options(const Common& c, const eval::RunConfig& rc) {
  eval::DecodeOptions opt;
  opt.beam = c.beam;
  opt.alpha = c.alpha;
  opt.max_len = rc.train.ar_max_len;
  opt.threads = c.threads;
  opt.timing = rc.train.record_wall_time;
  if (opt.beam == 0) throw eval::UsageError("--beam must be positive");
  if (opt.alpha < 0 || opt.alpha > 1) throw eval::UsageError("--alpha must lie in [0, 1]");
  if (opt.threads == 0) throw eval::UsageError("--threads must be positive");
  return opt;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw eval::UsageError(std::string(flag) + " is required");
}

fs::path out_dir(const Common& c, const char* fallback) { return fs::path(c.out.empty() ? fallback : c.out); }

int cmd_gen_data(const Common& c) {
  auto rc = build_config(c, false);
  if (c.seed) rc.corpus.seed = *c.seed;
  rc.validate();
  const fs::path path = c.out.empty() ? fs::path("corpus.bin") : fs::path(c.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto corpus = data::gen_corpus(rc.corpus);
  try {
    data::save_corpus(corpus, path.string());
  } catch (const data::CorpusError& e) {
    throw eval::DataError(e.what());
  }
  std::cout << "wrote " << corpus.samples.size() << " samples to " << path.string() << '\n';
  return kOk;
}

int cmd_train(const Common& c) {
  auto rc = build_config(c, false);
  if (c.seed) {
    rc.train.init_seed = *c.seed;
    rc.train.train_seed = *c.seed;
  }
  const eval::RunDir dir{out_dir(c, "run")};
  fs::create_directories(dir.root);
  data::Corpus corpus;
  if (c.data.empty()) {
    corpus = data::gen_corpus(rc.corpus);
    data::save_corpus(corpus, dir.corpus().string());
  } else {
    corpus = eval::load_corpus_or_throw(c.data);
  }
  const auto outcome = eval::train_run(rc, corpus, dir, [](const train::StepMetrics& m) {
    if (m.step % 100 == 0) {
      std::cerr << "step " << m.step << " epoch " << m.epoch << " " << m.mode << " loss " << m.loss_total << '\n';
    }
  });
  std::cout << "trained " << outcome.steps << " steps; student " << outcome.student.string() << '\n';
  return kOk;
}

int cmd_eval(const Common& c) {
  require(c.ckpt, "--ckpt");
  require(c.data, "--data");
  const auto rc = build_config(c, true);
  const auto opt = decode_options(c, rc);
  const auto mods = modalities(c.modality);
  const auto strats = strategies(c.strategy);
  const auto split = split_of(c.split);
  auto params = eval::load_checkpoint_or_throw<float>(c.ckpt, rc.model);
  const auto corpus = eval::load_corpus_or_throw(c.data);
  const auto set = eval::eval_set(corpus, split, c.noise_mult);
  const model::Model<float> m(rc.model, &params);
  const auto report = eval::eval_all(m, set.samples, mods, strats, opt);

  const fs::path dir = out_dir(c, "eval");
  fs::create_directories(dir);
  std::ostringstream name;
  name << "eval-" << c.split << '-' << c.modality << '-' << c.strategy;
  if (c.noise_mult != 1.0) name << "-noise" << c.noise_mult;
  const auto path = dir / (name.str() + ".csv");
  eval::write_text(path, report.to_csv());
  std::cout << report.to_csv();
  return kOk;
}

int cmd_sweep(const Common& c) {
  require(c.ckpt, "--ckpt");
  require(c.data, "--data");
  const auto rc = build_config(c, true);
  const auto opt = decode_options(c, rc);
  std::vector<std::size_t> beams;
  for (const auto& b : split_list(c.beams)) {
    try {
      beams.push_back(std::stoul(b));
    } catch (const std::logic_error&) {
      throw eval::UsageError("bad beam size '" + b + "'");
    }
  }
  const auto mods = modalities(c.modality);
  if (mods.size() != 1) throw eval::UsageError("sweep-beam takes a single modality");
  auto params = eval::load_checkpoint_or_throw<float>(c.ckpt, rc.model);
  const auto corpus = eval::load_corpus_or_throw(c.data);
  const auto set = eval::eval_set(corpus, split_of(c.split), c.noise_mult);
  const model::Model<float> m(rc.model, &params);
  std::vector<eval::SweepRow> rows;
  try {
    rows = eval::sweep_beam(m, set.samples, mods[0], beams, opt);
  } catch (const std::invalid_argument& e) {
    throw eval::UsageError(e.what());
  }
  const fs::path dir = out_dir(c, "eval");
  fs::create_directories(dir);
  const auto csv = eval::sweep_csv(rows);
  eval::write_text(dir / ("sweep-" + c.split + "-" + c.modality + ".csv"), csv);
  std::cout << csv;
  return kOk;
}

int cmd_bench(const Common& c) {
  const auto rc = build_config(c, true);
  model::ModelParams<float> params =
      c.ckpt.empty() ? model::init_params<float>(rc.model, rc.train.init_seed)
                     : eval::load_checkpoint_or_throw<float>(c.ckpt, rc.model);
  const model::Model<float> m(rc.model, &params);
  eval::BenchOptions opt;
  opt.beam = c.beam;
  opt.alpha = c.alpha;
  opt.repetitions = c.reps;
  if (c.seed) opt.seed = *c.seed;
  const auto table = eval::bench_decode(m, rc.corpus, opt);
  const fs::path dir = out_dir(c, "eval");
  fs::create_directories(dir);
  eval::write_text(dir / "bench-decode.csv", table.to_csv());
  std::cout << table.to_csv();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CTC-driven pseudo-label self-training on a synthetic audio-visual task"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&c](CLI::App* sub) {
    sub->add_option("--config", c.config, "key=value config file");
    sub->add_option("--set", c.sets, "override one config key (key=value), repeatable");
    sub->add_option("--seed", c.seed, "data seed for gen-data, init and train seed for train");
    sub->add_option("--out", c.out, "output path (file for gen-data, directory otherwise)");
  };
  auto add_eval = [&c](CLI::App* sub) {
    sub->add_option("--data", c.data, "corpus file");
    sub->add_option("--ckpt", c.ckpt, "model checkpoint");
    sub->add_option("--split", c.split, "id, ood or labelled");
    sub->add_option("--modality", c.modality, "a, v, av or all");
    sub->add_option("--alpha", c.alpha, "CTC weight in joint beam search");
    sub->add_option("--beam", c.beam, "beam size");
    sub->add_option("--noise-mult", c.noise_mult, "scale of the audio noise around the clean rendering");
    sub->add_option("--threads", c.threads, "decoding threads (1 is deterministic)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate and save a corpus");
  add_common(gen);
  auto* train = app.add_subcommand("train", "supervised warm start then self-training");
  add_common(train);
  train->add_option("--data", c.data, "corpus file (generated from the config when absent)");
  auto* ev = app.add_subcommand("eval", "bucketed WER report");
  add_common(ev);
  add_eval(ev);
  ev->add_option("--strategy", c.strategy, "ctc-greedy, att-greedy, joint-beam or all");
  auto* sweep = app.add_subcommand("sweep-beam", "joint-beam WER over beam sizes");
  add_common(sweep);
  add_eval(sweep);
  sweep->add_option("--beams", c.beams, "ascending comma-separated beam sizes");
  auto* bench = app.add_subcommand("bench-decode", "pseudo-label generation timings");
  add_common(bench);
  bench->add_option("--ckpt", c.ckpt, "model checkpoint (random init when absent)");
  bench->add_option("--beam", c.beam, "beam size");
  bench->add_option("--alpha", c.alpha, "CTC weight in joint beam search");
  bench->add_option("--reps", c.reps, "timed repetitions per method and length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(c);
    if (*train) return cmd_train(c);
    if (*ev) return cmd_eval(c);
    if (*sweep) return cmd_sweep(c);
    if (*bench) return cmd_bench(c);
  } catch (const eval::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const eval::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const data::CorpusError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const model::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}
