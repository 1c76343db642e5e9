#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctcdrive/selftrain/config.hpp"
#include "ctcdrive/seqmodel/config.hpp"
#include "ctcdrive/synthdata/corpus.hpp"

namespace ctcdrive::eval {

/// Bad flags, keys or values; the CLI maps it to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or unreadable corpus/checkpoint files; exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat key=value view over the model, corpus and training settings.
/// content_vocab and frame_dim are corpus keys and also size the model.
struct RunConfig {
  model::ModelConfig model;
  data::CorpusConfig corpus;
  train::TrainConfig train;

  RunConfig() { sync(); }

  std::vector<std::pair<std::string, std::string>> to_kv() const {
    auto n = [](std::size_t v) { return std::to_string(v); };
    std::vector<std::pair<std::string, std::string>> kv{{"d_model", n(model.d_model)},
                                                        {"encoder_layers", n(model.encoder_layers)},
                                                        {"decoder_layers", n(model.decoder_layers)},
                                                        {"heads", n(model.heads)},
                                                        {"ffn_dim", n(model.ffn_dim)},
                                                        {"max_frames", n(model.max_frames)},
                                                        {"max_tokens", n(model.max_tokens)}};
    for (auto& p : corpus.to_kv()) kv.push_back(std::move(p));
    for (auto& p : train.to_kv()) kv.push_back(std::move(p));
    return kv;
  }

  /// Sets one key; throws UsageError naming the key for unknown keys or bad values.
  void set(const std::string& key, const std::string& value) {
    bool known = false;
    try {
      auto z = [&] {
        if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
        return static_cast<std::size_t>(std::stoull(value));
      };
      known = true;
      if (key == "d_model") model.d_model = z();
      else if (key == "encoder_layers") model.encoder_layers = z();
      else if (key == "decoder_layers") model.decoder_layers = z();
      else if (key == "heads") model.heads = z();
      else if (key == "ffn_dim") model.ffn_dim = z();
      else if (key == "max_frames") model.max_frames = z();
      else if (key == "max_tokens") model.max_tokens = z();
      else known = corpus.set(key, value) || train.set(key, value);
    } catch (const std::logic_error&) {
      throw UsageError("bad value '" + value + "' for key '" + key + "'");
    }
    if (!known) throw UsageError("unknown config key '" + key + "'");
    sync();
  }

  /// "key=value" override, as given to --set.
  void apply(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  /// Line-oriented key=value text; '#' starts a comment, blank lines are ignored.
  void parse(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    for (int no = 1; std::getline(in, line); ++no) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      try {
        apply(line);
      } catch (const UsageError& e) {
        throw UsageError(origin + ":" + std::to_string(no) + ": " + e.what());
      }
    }
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    parse(ss.str(), path);
  }

  std::string echo() const {
    std::ostringstream os;
    for (const auto& [k, v] : to_kv()) os << k << '=' << v << '\n';
    return os.str();
  }

  void validate() const {
    try {
      model.validate();
      corpus.validate();
      train.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }

 private:
  void sync() {
    model.content_vocab = static_cast<std::size_t>(corpus.content_vocab);
    model.frame_dim = static_cast<std::size_t>(corpus.frame_dim);
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }
};

}  // namespace ctcdrive::eval
