#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctcdrive/rng.hpp"

namespace ctcdrive::data {

enum class Split : std::uint32_t { Labelled = 0, Unlabelled = 1, TestId = 2, TestOod = 3 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Labelled:
      return "labelled";
    case Split::Unlabelled:
      return "unlabelled";
    case Split::TestId:
      return "id";
    case Split::TestOod:
      return "ood";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "labelled") return Split::Labelled;
  if (s == "unlabelled") return Split::Unlabelled;
  if (s == "id") return Split::TestId;
  if (s == "ood") return Split::TestOod;
  throw std::invalid_argument("unknown split '" + s + "' (expected labelled, unlabelled, id or ood)");
}

struct LengthRange {
  int lo, hi;
  bool contains(int u) const { return u >= lo && u <= hi; }
  std::string label() const { return std::to_string(lo) + "-" + std::to_string(hi); }
};

/// Reference-length buckets used for reporting; the first is the labelled range.
inline const std::array<LengthRange, 5>& length_buckets() {
  static const std::array<LengthRange, 5> buckets{{{3, 8}, {9, 12}, {13, 18}, {19, 24}, {25, 30}}};
  return buckets;
}

inline std::uint32_t bucket_of(int u) {
  const auto& b = length_buckets();
  for (std::uint32_t i = 0; i < b.size(); ++i) {
    if (b[i].contains(u)) return i;
  }
  throw std::out_of_range("token length " + std::to_string(u) + " outside every bucket");
}

struct CorpusConfig {
  int content_vocab = 24;
  int viseme_classes = 8;
  int frame_dim = 16;
  int min_duration = 2;
  int max_duration = 4;
  double sigma_audio = 0.1;
  double sigma_visual = 0.3;
  double visual_residual = 0.15;
  int successors = 6;
  int labelled_size = 500;
  int unlabelled_size = 5000;
  int test_id_size = 500;
  int ood_per_bucket = 250;
  LengthRange labelled_len{3, 8};
  LengthRange unlabelled_len{3, 30};
  std::uint64_t seed = 1;

  int tokens_per_viseme() const { return content_vocab / viseme_classes; }
  int viseme_of(int token) const { return token / tokens_per_viseme(); }

  void validate() const {
    if (content_vocab <= 0 || viseme_classes <= 0 || content_vocab % viseme_classes != 0) {
      throw std::invalid_argument("corpus config: content_vocab must be a positive multiple of viseme_classes");
    }
    if (frame_dim <= 0 || min_duration < 1 || max_duration < min_duration) {
      throw std::invalid_argument("corpus config: bad frame_dim or duration bounds");
    }
    if (successors < 1 || successors > content_vocab) throw std::invalid_argument("corpus config: successors out of range");
    if (sigma_audio < 0 || sigma_visual < 0 || visual_residual < 0) {
      throw std::invalid_argument("corpus config: noise and residual scales must be non-negative");
    }
    if (labelled_len.lo < 1 || labelled_len.hi < labelled_len.lo || unlabelled_len.lo < 1 ||
        unlabelled_len.hi < unlabelled_len.lo) {
      throw std::invalid_argument("corpus config: bad length ranges");
    }
    if (labelled_len.hi >= length_buckets()[1].lo) {
      throw std::invalid_argument("corpus config: labelled lengths must stay below the shifted buckets");
    }
  }

  /// key=value echo, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_kv() const {
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    return {{"content_vocab", std::to_string(content_vocab)},
            {"viseme_classes", std::to_string(viseme_classes)},
            {"frame_dim", std::to_string(frame_dim)},
            {"min_duration", std::to_string(min_duration)},
            {"max_duration", std::to_string(max_duration)},
            {"sigma_audio", num(sigma_audio)},
            {"sigma_visual", num(sigma_visual)},
            {"visual_residual", num(visual_residual)},
            {"successors", std::to_string(successors)},
            {"labelled_size", std::to_string(labelled_size)},
            {"unlabelled_size", std::to_string(unlabelled_size)},
            {"test_id_size", std::to_string(test_id_size)},
            {"ood_per_bucket", std::to_string(ood_per_bucket)},
            {"labelled_min_len", std::to_string(labelled_len.lo)},
            {"labelled_max_len", std::to_string(labelled_len.hi)},
            {"unlabelled_min_len", std::to_string(unlabelled_len.lo)},
            {"unlabelled_max_len", std::to_string(unlabelled_len.hi)},
            {"data_seed", std::to_string(seed)}};
  }

  /// Sets one key from its text value; returns false for an unknown key.
  bool set(const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    if (key == "content_vocab") content_vocab = as_int();
    else if (key == "viseme_classes") viseme_classes = as_int();
    else if (key == "frame_dim") frame_dim = as_int();
    else if (key == "min_duration") min_duration = as_int();
    else if (key == "max_duration") max_duration = as_int();
    else if (key == "sigma_audio") sigma_audio = std::stod(value);
    else if (key == "sigma_visual") sigma_visual = std::stod(value);
    else if (key == "visual_residual") visual_residual = std::stod(value);
    else if (key == "successors") successors = as_int();
    else if (key == "labelled_size") labelled_size = as_int();
    else if (key == "unlabelled_size") unlabelled_size = as_int();
    else if (key == "test_id_size") test_id_size = as_int();
    else if (key == "ood_per_bucket") ood_per_bucket = as_int();
    else if (key == "labelled_min_len") labelled_len.lo = as_int();
    else if (key == "labelled_max_len") labelled_len.hi = as_int();
    else if (key == "unlabelled_min_len") unlabelled_len.lo = as_int();
    else if (key == "unlabelled_max_len") unlabelled_len.hi = as_int();
    else if (key == "data_seed") seed = std::stoull(value);
    else return false;
    return true;
  }
};

struct Sample {
  Split split = Split::Labelled;
  std::uint32_t bucket = 0;
  std::vector<int> tokens;
  std::vector<int> durations;  // frames per token
  std::vector<float> audio;    // [L x F]
  std::vector<float> visual;   // [L x F]

  int frames() const {
    int n = 0;
    for (int d : durations) n += d;
    return n;
  }
  int length() const { return static_cast<int>(tokens.size()); }

  /// Audio and visual features side by side, [L x 2F].
  std::vector<float> av(std::size_t frame_dim) const {
    const std::size_t L = audio.size() / frame_dim;
    std::vector<float> out(L * 2 * frame_dim);
    for (std::size_t t = 0; t < L; ++t) {
      std::copy_n(audio.begin() + t * frame_dim, frame_dim, out.begin() + t * 2 * frame_dim);
      std::copy_n(visual.begin() + t * frame_dim, frame_dim, out.begin() + t * 2 * frame_dim + frame_dim);
    }
    return out;
  }
};

/// Seed-derived generative structure shared by every sample.
struct Sources {
  std::vector<double> emission;            // [K x F], unit-norm rows
  std::vector<double> viseme;              // [classes x F], unit-norm rows
  std::vector<std::vector<int>> next;      // allowed successors per token
  std::vector<std::vector<double>> weight; // their transition probabilities

  static Sources derive(const CorpusConfig& cfg) {
    const Rng root(cfg.seed);
    Sources s;
    const auto F = static_cast<std::size_t>(cfg.frame_dim);
    auto unit_rows = [F](Rng rng, std::size_t rows) {
      std::vector<double> m(rows * F);
      for (std::size_t r = 0; r < rows; ++r) {
        double norm = 0;
        for (std::size_t j = 0; j < F; ++j) norm += (m[r * F + j] = rng.normal()) * m[r * F + j];
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < F; ++j) m[r * F + j] /= norm;
      }
      return m;
    };
    s.emission = unit_rows(root.derive(1), static_cast<std::size_t>(cfg.content_vocab));
    s.viseme = unit_rows(root.derive(2), static_cast<std::size_t>(cfg.viseme_classes));
    Rng chain = root.derive(3);
    for (int k = 0; k < cfg.content_vocab; ++k) {
      // partial Fisher-Yates picks the successor set
      std::vector<int> all(static_cast<std::size_t>(cfg.content_vocab));
      for (int i = 0; i < cfg.content_vocab; ++i) all[static_cast<std::size_t>(i)] = i;
      std::vector<int> succ;
      std::vector<double> w;
      double total = 0;
      for (int i = 0; i < cfg.successors; ++i) {
        const auto j = static_cast<std::size_t>(i) + chain.below(static_cast<std::uint64_t>(cfg.content_vocab - i));
        std::swap(all[static_cast<std::size_t>(i)], all[j]);
        succ.push_back(all[static_cast<std::size_t>(i)]);
        w.push_back(chain.uniform(0.5, 1.5));
        total += w.back();
      }
      for (auto& x : w) x /= total;
      s.next.push_back(std::move(succ));
      s.weight.push_back(std::move(w));
    }
    return s;
  }

  /// Noise-free audio frames for a token sequence.
  std::vector<float> clean_audio(const std::vector<int>& tokens, const std::vector<int>& durations,
                                 std::size_t F) const {
    std::vector<float> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      for (int r = 0; r < durations[i]; ++r) {
        for (std::size_t j = 0; j < F; ++j) out.push_back(static_cast<float>(emission[static_cast<std::size_t>(tokens[i]) * F + j]));
      }
    }
    return out;
  }
};

/// Draws a Markov token sequence of length U.
inline std::vector<int> sample_tokens(const Sources& src, const CorpusConfig& cfg, int U, Rng& rng) {
  std::vector<int> tokens;
  tokens.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.content_vocab))));
  while (static_cast<int>(tokens.size()) < U) {
    const auto& succ = src.next[static_cast<std::size_t>(tokens.back())];
    const auto& w = src.weight[static_cast<std::size_t>(tokens.back())];
    double u = rng.uniform();
    std::size_t pick = 0;
    while (pick + 1 < succ.size() && u >= w[pick]) u -= w[pick++];
    tokens.push_back(succ[pick]);
  }
  return tokens;
}

/// Per-token durations, then audio E[tok] + N(0, sigma_a^2) and visual
/// V[viseme(tok)] + beta * E[tok] + N(0, sigma_v^2) for every frame.
inline void render_views(Sample& s, const Sources& src, const CorpusConfig& cfg, Rng& rng) {
  const auto F = static_cast<std::size_t>(cfg.frame_dim);
  s.durations.clear();
  for (std::size_t i = 0; i < s.tokens.size(); ++i) s.durations.push_back(rng.range(cfg.min_duration, cfg.max_duration));
  s.audio.clear();
  s.visual.clear();
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    const auto tok = static_cast<std::size_t>(s.tokens[i]);
    const auto vis = static_cast<std::size_t>(cfg.viseme_of(s.tokens[i]));
    for (int r = 0; r < s.durations[i]; ++r) {
      for (std::size_t j = 0; j < F; ++j) {
        s.audio.push_back(static_cast<float>(src.emission[tok * F + j] + cfg.sigma_audio * rng.normal()));
      }
      for (std::size_t j = 0; j < F; ++j) {
        s.visual.push_back(static_cast<float>(src.viseme[vis * F + j] + cfg.visual_residual * src.emission[tok * F + j] +
                                              cfg.sigma_visual * rng.normal()));
      }
    }
  }
}

struct Corpus {
  CorpusConfig config;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(Split s) const {
    std::vector<const Sample*> out;
    for (const auto& x : samples) {
      if (x.split == s) out.push_back(&x);
    }
    return out;
  }
};

/// Generates every split. Sample i of a split draws from its own stream;
/// a sequence already used anywhere in the corpus is redrawn from the same
/// stream, so splits are disjoint and the result depends only on the config.
inline Corpus gen_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  const Sources src = Sources::derive(cfg);
  const Rng root(cfg.seed);
  Corpus corpus{cfg, {}};
  std::set<std::vector<int>> used;

  auto emit = [&](Split split, std::uint64_t index, LengthRange range) {
    Rng rng = root.derive((static_cast<std::uint64_t>(split) + 16) << 32 | index);
    Sample s;
    s.split = split;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) throw std::runtime_error("gen_corpus: cannot draw a fresh sequence; the length range is exhausted");
      const int U = rng.range(range.lo, range.hi);
      s.tokens = sample_tokens(src, cfg, U, rng);
      if (used.insert(s.tokens).second) break;
    }
    s.bucket = bucket_of(s.length());
    render_views(s, src, cfg, rng);
    corpus.samples.push_back(std::move(s));
  };

  // test splits first, so their sequences are never displaced by the large unlabelled pool
  for (int i = 0; i < cfg.test_id_size; ++i) emit(Split::TestId, static_cast<std::uint64_t>(i), cfg.labelled_len);
  std::uint64_t ood_index = 0;
  for (std::size_t b = 1; b < length_buckets().size(); ++b) {
    for (int i = 0; i < cfg.ood_per_bucket; ++i) emit(Split::TestOod, ood_index++, length_buckets()[b]);
  }
  for (int i = 0; i < cfg.labelled_size; ++i) emit(Split::Labelled, static_cast<std::uint64_t>(i), cfg.labelled_len);
  for (int i = 0; i < cfg.unlabelled_size; ++i) emit(Split::Unlabelled, static_cast<std::uint64_t>(i), cfg.unlabelled_len);
  return corpus;
}

/// Sample with its audio noise scaled by `multiplier` around the clean
/// rendering; visual frames are untouched.
inline Sample noise_sweep_view(const Sample& s, const Sources& src, const CorpusConfig& cfg, double multiplier) {
  if (multiplier < 0) throw std::invalid_argument("noise multiplier must be non-negative");
  Sample out = s;
  const auto clean = src.clean_audio(s.tokens, s.durations, static_cast<std::size_t>(cfg.frame_dim));
  for (std::size_t i = 0; i < out.audio.size(); ++i) {
    out.audio[i] = static_cast<float>(clean[i] + multiplier * (static_cast<double>(s.audio[i]) - clean[i]));
  }
  return out;
}

}  // namespace ctcdrive::data
