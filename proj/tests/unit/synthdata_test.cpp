#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "ctcdrive/synthdata/synthdata.hpp"

namespace {

using namespace ctcdrive::data;

CorpusConfig small_config() {
  CorpusConfig cfg;
  cfg.labelled_size = 60;
  cfg.unlabelled_size = 200;
  cfg.test_id_size = 40;
  cfg.ood_per_bucket = 25;
  cfg.seed = 7;
  return cfg;
}

// Removed on scope exit.
struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path((std::filesystem::temp_directory_path() / ("ctcdrive_" + name)).string()) {}
  ~TempFile() { std::filesystem::remove(path); }
  operator const std::string&() const { return path; }
};

TempFile temp_path(const std::string& name) { return TempFile(name); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(GenCorpus, SameSeedGivesByteIdenticalFiles) {
  const auto a = temp_path("corpus_a.bin"), b = temp_path("corpus_b.bin");
  save_corpus(gen_corpus(small_config()), a);
  save_corpus(gen_corpus(small_config()), b);
  const auto bytes = slurp(a);
  EXPECT_FALSE(bytes.empty());
  EXPECT_EQ(bytes, slurp(b));
  auto other = small_config();
  other.seed = 8;
  save_corpus(gen_corpus(other), b);
  EXPECT_NE(bytes, slurp(b));
}

TEST(GenCorpus, DefaultSplitsHaveConfiguredSizesAndLengths) {
  const auto corpus = gen_corpus(CorpusConfig{});
  EXPECT_EQ(corpus.split(Split::Labelled).size(), 500u);
  EXPECT_EQ(corpus.split(Split::Unlabelled).size(), 5000u);
  EXPECT_EQ(corpus.split(Split::TestId).size(), 500u);
  EXPECT_EQ(corpus.split(Split::TestOod).size(), 1000u);
  int labelled_max = 0;
  for (const auto* s : corpus.split(Split::Labelled)) labelled_max = std::max(labelled_max, s->length());
  EXPECT_EQ(labelled_max, 8);
  for (const auto* s : corpus.split(Split::TestId)) {
    EXPECT_GE(s->length(), 3);
    EXPECT_LE(s->length(), 8);
    EXPECT_EQ(s->bucket, 0u);
  }
  std::array<int, 5> per_bucket{};
  for (const auto* s : corpus.split(Split::TestOod)) {
    ASSERT_GE(s->bucket, 1u);
    EXPECT_TRUE(length_buckets()[s->bucket].contains(s->length()));
    ++per_bucket[s->bucket];
  }
  EXPECT_EQ(per_bucket[0], 0);
  for (int b = 1; b < 5; ++b) EXPECT_EQ(per_bucket[static_cast<std::size_t>(b)], 250);
}

TEST(GenCorpus, SplitsShareNoReferenceSequence) {
  const auto corpus = gen_corpus(CorpusConfig{});
  std::set<std::vector<int>> seen;
  for (const auto& s : corpus.samples) EXPECT_TRUE(seen.insert(s.tokens).second);
}

TEST(GenCorpus, FramesAndDurationsRespectBounds) {
  const auto corpus = gen_corpus(small_config());
  const auto F = static_cast<std::size_t>(corpus.config.frame_dim);
  for (const auto& s : corpus.samples) {
    ASSERT_EQ(s.durations.size(), s.tokens.size());
    for (int d : s.durations) {
      EXPECT_GE(d, 2);
      EXPECT_LE(d, 4);
    }
    EXPECT_GE(s.frames(), 2 * s.length());
    EXPECT_LE(s.frames(), 4 * s.length());
    EXPECT_EQ(s.audio.size(), static_cast<std::size_t>(s.frames()) * F);
    EXPECT_EQ(s.visual.size(), s.audio.size());
    const auto av = s.av(F);
    for (int t = 0; t < s.frames(); ++t) {
      for (std::size_t j = 0; j < F; ++j) {
        const auto tt = static_cast<std::size_t>(t);
        EXPECT_EQ(av[tt * 2 * F + j], s.audio[tt * F + j]);
        EXPECT_EQ(av[tt * 2 * F + F + j], s.visual[tt * F + j]);
      }
    }
  }
}

TEST(GenCorpus, TokensFollowTheMarkovChain) {
  const auto cfg = small_config();
  const auto src = Sources::derive(cfg);
  for (const auto& succ : src.next) {
    EXPECT_EQ(std::set<int>(succ.begin(), succ.end()).size(), 6u);
  }
  for (const auto& s : gen_corpus(cfg).samples) {
    for (std::size_t i = 1; i < s.tokens.size(); ++i) {
      const auto& succ = src.next[static_cast<std::size_t>(s.tokens[i - 1])];
      EXPECT_NE(std::find(succ.begin(), succ.end(), s.tokens[i]), succ.end());
    }
  }
}

TEST(GenCorpus, EmissionRowsAreUnitNorm) {
  const auto src = Sources::derive(small_config());
  for (std::size_t k = 0; k < 24; ++k) {
    double n = 0;
    for (std::size_t j = 0; j < 16; ++j) n += src.emission[k * 16 + j] * src.emission[k * 16 + j];
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(RenderViews, NoiselessAudioRepeatsEmissionRows) {
  auto cfg = small_config();
  cfg.sigma_audio = 0;
  const auto src = Sources::derive(cfg);
  const auto corpus = gen_corpus(cfg);
  for (const auto* s : corpus.split(Split::Labelled)) {
    std::size_t t = 0;
    for (std::size_t i = 0; i < s->tokens.size(); ++i) {
      for (int r = 0; r < s->durations[i]; ++r, ++t) {
        for (std::size_t j = 0; j < 16; ++j) {
          EXPECT_EQ(s->audio[t * 16 + j], static_cast<float>(src.emission[static_cast<std::size_t>(s->tokens[i]) * 16 + j]));
        }
      }
    }
  }
}

TEST(RenderViews, SameVisemeTokensLookIdenticalWithoutResidual) {
  auto cfg = small_config();
  cfg.sigma_visual = 0;
  cfg.visual_residual = 0;
  const auto src = Sources::derive(cfg);
  Sample a, b;
  a.tokens = {0, 3};
  b.tokens = {1, 5};  // viseme classes 0 and 1, same as a
  ctcdrive::Rng r1(4), r2(4);  // same stream, so same durations
  render_views(a, src, cfg, r1);
  render_views(b, src, cfg, r2);
  EXPECT_EQ(a.visual, b.visual);
  EXPECT_NE(a.audio, b.audio);
}

TEST(RenderViews, NoiselessViewsAreLinearImagesOfTheToken) {
  auto cfg = small_config();
  cfg.sigma_audio = cfg.sigma_visual = 0;
  cfg.visual_residual = 1;
  const auto src = Sources::derive(cfg);
  Sample s;
  s.tokens = {4, 10, 23};
  ctcdrive::Rng rng(11);
  render_views(s, src, cfg, rng);
  std::size_t t = 0;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    const auto k = static_cast<std::size_t>(s.tokens[i]), g = static_cast<std::size_t>(cfg.viseme_of(s.tokens[i]));
    for (int r = 0; r < s.durations[i]; ++r, ++t) {
      for (std::size_t j = 0; j < 16; ++j) {
        EXPECT_EQ(s.audio[t * 16 + j], static_cast<float>(src.emission[k * 16 + j]));
        EXPECT_EQ(s.visual[t * 16 + j], static_cast<float>(src.viseme[g * 16 + j] + src.emission[k * 16 + j]));
      }
    }
  }
}

TEST(NoiseSweep, MultipliersScaleOnlyAudioNoise) {
  const auto cfg = small_config();
  const auto src = Sources::derive(cfg);
  const auto corpus = gen_corpus(cfg);
  const Sample& s = corpus.samples.front();
  const auto same = noise_sweep_view(s, src, cfg, 1.0);
  EXPECT_EQ(same.audio, s.audio);
  EXPECT_EQ(same.visual, s.visual);
  const auto clean = noise_sweep_view(s, src, cfg, 0.0);
  EXPECT_EQ(clean.audio, src.clean_audio(s.tokens, s.durations, 16) );
  const auto loud = noise_sweep_view(s, src, cfg, 4.0);
  EXPECT_EQ(loud.visual, s.visual);
  double base = 0, scaled = 0;
  for (std::size_t i = 0; i < s.audio.size(); ++i) {
    base += std::abs(s.audio[i] - clean.audio[i]);
    scaled += std::abs(loud.audio[i] - clean.audio[i]);
  }
  EXPECT_NEAR(scaled / base, 4.0, 1e-4);
  EXPECT_THROW(noise_sweep_view(s, src, cfg, -1.0), std::invalid_argument);
}

TEST(CorpusFile, RoundTripPreservesEverything) {
  const auto corpus = gen_corpus(small_config());
  const auto path = temp_path("corpus_rt.bin");
  save_corpus(corpus, path);
  const auto back = load_corpus(path);
  EXPECT_EQ(back.config.to_kv(), corpus.config.to_kv());
  ASSERT_EQ(back.samples.size(), corpus.samples.size());
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto &x = corpus.samples[i], &y = back.samples[i];
    EXPECT_EQ(x.split, y.split);
    EXPECT_EQ(x.bucket, y.bucket);
    EXPECT_EQ(x.tokens, y.tokens);
    EXPECT_EQ(x.durations, y.durations);
    EXPECT_EQ(x.audio, y.audio);
    EXPECT_EQ(x.visual, y.visual);
  }
}

TEST(CorpusFile, RejectsDamagedFiles) {
  const auto path = temp_path("corpus_bad.bin");
  save_corpus(gen_corpus(small_config()), path);
  auto bytes = slurp(path);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  EXPECT_THROW(load_corpus(path), CorpusError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACORP" << bytes.substr(8);
  }
  EXPECT_THROW(load_corpus(path), CorpusError);
  {
    std::ofstream out(path, std::ios::binary);
    out << bytes << 'x';
  }
  EXPECT_THROW(load_corpus(path), CorpusError);
  EXPECT_THROW(load_corpus(temp_path("does_not_exist.bin")), CorpusError);
}

TEST(StackFrames, PadsAndSelectsView) {
  const auto corpus = gen_corpus(small_config());
  std::vector<const Sample*> two{&corpus.samples[0], &corpus.samples[1]};
  const auto batch = stack_frames<double>(two, ctcdrive::model::Modality::AV, 16);
  const std::size_t L = static_cast<std::size_t>(std::max(two[0]->frames(), two[1]->frames()));
  EXPECT_EQ(batch.frames.shape(), (ctcdrive::grad::Shape{2, L, 32}));
  EXPECT_EQ(batch.lengths[0], two[0]->frames());
  const auto v = batch.frames.values();
  EXPECT_EQ(v[16], static_cast<double>(two[0]->visual[0]));
  const auto* shorter = two[0]->frames() < two[1]->frames() ? two[0] : two[1];
  const std::size_t row = shorter == two[0] ? 0 : 1;
  for (std::size_t t = static_cast<std::size_t>(shorter->frames()); t < L; ++t)
    for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(v[(row * L + t) * 32 + j], 0.0);
}

}  // namespace
