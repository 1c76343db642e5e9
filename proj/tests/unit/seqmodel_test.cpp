#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "ctcdrive/rng.hpp"
#include "ctcdrive/seqmodel/seqmodel.hpp"

namespace cm = ctcdrive::model;
using cm::Modality;
using cm::Tape;
using cm::Tensor;

namespace {

Tensor<double> random_frames(ctcdrive::Rng& rng, std::size_t B, std::size_t L, std::size_t F) {
  std::vector<double> v(B * L * F);
  for (auto& x : v) x = rng.normal();
  return Tensor<double>::constant({B, L, F}, std::move(v));
}

struct Fixture {
  cm::ModelConfig config;
  cm::ModelParams<double> params;
  cm::Model<double> model;
  explicit Fixture(std::uint64_t seed = 1)
      : params(cm::init_params<double>(config, seed)), model(config, &params) {}
};

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Encode, ShapeContract) {
  Fixture f;
  ctcdrive::Rng rng(2);
  Tape<double> tape(false);
  auto enc = f.model.encode(tape, random_frames(rng, 2, 10, 16), {10, 7}, Modality::A);
  EXPECT_EQ(enc.hidden.shape(), (cm::Shape{2, 10, 64}));
  for (std::size_t t = 7; t < 10; ++t)
    for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(enc.hidden.values()[(10 + t) * 64 + j], 0.0);
}

TEST(Encode, RejectsWrongFeatureWidthAndLength) {
  Fixture f;
  ctcdrive::Rng rng(2);
  Tape<double> tape(false);
  EXPECT_THROW(f.model.encode(tape, random_frames(rng, 1, 10, 16), {10}, Modality::AV), ctcdrive::grad::DimensionError);
  EXPECT_THROW(f.model.encode(tape, random_frames(rng, 1, 10, 32), {10}, Modality::V), ctcdrive::grad::DimensionError);
  EXPECT_THROW(f.model.encode(tape, random_frames(rng, 1, 141, 16), {141}, Modality::A), ctcdrive::grad::DimensionError);
  EXPECT_THROW(f.model.encode(tape, random_frames(rng, 1, 10, 16), {11}, Modality::A), ctcdrive::grad::DimensionError);
}

TEST(Encode, PaddingInvariance) {
  Fixture f;
  ctcdrive::Rng rng(3);
  for (Modality m : {Modality::A, Modality::V, Modality::AV}) {
    const std::size_t F = f.config.input_dim(m);
    auto base = random_frames(rng, 1, 10, F);
    std::vector<double> padded(12 * F, 0.0);
    std::copy(base.values().begin(), base.values().end(), padded.begin());
    for (std::size_t i = 10 * F; i < 12 * F; ++i) padded[i] = rng.normal();
    Tape<double> tape(false);
    auto a = f.model.encode(tape, base, {10}, m);
    auto b = f.model.encode(tape, Tensor<double>::constant({1, 12, F}, padded), {10}, m);
    EXPECT_LE(max_abs_diff(a.hidden.values(), b.hidden.values().first(10 * 64)), 1e-5);
  }
}

TEST(CtcHead, NormalisedFrameDistributions) {
  Fixture f;
  ctcdrive::Rng rng(4);
  Tape<double> tape(false);
  auto enc = f.model.encode(tape, random_frames(rng, 2, 10, 16), {10, 10}, Modality::A);
  auto lat = f.model.ctc_head(tape, enc);
  EXPECT_EQ(lat.log_probs.shape(), (cm::Shape{2, 10, 25}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 10; ++t) {
      double z = 0;
      for (double lp : lat.row(b, t)) z += std::exp(lp);
      EXPECT_NEAR(z, 1.0, 1e-6);
    }
}

TEST(DecodeForced, SosOnlyGivesOneDistribution) {
  Fixture f;
  ctcdrive::Rng rng(5);
  Tape<double> tape(false);
  auto enc = f.model.encode(tape, random_frames(rng, 1, 8, 16), {8}, Modality::A);
  const std::vector<int> tokens{f.config.sos()};
  auto out = f.model.decode_forced(tape, enc, tokens, {1});
  EXPECT_EQ(out.log_probs.shape(), (cm::Shape{1, 1, 25}));
}

TEST(DecodeForced, RejectsBadTokensAndLengths) {
  Fixture f;
  ctcdrive::Rng rng(5);
  Tape<double> tape(false);
  auto enc = f.model.encode(tape, random_frames(rng, 1, 8, 16), {8}, Modality::A);
  const std::vector<int> bad{24, 25};
  EXPECT_THROW(f.model.decode_forced(tape, enc, bad, {2}), std::out_of_range);
  const std::vector<int> too_long(35, 0);
  EXPECT_THROW(f.model.decode_forced(tape, enc, too_long, {35}), ctcdrive::grad::DimensionError);
}

TEST(DecodeForced, CountsOnePassPerCall) {
  Fixture f;
  ctcdrive::Rng rng(6);
  Tape<double> tape(false);
  auto enc = f.model.encode(tape, random_frames(rng, 2, 8, 16), {8, 6}, Modality::A);
  const std::vector<int> tokens{24, 1, 2, 3, 24, 5, 6, 0};
  const auto before = cm::decoder_pass_counter().load();
  f.model.decode_forced(tape, enc, tokens, {4, 3});
  EXPECT_EQ(cm::decoder_pass_counter().load() - before, 1u);
}

TEST(DecodeForced, PerturbationLeavesEarlierPositionsBitwiseUnchanged) {
  Fixture f;
  ctcdrive::Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t U = rng.range(2, 12);
    Tape<double> tape(false);
    auto enc = f.model.encode(tape, random_frames(rng, 1, 15, 16), {15}, Modality::V);
    std::vector<int> tokens(U);
    tokens[0] = f.config.sos();
    for (std::size_t i = 1; i < U; ++i) tokens[i] = rng.range(0, 23);
    auto base = f.model.decode_forced(tape, enc, tokens, {static_cast<int>(U)});
    const std::size_t u = rng.range(1, static_cast<int>(U) - 1);
    tokens[u] = (tokens[u] + 1 + rng.range(0, 22)) % 24;
    auto moved = f.model.decode_forced(tape, enc, tokens, {static_cast<int>(U)});
    for (std::size_t i = 0; i < u * 25; ++i) ASSERT_EQ(base.log_probs.values()[i], moved.log_probs.values()[i]);
    EXPECT_GT(max_abs_diff(base.log_probs.values().subspan(u * 25), moved.log_probs.values().subspan(u * 25)), 0.0);
  }
}

TEST(DecodeForced, ParallelEqualsSequentialRecomputation) {
  Fixture f;
  ctcdrive::Rng rng(8);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t U = rng.range(1, 10), L = rng.range(4, 30);
    Tape<double> tape(false);
    auto enc = f.model.encode(tape, random_frames(rng, 1, L, 32), {static_cast<int>(L)}, Modality::AV);
    std::vector<int> tokens(U);
    tokens[0] = f.config.sos();
    for (std::size_t i = 1; i < U; ++i) tokens[i] = rng.range(0, 23);
    auto full = f.model.decode_forced(tape, enc, tokens, {static_cast<int>(U)});
    for (std::size_t u = 0; u < U; ++u) {
      std::span<const int> prefix(tokens.data(), u + 1);
      auto step = f.model.decode_forced(tape, enc, prefix, {static_cast<int>(u + 1)});
      worst = std::max(worst, max_abs_diff(full.row(0, u), step.row(0, u)));
    }
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(DecodeForced, PaddedBatchMatchesSingleSamples) {
  Fixture f;
  ctcdrive::Rng rng(9);
  auto frames = random_frames(rng, 2, 12, 16);
  Tape<double> tape(false);
  auto enc = f.model.encode(tape, frames, {12, 9}, Modality::A);
  const std::vector<int> tokens{24, 3, 4, 5, 24, 7, 0, 0};
  auto batch = f.model.decode_forced(tape, enc, tokens, {4, 2});
  std::vector<double> second(frames.values().begin() + 12 * 16, frames.values().begin() + 12 * 16 + 9 * 16);
  auto enc1 = f.model.encode(tape, Tensor<double>::constant({1, 9, 16}, second), {9}, Modality::A);
  const std::vector<int> tok1{24, 7};
  auto single = f.model.decode_forced(tape, enc1, tok1, {2});
  for (std::size_t u = 0; u < 2; ++u) EXPECT_LE(max_abs_diff(batch.row(1, u), single.row(0, u)), 1e-5);
}

TEST(InitParams, DeterministicPerSeed) {
  cm::ModelConfig config;
  auto a = cm::init_params<float>(config, 42);
  auto b = cm::init_params<float>(config, 42);
  auto c = cm::init_params<float>(config, 43);
  auto ta = a.tensors(), tb = b.tensors(), tc = c.tensors();
  bool any_diff = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    for (std::size_t j = 0; j < ta[i]->size(); ++j) {
      ASSERT_EQ(ta[i]->values()[j], tb[i]->values()[j]);
      any_diff |= ta[i]->values()[j] != tc[i]->values()[j];
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(InitParams, WeightsWithinFanInBound) {
  cm::ModelConfig config;
  auto p = cm::init_params<double>(config, 1);
  for (double v : p.proj_av.weight.values()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(32.0));
  for (double v : p.encoder[0].ffn.down.weight.values()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(128.0));
  for (double v : p.decoder_norm.gain.values()) EXPECT_EQ(v, 1.0);
}

TEST(InitParams, DefaultParameterCountIsFrozen) {
  cm::ModelConfig config;
  EXPECT_EQ(cm::init_params<float>(config, 0).count(), 176818u);
}

TEST(ModelParams, OnlyInputProjectionsAreModalitySpecific) {
  cm::ModelConfig config;
  auto names = cm::init_params<float>(config, 0).names();
  std::set<std::string> unique(names.begin(), names.end());
  EXPECT_EQ(unique.size(), names.size());
  std::set<std::string> specific;
  for (const auto& n : names) {
    if (n.find("_a.") != std::string::npos || n.find("_v.") != std::string::npos ||
        n.find("_av.") != std::string::npos) {
      specific.insert(n);
    }
  }
  EXPECT_EQ(specific, (std::set<std::string>{"proj_a.weight", "proj_a.bias", "proj_v.weight", "proj_v.bias",
                                             "proj_av.weight", "proj_av.bias"}));
}

TEST(Checkpoint, RoundTripsAndRejectsCorruption) {
  cm::ModelConfig config;
  auto p = cm::init_params<float>(config, 9);
  const auto path = (std::filesystem::temp_directory_path() / "ctcdrive_ckpt_test.bin").string();
  cm::save_checkpoint(p, path);
  auto q = cm::load_checkpoint<float>(path, config);
  auto tp = p.tensors(), tq = q.tensors();
  for (std::size_t i = 0; i < tp.size(); ++i)
    for (std::size_t j = 0; j < tp[i]->size(); ++j) ASSERT_EQ(tp[i]->values()[j], tq[i]->values()[j]);

  cm::ModelConfig other = config;
  other.ffn_dim = 64;
  EXPECT_THROW(cm::load_checkpoint<float>(path, other), cm::CheckpointError);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(cm::load_checkpoint<float>(path, config), cm::CheckpointError);
  std::filesystem::remove(path);
  EXPECT_THROW(cm::load_checkpoint<float>(path, config), cm::CheckpointError);
}
