#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "beam_oracle.hpp"
#include "ctcdrive/declib/declib.hpp"
#include "tiny_model.hpp"

namespace cd = ctcdrive::dec;
namespace cm = ctcdrive::model;
namespace ct = ctcdrive::testing;
using ctcdrive::Rng;

namespace {

// A fixed step function: distributions depend only on the prefix.
std::vector<double> log_dist(std::vector<double> p) {
  for (auto& x : p) x = std::log(x);
  return p;
}

struct TinyCase {
  cm::ModelConfig config = ct::tiny_config();
  cm::ModelParams<double> params;
  cm::Model<double> model;
  cm::EncodedBatch<double> enc;
  cm::Lattice<double> lattice;

  TinyCase(std::uint64_t seed, std::size_t B, std::size_t L)
      : params(ct::tiny_params(config, seed)), model(config, &params) {
    Rng rng(seed * 7 + 1);
    cm::Tape<double> tape(false);
    std::vector<int> lengths(B);
    for (auto& len : lengths) len = rng.range(static_cast<int>(L) / 2 + 1, static_cast<int>(L));
    lengths[0] = static_cast<int>(L);
    enc = model.encode(tape, ct::random_frames(rng, B, L, 2 * config.frame_dim), lengths, cm::Modality::AV);
    lattice = model.ctc_head(tape, enc);
  }
};

// -log of the summed probability of paths whose collapse starts with `prefix`.
double brute_force_prefix(const std::vector<double>& lp, std::size_t L, std::size_t V, int blank,
                          const std::vector<int>& prefix) {
  std::size_t n = 1;
  for (std::size_t t = 0; t < L; ++t) n *= V;
  double total = 0;
  std::vector<int> path(L);
  for (std::size_t code = 0; code < n; ++code) {
    std::size_t c = code;
    double logp = 0;
    for (std::size_t t = 0; t < L; ++t) {
      path[t] = static_cast<int>(c % V);
      c /= V;
      logp += lp[t * V + static_cast<std::size_t>(path[t])];
    }
    const auto y = ctcdrive::ctc::collapse(path, blank);
    if (y.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), y.begin())) total += std::exp(logp);
  }
  return std::log(total);
}

std::vector<double> random_lattice(Rng& rng, std::size_t L, std::size_t V) {
  std::vector<double> lp(L * V);
  for (std::size_t t = 0; t < L; ++t) {
    double z = 0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(lp[t * V + k] = 1.5 * rng.normal());
    for (std::size_t k = 0; k < V; ++k) lp[t * V + k] -= std::log(z);
  }
  return lp;
}

}  // namespace

TEST(ArGreedy, ImmediateEosGivesEmptySequence) {
  auto step = [](const std::vector<std::size_t>& rows, const std::vector<std::vector<int>>&) {
    return std::vector<std::vector<double>>(rows.size(), log_dist({0.1, 0.1, 0.8}));
  };
  auto out = cd::ar_greedy(step, 1, 2, {});
  EXPECT_TRUE(out[0].tokens.empty());
  EXPECT_TRUE(out[0].ended);
  EXPECT_EQ(out[0].passes, 1u);
}

TEST(ArGreedy, HandBuiltTwoStepDistribution) {
  // five content tokens, eos = 5; step 1 prefers t3 with p 0.9, then eos given t3
  auto step = [](const std::vector<std::size_t>& rows, const std::vector<std::vector<int>>& prefixes) {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) {
      if (p.empty()) out.push_back(log_dist({0.02, 0.02, 0.02, 0.9, 0.02, 0.02}));
      else out.push_back(log_dist({0.05, 0.05, 0.05, 0.05, 0.05, 0.75}));
    }
    EXPECT_EQ(out.size(), rows.size());
    return out;
  };
  auto out = cd::ar_greedy(step, 1, 5, {});
  EXPECT_EQ(out[0].tokens, (std::vector<int>{3}));
  ASSERT_EQ(out[0].confidences.size(), 1u);
  EXPECT_NEAR(out[0].confidences[0], 0.9, 1e-12);
  EXPECT_NEAR(out[0].end_confidence, 0.75, 1e-12);
  EXPECT_EQ(out[0].passes, 2u);
}

TEST(ArGreedy, MinLengthSuppressesEosAndMaxLengthCuts) {
  auto step = [](const std::vector<std::size_t>& rows, const std::vector<std::vector<int>>&) {
    return std::vector<std::vector<double>>(rows.size(), log_dist({0.3, 0.1, 0.6}));
  };
  auto out = cd::ar_greedy(step, 2, 2, {.max_len = 5, .min_len = 3});
  EXPECT_EQ(out[1].tokens, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(out[1].passes, 4u);
  auto cut = cd::ar_greedy(step, 1, 2, {.max_len = 2, .min_len = 9});
  EXPECT_EQ(cut[0].tokens.size(), 2u);
  EXPECT_FALSE(cut[0].ended);
  EXPECT_EQ(cut[0].passes, 2u);
}

TEST(ArGreedy, ModelDecodingIsDeterministicAndCountsPasses) {
  TinyCase tc(3, 4, 10);
  const cd::ArGreedyOptions opt{.max_len = 6};
  const auto before = cm::decoder_pass_counter().load();
  auto a = cd::ar_greedy(tc.model, tc.enc, opt);
  const auto calls = cm::decoder_pass_counter().load() - before;
  auto b = cd::ar_greedy(tc.model, tc.enc, opt);
  std::size_t longest = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].confidences, b[i].confidences);
    EXPECT_EQ(a[i].passes, a[i].ended ? a[i].tokens.size() + 1 : opt.max_len);
    longest = std::max(longest, a[i].passes);
  }
  EXPECT_EQ(calls, longest);
}

TEST(CtcDrivenForcing, OutputLengthEqualsPrefixLength) {
  TinyCase tc(4, 3, 12);
  const std::vector<std::vector<int>> prefixes{{0, 1, 2, 3, 0, 1, 2}, {2}, {3, 3, 1}};
  const auto before = cm::decoder_pass_counter().load();
  auto out = cd::ctc_driven_forcing(tc.model, tc.enc, prefixes);
  EXPECT_EQ(cm::decoder_pass_counter().load() - before, 1u);
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_FALSE(out.skipped[b]);
    EXPECT_EQ(out.labels[b].tokens.size(), prefixes[b].size());
    EXPECT_EQ(out.labels[b].confidences.size(), prefixes[b].size());
    EXPECT_EQ(out.labels[b].passes, 1u);
  }
}

TEST(CtcDrivenForcing, SkipsEmptyAndOverlongPrefixes) {
  TinyCase tc(5, 3, 12);
  const std::vector<std::vector<int>> prefixes{{}, {1, 2, 3, 0, 1, 2, 3, 0}, {1, 2}};
  auto out = cd::ctc_driven_forcing(tc.model, tc.enc, prefixes);
  EXPECT_TRUE(out.skipped[0]);
  EXPECT_TRUE(out.skipped[1]);  // sos + 8 tokens exceed max_tokens 8
  EXPECT_FALSE(out.skipped[2]);
  EXPECT_EQ(out.labels[2].tokens.size(), 2u);
}

TEST(CtcDrivenForcing, LaterPrefixTokensDoNotAffectEarlierOutputs) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    TinyCase tc(100 + trial, 1, 10);
    std::vector<int> prefix(rng.range(2, 6));
    for (auto& t : prefix) t = rng.range(0, 3);
    auto base = cd::ctc_driven_forcing(tc.model, tc.enc, {prefix});
    const std::size_t u = rng.range(1, static_cast<int>(prefix.size()) - 1);
    auto moved_prefix = prefix;
    for (std::size_t i = u; i < prefix.size(); ++i) moved_prefix[i] = (prefix[i] + 1) % 4;
    auto moved = cd::ctc_driven_forcing(tc.model, tc.enc, {moved_prefix});
    // output u conditions on prefix[0..u-1] only
    for (std::size_t i = 0; i <= u; ++i) {
      EXPECT_EQ(base.labels[0].tokens[i], moved.labels[0].tokens[i]);
      EXPECT_EQ(base.labels[0].confidences[i], moved.labels[0].confidences[i]);
    }
  }
}

TEST(CtcPrefixScore, OneHotLatticeSpellingPrefix) {
  // vocab {a=0, b=1, blank=2}; frames a, b
  std::vector<double> lp{0, -INFINITY, -INFINITY, -INFINITY, 0, -INFINITY};
  const std::vector<int> a{0};
  EXPECT_NEAR(cd::ctc_prefix_score<double>(lp, 2, 3, 2, a, 1), 0.0, 1e-12);
  cd::CtcPrefixScorer scorer(std::span<const double>(lp), 2, 3, 2);
  auto s = scorer.extend(scorer.extend(scorer.initial(), 0), 1);
  EXPECT_NEAR(scorer.final_score(s), 0.0, 1e-12);
}

TEST(CtcPrefixScore, ImpossibleSymbolIsMinusInfinity) {
  std::vector<double> lp{std::log(0.5), -INFINITY, std::log(0.5), std::log(0.5), -INFINITY, std::log(0.5)};
  EXPECT_EQ(cd::ctc_prefix_score<double>(lp, 2, 3, 2, std::vector<int>{}, 1), -INFINITY);
}

TEST(CtcPrefixScore, MatchesPathEnumeration) {
  Rng rng(7);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t L = rng.range(1, 6), V = rng.range(3, 4);
    const int blank = static_cast<int>(V) - 1;
    const auto lp = random_lattice(rng, L, V);
    std::vector<int> prefix(rng.range(0, 3));
    for (auto& t : prefix) t = rng.range(0, blank - 1);
    const int next = rng.range(0, blank - 1);
    auto full = prefix;
    full.push_back(next);
    const double oracle = brute_force_prefix(lp, L, V, blank, full);
    const double fast = cd::ctc_prefix_score<double>(lp, L, V, blank, prefix, next);
    if (std::isinf(oracle)) {
      EXPECT_TRUE(std::isinf(fast) && fast < 0);
    } else {
      worst = std::max(worst, std::abs(oracle - fast));
    }
    // full-sequence score agrees with the CTC marginal
    cd::CtcPrefixScorer scorer(std::span<const double>(lp), L, V, blank);
    auto s = scorer.initial();
    for (int c : full) s = scorer.extend(s, c);
    const double marginal = -ctcdrive::ctc::brute_force_ctc(lp, L, V, blank, full);
    if (!std::isinf(marginal)) worst = std::max(worst, std::abs(marginal - scorer.final_score(s)));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(JointBeam, BeamOneWithoutCtcEqualsArGreedy) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TinyCase tc(seed, 3, 9);
    auto greedy = cd::ar_greedy(tc.model, tc.enc, {.max_len = 6});
    for (std::size_t b = 0; b < 3; ++b) {
      auto hyp = cd::joint_beam_search(tc.model, tc.enc, tc.lattice, b, {.beam = 1, .alpha = 0.0, .max_len = 6});
      EXPECT_EQ(hyp.tokens, greedy[b].tokens) << "seed " << seed << " sample " << b;
    }
  }
}

TEST(JointBeam, ExhaustiveBeamMatchesOracleArgmax) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double alpha : {0.0, 0.3, 1.0}) {
      TinyCase tc(1000 + seed, 1, 3 + seed % 6);
      auto best = ct::exhaustive_joint_argmax(tc.model, tc.enc, tc.lattice, 4, alpha);
      auto hyp = cd::joint_beam_search(tc.model, tc.enc, tc.lattice, 0, {.beam = 341, .alpha = alpha, .max_len = 4});
      EXPECT_EQ(hyp.tokens, best.tokens) << "seed " << seed << " alpha " << alpha;
      EXPECT_NEAR(hyp.score, best.score, 1e-9);
    }
  }
}

TEST(JointBeam, AlphaOneNeedsLatticeAndRejectsBadOptions) {
  auto next = [](const std::vector<std::vector<int>>& p) { return std::vector<std::vector<double>>(p.size(), {0, 0}); };
  EXPECT_THROW(cd::joint_beam_search(nullptr, next, 1, 1, {.beam = 2, .alpha = 0.5}), std::invalid_argument);
  EXPECT_THROW(cd::joint_beam_search(nullptr, next, 1, 1, {.beam = 0, .alpha = 0.0}), std::invalid_argument);
  EXPECT_THROW(cd::joint_beam_search(nullptr, next, 1, 1, {.beam = 1, .alpha = 1.5}), std::invalid_argument);
}

TEST(JointBeam, BestScoreNonDecreasingInBeamOnExhaustiveInstances) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TinyCase tc(2000 + seed, 1, 6);
    double prev = -INFINITY;
    for (std::size_t beam : {1, 2, 4, 8, 16, 64, 341}) {
      auto hyp = cd::joint_beam_search(tc.model, tc.enc, tc.lattice, 0, {.beam = beam, .alpha = 0.3, .max_len = 4});
      EXPECT_GE(hyp.score, prev - 1e-12) << "seed " << seed << " beam " << beam;
      prev = std::max(prev, hyp.score);
    }
  }
}
