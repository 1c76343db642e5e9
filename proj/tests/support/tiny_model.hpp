#pragma once

#include <vector>

#include "ctcdrive/rng.hpp"
#include "ctcdrive/seqmodel/seqmodel.hpp"

namespace ctcdrive::testing {

/// A small model over 4 content tokens for exhaustive oracles.
inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.d_model = 8;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.ffn_dim = 16;
  c.content_vocab = 4;
  c.frame_dim = 4;
  c.max_frames = 16;
  c.max_tokens = 8;
  return c;
}

/// Parameters with init bounds scaled by `gain`, so distributions are peaked.
inline model::ModelParams<double> tiny_params(const model::ModelConfig& config, std::uint64_t seed, double gain = 3.0) {
  auto p = model::init_params<double>(config, seed);
  p.visit([gain](const std::string& name, grad::Tensor<double>& t) {
    if (name.find("_norm") != std::string::npos) return;
    for (auto& v : t.mutable_values()) v *= gain;
  });
  return p;
}

inline grad::Tensor<double> random_frames(Rng& rng, std::size_t B, std::size_t L, std::size_t F) {
  std::vector<double> v(B * L * F);
  for (auto& x : v) x = rng.normal();
  return grad::Tensor<double>::constant({B, L, F}, std::move(v));
}

}  // namespace ctcdrive::testing
