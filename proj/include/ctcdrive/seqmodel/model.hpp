#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctcdrive/gradcore/ops.hpp"
#include "ctcdrive/gradcore/tape.hpp"
#include "ctcdrive/seqmodel/config.hpp"
#include "ctcdrive/seqmodel/params.hpp"

namespace ctcdrive::model {

using grad::Tape;

/// Counts decoder forward passes process-wide (one per decode_forced call).
inline std::atomic<std::uint64_t>& decoder_pass_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

template <class T>
struct EncodedBatch {
  Tensor<T> hidden;  // [B x L x d_model], zero beyond each sample's length
  std::vector<int> lengths;
  Modality modality = Modality::AV;

  std::size_t batch() const { return hidden.extent(0); }
  std::size_t frames() const { return hidden.extent(1); }
};

/// Log-probabilities [B x N x V] with the valid prefix length of each row.
template <class T>
struct Lattice {
  Tensor<T> log_probs;
  std::vector<int> lengths;

  std::size_t batch() const { return log_probs.extent(0); }
  std::size_t steps() const { return log_probs.extent(1); }
  std::size_t vocab() const { return log_probs.extent(2); }
  /// Row (b, n) of the lattice.
  std::span<const T> row(std::size_t b, std::size_t n) const {
    return log_probs.values().subspan((b * steps() + n) * vocab(), vocab());
  }
};

/// Sinusoidal position table [rows x d]: sin on even columns, cos on odd.
template <class T>
std::vector<T> sinusoid_table(std::size_t rows, std::size_t d) {
  std::vector<T> table(rows * d);
  for (std::size_t pos = 0; pos < rows; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      table[pos * d + i] = static_cast<T>(std::sin(angle));
      if (i + 1 < d) table[pos * d + i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return table;
}

/// Pre-norm transformer encoder-decoder with a CTC head on the encoder.
///
/// The model reads parameters through a pointer; teacher and student are
/// two instances over two parameter sets.
template <class T>
class Model {
 public:
  Model(ModelConfig config, ModelParams<T>* params)
      : config_(config),
        params_(params),
        positions_(sinusoid_table<T>(std::max(config.max_frames, config.max_tokens), config.d_model)) {
    config_.validate();
  }

  const ModelConfig& config() const { return config_; }
  ModelParams<T>& params() { return *params_; }
  const ModelParams<T>& params() const { return *params_; }

  /// frames is [B x L x F] (A, V) or [B x L x 2F] (AV).
  EncodedBatch<T> encode(Tape<T>& tape, const Tensor<T>& frames, const std::vector<int>& lengths,
                         Modality modality) const {
    const auto& p = *params_;
    if (frames.rank() != 3 || frames.extent(2) != config_.input_dim(modality)) {
      throw grad::DimensionError("encode: modality " + std::string(modality_name(modality)) + " expects " +
                                 std::to_string(config_.input_dim(modality)) + " features, got " +
                                 grad::to_string(frames.shape()));
    }
    const std::size_t B = frames.extent(0), L = frames.extent(1);
    if (L > config_.max_frames) {
      throw grad::DimensionError("encode: " + std::to_string(L) + " frames exceed max_frames " +
                                 std::to_string(config_.max_frames));
    }
    check_lengths(lengths, B, L, "encode");
    const LinearParams<T>& proj = modality == Modality::A ? p.proj_a : modality == Modality::V ? p.proj_v : p.proj_av;
    auto x = grad::linear(tape, frames, proj.weight, proj.bias);
    x = grad::add(tape, x, position_block(B, L));

    const auto mask = key_padding_mask(lengths, B, L, L, false);
    for (const auto& layer : p.encoder) {
      auto h = grad::layer_norm(tape, x, layer.attn_norm.gain, layer.attn_norm.bias);
      x = grad::add(tape, x, attend(tape, layer.attn, h, h, mask));
      h = grad::layer_norm(tape, x, layer.ffn_norm.gain, layer.ffn_norm.bias);
      x = grad::add(tape, x, feed_forward(tape, layer.ffn, h));
    }
    x = grad::layer_norm(tape, x, p.encoder_norm.gain, p.encoder_norm.bias);
    x = grad::zero_spans<T>(tape, x, padding_spans(lengths, L));
    return {x, lengths, modality};
  }

  /// Frame log-probabilities over the CTC vocabulary.
  Lattice<T> ctc_head(Tape<T>& tape, const EncodedBatch<T>& enc) const {
    auto logits = grad::linear(tape, enc.hidden, params_->ctc_head.weight, params_->ctc_head.bias);
    return {grad::log_softmax(tape, logits), enc.lengths};
  }

  /// Teacher-forced decoder pass. tokens is row-major [B x U] and starts
  /// with sos; position u of the output predicts the token after input u.
  Lattice<T> decode_forced(Tape<T>& tape, const EncodedBatch<T>& enc, std::span<const int> tokens,
                           const std::vector<int>& token_lengths) const {
    const auto& p = *params_;
    const std::size_t B = enc.batch();
    if (B == 0 || tokens.size() % B != 0) {
      throw grad::DimensionError("decode_forced: " + std::to_string(tokens.size()) + " tokens for batch " +
                                 std::to_string(B));
    }
    const std::size_t U = tokens.size() / B, Lk = enc.frames();
    if (U == 0 || U > config_.max_tokens) {
      throw grad::DimensionError("decode_forced: " + std::to_string(U) + " positions, max_tokens is " +
                                 std::to_string(config_.max_tokens));
    }
    check_lengths(token_lengths, B, U, "decode_forced");
    for (int id : tokens) {
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab()) {
        throw std::out_of_range("decode_forced: token id " + std::to_string(id) + " outside decoder input vocabulary");
      }
    }
    decoder_pass_counter().fetch_add(1, std::memory_order_relaxed);

    auto x = grad::embedding(tape, p.token_embedding, tokens, {B, U});
    x = grad::add(tape, x, position_block(B, U));
    const auto self_mask = key_padding_mask(token_lengths, B, U, U, true);
    const auto cross_mask = key_padding_mask(enc.lengths, B, U, Lk, false);
    for (const auto& layer : p.decoder) {
      auto h = grad::layer_norm(tape, x, layer.self_norm.gain, layer.self_norm.bias);
      x = grad::add(tape, x, attend(tape, layer.self_attn, h, h, self_mask));
      h = grad::layer_norm(tape, x, layer.cross_norm.gain, layer.cross_norm.bias);
      x = grad::add(tape, x, attend(tape, layer.cross_attn, h, enc.hidden, cross_mask));
      h = grad::layer_norm(tape, x, layer.ffn_norm.gain, layer.ffn_norm.bias);
      x = grad::add(tape, x, feed_forward(tape, layer.ffn, h));
    }
    x = grad::layer_norm(tape, x, p.decoder_norm.gain, p.decoder_norm.bias);
    auto logits = grad::linear(tape, x, p.output_head.weight, p.output_head.bias);
    return {grad::log_softmax(tape, logits), token_lengths};
  }

 private:
  static void check_lengths(const std::vector<int>& lengths, std::size_t B, std::size_t max_len, const char* op) {
    if (lengths.size() != B) {
      throw grad::DimensionError(std::string(op) + ": " + std::to_string(lengths.size()) + " lengths for batch " +
                                 std::to_string(B));
    }
    for (int len : lengths) {
      if (len < 1 || static_cast<std::size_t>(len) > max_len) {
        throw grad::DimensionError(std::string(op) + ": length " + std::to_string(len) + " outside [1, " +
                                   std::to_string(max_len) + "]");
      }
    }
  }

  Tensor<T> position_block(std::size_t B, std::size_t L) const {
    const std::size_t d = config_.d_model;
    std::vector<T> block(B * L * d);
    for (std::size_t b = 0; b < B; ++b) std::copy_n(positions_.begin(), L * d, block.begin() + b * L * d);
    return Tensor<T>::constant({B, L, d}, std::move(block));
  }

  /// Additive [B x Lq x Lk] mask excluding keys at or beyond each length,
  /// and keys after the query when `causal`.
  static std::vector<T> key_padding_mask(const std::vector<int>& lengths, std::size_t B, std::size_t Lq,
                                         std::size_t Lk, bool causal) {
    std::vector<T> mask(B * Lq * Lk, T(0));
    for (std::size_t b = 0; b < B; ++b) {
      const auto len = static_cast<std::size_t>(lengths[b]);
      for (std::size_t i = 0; i < Lq; ++i) {
        T* row = mask.data() + (b * Lq + i) * Lk;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (j >= len || (causal && j > i)) row[j] = T(-1e9);
        }
      }
    }
    return mask;
  }

  static std::vector<grad::ZeroSpan> padding_spans(const std::vector<int>& lengths, std::size_t L) {
    std::vector<grad::ZeroSpan> spans;
    for (std::size_t b = 0; b < lengths.size(); ++b) {
      if (static_cast<std::size_t>(lengths[b]) < L) spans.push_back({b, static_cast<std::size_t>(lengths[b]), L});
    }
    return spans;
  }

  Tensor<T> attend(Tape<T>& tape, const AttentionParams<T>& a, const Tensor<T>& query_in, const Tensor<T>& key_in,
                   const std::vector<T>& mask) const {
    auto q = grad::linear(tape, query_in, a.q.weight, a.q.bias);
    auto k = grad::linear(tape, key_in, a.k.weight, a.k.bias);
    auto v = grad::linear(tape, key_in, a.v.weight, a.v.bias);
    auto ctx = grad::attention<T>(tape, q, k, v, mask, config_.heads);
    return grad::linear(tape, ctx, a.out.weight, a.out.bias);
  }

  static Tensor<T> feed_forward(Tape<T>& tape, const FeedForwardParams<T>& f, const Tensor<T>& x) {
    auto h = grad::gelu(tape, grad::linear(tape, x, f.up.weight, f.up.bias));
    return grad::linear(tape, h, f.down.weight, f.down.bias);
  }

  ModelConfig config_;
  ModelParams<T>* params_;
  std::vector<T> positions_;
};

}  // namespace ctcdrive::model
