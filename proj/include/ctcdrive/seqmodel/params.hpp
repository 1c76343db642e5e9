#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctcdrive/gradcore/tensor.hpp"
#include "ctcdrive/rng.hpp"
#include "ctcdrive/seqmodel/config.hpp"

namespace ctcdrive::model {

using grad::Shape;
using grad::Tensor;

template <class T>
struct LinearParams {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]
};

template <class T>
struct NormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <class T>
struct AttentionParams {
  LinearParams<T> q, k, v, out;
};

template <class T>
struct FeedForwardParams {
  LinearParams<T> up, down;
};

template <class T>
struct EncoderLayerParams {
  NormParams<T> attn_norm;
  AttentionParams<T> attn;
  NormParams<T> ffn_norm;
  FeedForwardParams<T> ffn;
};

template <class T>
struct DecoderLayerParams {
  NormParams<T> self_norm;
  AttentionParams<T> self_attn;
  NormParams<T> cross_norm;
  AttentionParams<T> cross_attn;
  NormParams<T> ffn_norm;
  FeedForwardParams<T> ffn;
};

/// All learned tensors of the encoder-decoder. The three input projections
/// are the only modality-specific parameters.
template <class T>
struct ModelParams {
  LinearParams<T> proj_a, proj_v, proj_av;
  std::vector<EncoderLayerParams<T>> encoder;
  NormParams<T> encoder_norm;
  Tensor<T> token_embedding;  // [vocab x d_model]
  std::vector<DecoderLayerParams<T>> decoder;
  NormParams<T> decoder_norm;
  LinearParams<T> ctc_head, output_head;

  /// Calls f(name, tensor&) for every parameter in manifest order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t count() const {
    std::size_t n = 0;
    visit([&n](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    visit([&out](const std::string& name, const Tensor<T>&) { out.push_back(name); });
    return out;
  }

  /// Pointers to every parameter tensor in manifest order.
  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    visit([&out](const std::string&, Tensor<T>& t) { out.push_back(&t); });
    return out;
  }

  /// Deep copy; the copy's tensors are fresh parameter leaves.
  ModelParams clone() const {
    ModelParams copy = *this;
    copy.visit([](const std::string&, Tensor<T>& t) { t = t.clone(true); });
    return copy;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& p, F& f) {
    auto lin = [&f](const std::string& n, auto& l) {
      f(n + ".weight", l.weight);
      f(n + ".bias", l.bias);
    };
    auto norm = [&f](const std::string& n, auto& l) {
      f(n + ".gain", l.gain);
      f(n + ".bias", l.bias);
    };
    auto attn = [&lin](const std::string& n, auto& a) {
      lin(n + ".q", a.q);
      lin(n + ".k", a.k);
      lin(n + ".v", a.v);
      lin(n + ".out", a.out);
    };
    auto ffn = [&lin](const std::string& n, auto& l) {
      lin(n + ".up", l.up);
      lin(n + ".down", l.down);
    };
    lin("proj_a", p.proj_a);
    lin("proj_v", p.proj_v);
    lin("proj_av", p.proj_av);
    for (std::size_t i = 0; i < p.encoder.size(); ++i) {
      const std::string n = "encoder." + std::to_string(i);
      norm(n + ".attn_norm", p.encoder[i].attn_norm);
      attn(n + ".attn", p.encoder[i].attn);
      norm(n + ".ffn_norm", p.encoder[i].ffn_norm);
      ffn(n + ".ffn", p.encoder[i].ffn);
    }
    norm("encoder_norm", p.encoder_norm);
    f(std::string("token_embedding"), p.token_embedding);
    for (std::size_t i = 0; i < p.decoder.size(); ++i) {
      const std::string n = "decoder." + std::to_string(i);
      norm(n + ".self_norm", p.decoder[i].self_norm);
      attn(n + ".self_attn", p.decoder[i].self_attn);
      norm(n + ".cross_norm", p.decoder[i].cross_norm);
      attn(n + ".cross_attn", p.decoder[i].cross_attn);
      norm(n + ".ffn_norm", p.decoder[i].ffn_norm);
      ffn(n + ".ffn", p.decoder[i].ffn);
    }
    norm("decoder_norm", p.decoder_norm);
    lin("ctc_head", p.ctc_head);
    lin("output_head", p.output_head);
  }
};

namespace detail {

template <class T>
LinearParams<T> make_linear(std::size_t in, std::size_t out) {
  return {Tensor<T>::parameter({in, out}, std::vector<T>(in * out)), Tensor<T>::parameter({out}, std::vector<T>(out))};
}

template <class T>
NormParams<T> make_norm(std::size_t d) {
  return {Tensor<T>::parameter({d}, std::vector<T>(d, T(1))), Tensor<T>::parameter({d}, std::vector<T>(d, T(0)))};
}

template <class T>
AttentionParams<T> make_attention(std::size_t d) {
  return {make_linear<T>(d, d), make_linear<T>(d, d), make_linear<T>(d, d), make_linear<T>(d, d)};
}

template <class T>
FeedForwardParams<T> make_ffn(std::size_t d, std::size_t hidden) {
  return {make_linear<T>(d, hidden), make_linear<T>(hidden, d)};
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

/// Allocates the layout for `config` with layer-norm gains at 1 and every
/// other entry at 0.
template <class T>
ModelParams<T> zero_params(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model, f = config.frame_dim;
  ModelParams<T> p;
  p.proj_a = detail::make_linear<T>(f, d);
  p.proj_v = detail::make_linear<T>(f, d);
  p.proj_av = detail::make_linear<T>(2 * f, d);
  for (std::size_t i = 0; i < config.encoder_layers; ++i) {
    p.encoder.push_back({detail::make_norm<T>(d), detail::make_attention<T>(d), detail::make_norm<T>(d),
                         detail::make_ffn<T>(d, config.ffn_dim)});
  }
  p.encoder_norm = detail::make_norm<T>(d);
  p.token_embedding = Tensor<T>::parameter({config.vocab(), d}, std::vector<T>(config.vocab() * d));
  for (std::size_t i = 0; i < config.decoder_layers; ++i) {
    p.decoder.push_back({detail::make_norm<T>(d), detail::make_attention<T>(d), detail::make_norm<T>(d),
                         detail::make_attention<T>(d), detail::make_norm<T>(d), detail::make_ffn<T>(d, config.ffn_dim)});
  }
  p.decoder_norm = detail::make_norm<T>(d);
  p.ctc_head = detail::make_linear<T>(d, config.vocab());
  p.output_head = detail::make_linear<T>(d, config.vocab());
  return p;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases, where
/// fan_in is the weight's input extent (1 for the embedding table, whose
/// input is one-hot). Layer norms start at gain 1, bias 0. Each tensor
/// draws from its own stream derived from `seed` and its manifest index.
template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  auto p = zero_params<T>(config);
  const Rng root(seed);
  std::uint64_t index = 0;
  std::size_t fan_in = 1;
  p.visit([&](const std::string& name, Tensor<T>& t) {
    Rng rng = root.derive(index++);
    const bool is_norm = detail::ends_with(name, ".gain") ||
                         (detail::ends_with(name, ".bias") && name.find("_norm") != std::string::npos);
    if (is_norm) return;
    if (detail::ends_with(name, ".weight")) fan_in = t.extent(0);
    if (name == "token_embedding") fan_in = 1;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.mutable_values()) v = static_cast<T>(rng.uniform(-bound, bound));
  });
  return p;
}

/// Copies values between layouts of possibly different scalar types.
template <class Dst, class Src>
void copy_values(ModelParams<Dst>& dst, const ModelParams<Src>& src) {
  std::vector<const Tensor<Src>*> from;
  src.visit([&from](const std::string&, const Tensor<Src>& t) { from.push_back(&t); });
  std::size_t i = 0;
  dst.visit([&](const std::string& name, Tensor<Dst>& t) {
    if (i >= from.size() || from[i]->shape() != t.shape()) throw grad::DimensionError("parameter layout mismatch at " + name);
    auto out = t.mutable_values();
    auto in = from[i]->values();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<Dst>(in[j]);
    ++i;
  });
  if (i != from.size()) throw grad::DimensionError("parameter layout mismatch: differing tensor counts");
}

}  // namespace ctcdrive::model
