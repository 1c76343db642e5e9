#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ctcdrive::model {

enum class Modality { A, V, AV };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::A:
      return "a";
    case Modality::V:
      return "v";
    case Modality::AV:
      return "av";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "a" || s == "A") return Modality::A;
  if (s == "v" || s == "V") return Modality::V;
  if (s == "av" || s == "AV") return Modality::AV;
  throw std::invalid_argument("unknown modality '" + s + "' (expected a, v or av)");
}

/// Model dimensions. The special symbol shares one index: blank on the CTC
/// side, sos on decoder input and eos on decoder output are all
/// `content_vocab`.
struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t content_vocab = 24;
  std::size_t frame_dim = 16;
  std::size_t max_frames = 140;
  std::size_t max_tokens = 34;

  std::size_t vocab() const { return content_vocab + 1; }
  int blank() const { return static_cast<int>(content_vocab); }
  int sos() const { return static_cast<int>(content_vocab); }
  int eos() const { return static_cast<int>(content_vocab); }

  std::size_t input_dim(Modality m) const { return m == Modality::AV ? 2 * frame_dim : frame_dim; }

  void validate() const {
    if (d_model == 0 || encoder_layers == 0 || decoder_layers == 0 || heads == 0 || ffn_dim == 0 ||
        content_vocab == 0 || frame_dim == 0 || max_frames == 0 || max_tokens == 0) {
      throw std::invalid_argument("model config: every extent must be positive");
    }
    if (d_model % heads != 0) {
      throw std::invalid_argument("model config: d_model " + std::to_string(d_model) + " not divisible by heads " +
                                  std::to_string(heads));
    }
  }
};

}  // namespace ctcdrive::model
