#pragma once

#include <algorithm>
#include <vector>

#include "ctcdrive/gradcore/tensor.hpp"
#include "ctcdrive/seqmodel/config.hpp"
#include "ctcdrive/synthdata/corpus.hpp"

namespace ctcdrive::data {

template <class T>
struct FrameBatch {
  grad::Tensor<T> frames;  // [B x L_max x F'], zero past each length
  std::vector<int> lengths;
};

/// Stacks the chosen view of each sample into a zero-padded batch.
template <class T>
FrameBatch<T> stack_frames(const std::vector<const Sample*>& samples, model::Modality modality, std::size_t frame_dim) {
  const std::size_t width = modality == model::Modality::AV ? 2 * frame_dim : frame_dim;
  std::size_t L = 0;
  for (const auto* s : samples) L = std::max(L, static_cast<std::size_t>(s->frames()));
  std::vector<T> values(samples.size() * L * width, T(0));
  std::vector<int> lengths;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const Sample& s = *samples[b];
    const std::vector<float> av = modality == model::Modality::AV ? s.av(frame_dim) : std::vector<float>{};
    const std::vector<float>& src = modality == model::Modality::A ? s.audio : modality == model::Modality::V ? s.visual : av;
    std::transform(src.begin(), src.end(), values.begin() + static_cast<std::ptrdiff_t>(b * L * width),
                   [](float v) { return static_cast<T>(v); });
    lengths.push_back(s.frames());
  }
  return {grad::Tensor<T>::constant({samples.size(), L, width}, std::move(values)), std::move(lengths)};
}

}  // namespace ctcdrive::data
