#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "ctcdrive/ctclib/ctc.hpp"
#include "ctcdrive/gradcore/ops.hpp"
#include "ctcdrive/rng.hpp"
#include "ctcdrive/selftrain/pseudo_labels.hpp"
#include "ctcdrive/seqmodel/model.hpp"

namespace ctcdrive::train {

using grad::Tape;
using grad::Tensor;

/// Scalar losses of one student view. Labelled terms are the joint-loss
/// parts; unlabelled terms follow the step's pseudo-labelling mode.
template <class T>
struct ViewLosses {
  Tensor<T> lab_ctc, lab_att, unlab_ctc, unlab_att;
  std::size_t ctc_infeasible = 0;  // unlabelled CTC terms skipped as too long for the input

  double labelled(const TrainConfig& cfg) const {
    return cfg.lambda_ctc * lab_ctc.item() + (1 - cfg.lambda_ctc) * lab_att.item();
  }
  double unlabelled(const TrainConfig& cfg) const {
    return cfg.lambda_ctc_unlab * unlab_ctc.item() + (1 - cfg.lambda_ctc_unlab) * unlab_att.item();
  }
};

/// Indices of pseudo-labels that take part in the loss.
inline std::vector<std::size_t> kept_rows(const PseudoLabelBatch& pls) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < pls.items.size(); ++i) {
    if (!pls.items[i].skipped()) rows.push_back(i);
  }
  return rows;
}

/// Student losses for one view. `frames` holds the labelled rows first
/// (one per reference) followed by one row per kept pseudo-label, in order.
template <class T>
ViewLosses<T> view_losses(Tape<T>& tape, const model::Model<T>& student, const Tensor<T>& frames,
                          const std::vector<int>& lengths, Modality modality,
                          const std::vector<std::vector<int>>& references, const PseudoLabelBatch& pls,
                          const TrainConfig& cfg) {
  const auto& mc = student.config();
  const int sos = mc.sos(), eos = mc.eos();
  const auto kept = kept_rows(pls);
  const std::size_t n_l = references.size(), n_u = kept.size(), B = n_l + n_u;
  if (frames.extent(0) != B) {
    throw grad::DimensionError("view_losses: " + std::to_string(frames.extent(0)) + " frame rows for " +
                               std::to_string(n_l) + " labelled and " + std::to_string(n_u) + " pseudo-labelled samples");
  }
  const bool ar = pls.mode == Mode::Ar;

  // decoder input prefix per row
  std::vector<const std::vector<int>*> prefix(B);
  for (std::size_t i = 0; i < n_l; ++i) prefix[i] = &references[i];
  for (std::size_t j = 0; j < n_u; ++j) {
    const auto& pl = pls.items[kept[j]];
    prefix[n_l + j] = ar ? &pl.att_pl.tokens : &pl.ctc_pl;
  }
  std::size_t W = 1;
  for (const auto* p : prefix) W = std::max(W, p->size() + 1);

  std::vector<int> inputs(B * W, sos), in_lengths(B);
  std::vector<int> target_a(B * W, 0), target_b(B * W, 0);
  std::vector<T> w_lab(B * W, T(0)), w_a(B * W, T(0)), w_b(B * W, T(0));
  double lab_positions = 0, unlab_positions = 0;
  for (std::size_t r = 0; r < B; ++r) {
    const auto& p = *prefix[r];
    const std::size_t U = p.size();
    std::copy(p.begin(), p.end(), inputs.begin() + static_cast<std::ptrdiff_t>(r * W + 1));
    in_lengths[r] = static_cast<int>(U + 1);
    for (std::size_t u = 0; u <= U; ++u) target_a[r * W + u] = u < U ? p[u] : eos;
    if (r < n_l) {
      for (std::size_t u = 0; u <= U; ++u) w_lab[r * W + u] = T(1);
      lab_positions += static_cast<double>(U + 1);
      continue;
    }
    const auto& pl = pls.items[kept[r - n_l]];
    unlab_positions += static_cast<double>(U + 1);
    const T split = ar ? T(1) : static_cast<T>(cfg.att_target_split);
    for (std::size_t u = 0; u < U; ++u) {
      if (!pl.accept_att[u]) continue;
      // family a: attention labels; family b: CTC labels at the same positions
      target_a[r * W + u] = pl.att_pl.tokens[u];
      w_a[r * W + u] = split;
      if (!ar) {
        target_b[r * W + u] = pl.ctc_pl[u];
        w_b[r * W + u] = T(1) - split;
      }
    }
    if (pl.accept_end) w_a[r * W + U] = T(1);
  }

  const auto enc = student.encode(tape, frames, lengths, modality);
  const auto ctc_lat = student.ctc_head(tape, enc);
  const auto att_lat = student.decode_forced(tape, enc, inputs, in_lengths);
  const T eps = static_cast<T>(cfg.label_smoothing);

  ViewLosses<T> out;
  const auto zero = Tensor<T>::scalar(T(0));
  const std::vector<std::vector<int>> none(B);
  if (n_l > 0) {
    std::vector<std::vector<int>> targets(B);
    std::vector<T> w(B, T(0));
    for (std::size_t i = 0; i < n_l; ++i) {
      targets[i] = references[i];
      w[i] = T(1) / static_cast<T>(n_l);
    }
    std::size_t infeasible = 0;
    out.lab_ctc = ctc::ctc_loss<T>(tape, ctc_lat.log_probs, lengths, targets, w, mc.blank(), &infeasible);
    if (infeasible) throw std::logic_error("view_losses: a reference is too long for its frames");
    out.lab_att = grad::scale(tape, grad::token_cross_entropy<T>(tape, att_lat.log_probs, target_a, w_lab, eps),
                              static_cast<T>(1.0 / lab_positions));
  } else {
    out.lab_ctc = out.lab_att = zero;
  }
  if (n_u > 0) {
    const T norm = T(1) / static_cast<T>(n_u);
    std::vector<std::vector<int>> ctc_targets(B), att_targets(B);
    std::vector<T> w_ctc(B, T(0)), w_att(B, T(0));
    for (std::size_t j = 0; j < n_u; ++j) {
      const auto& pl = pls.items[kept[j]];
      const std::size_t r = n_l + j;
      ctc_targets[r] = pl.ctc_pl;
      const T ctc_share = ar ? T(1) - static_cast<T>(cfg.ctc_target_split) : T(1);
      if (pl.accept_ctc) w_ctc[r] = ctc_share * norm;
      if (ar && pl.accept_att_seq) {
        att_targets[r] = pl.att_pl.tokens;
        w_att[r] = static_cast<T>(cfg.ctc_target_split) * norm;
      }
    }
    auto ctc_term = ctc::ctc_loss<T>(tape, ctc_lat.log_probs, lengths, ctc_targets, w_ctc, mc.blank(), &out.ctc_infeasible);
    if (ar) {
      auto att_term =
          ctc::ctc_loss<T>(tape, ctc_lat.log_probs, lengths, att_targets, w_att, mc.blank(), &out.ctc_infeasible);
      ctc_term = grad::weighted_sum<T>(tape, {ctc_term, att_term}, {T(1), T(1)});
    }
    out.unlab_ctc = ctc_term;
    const T pos_norm = static_cast<T>(1.0 / unlab_positions);
    auto ce = grad::token_cross_entropy<T>(tape, att_lat.log_probs, target_a, w_a, eps);
    if (!ar) {
      ce = grad::weighted_sum<T>(tape, {ce, grad::token_cross_entropy<T>(tape, att_lat.log_probs, target_b, w_b, eps)},
                                 {T(1), T(1)});
    }
    out.unlab_att = grad::scale(tape, ce, pos_norm);
  } else {
    out.unlab_ctc = out.unlab_att = zero;
  }
  return out;
}

/// sum_m w_m [gamma_m L_u^m + (1 - gamma_m) L_l^m] on per-modality values.
inline double combine_semi(const std::array<double, 3>& labelled, const std::array<double, 3>& unlabelled,
                           const TrainConfig& cfg) {
  double total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const Modality m = kModalities[i];
    const double g = cfg.unlabelled_ratio[m];
    total += cfg.modality_weight[m] * (g * unlabelled[i] + (1 - g) * labelled[i]);
  }
  return total;
}

/// The same objective on the tape, from each view's four loss terms, with
/// L_l = lambda * ctc + (1 - lambda) * att and the unlabelled analogue.
/// supervised_only drops the unlabelled terms and weights each view by w_m.
template <class T>
Tensor<T> combine_semi(Tape<T>& tape, const std::array<ViewLosses<T>, 3>& views, const TrainConfig& cfg,
                       bool supervised_only = false) {
  std::vector<Tensor<T>> terms;
  std::vector<T> weights;
  for (std::size_t i = 0; i < 3; ++i) {
    const Modality m = kModalities[i];
    const double w = cfg.modality_weight[m];
    const double g = supervised_only ? 0.0 : cfg.unlabelled_ratio[m];
    const double l = cfg.lambda_ctc, lu = cfg.lambda_ctc_unlab;
    terms.insert(terms.end(), {views[i].lab_ctc, views[i].lab_att, views[i].unlab_ctc, views[i].unlab_att});
    weights.insert(weights.end(), {static_cast<T>(w * (1 - g) * l), static_cast<T>(w * (1 - g) * (1 - l)),
                                   static_cast<T>(w * g * lu), static_cast<T>(w * g * (1 - lu))});
  }
  return grad::weighted_sum<T>(tape, terms, weights);
}

/// Zero spans for a student view: one span of up to mask_audio frames on
/// the audio view, up to mask_visual on the visual view, and one of each on
/// the two feature halves of the audiovisual view, drawn independently.
inline std::vector<grad::ZeroSpan> draw_masks(Rng& rng, const std::vector<int>& lengths, Modality modality,
                                              const TrainConfig& cfg, std::size_t frame_dim) {
  std::vector<grad::ZeroSpan> spans;
  auto draw = [&rng](std::size_t row, int length, std::size_t longest, std::size_t f0, std::size_t f1) {
    const int span = rng.range(0, std::min(static_cast<int>(longest), length));
    const int start = rng.range(0, length - span);
    return grad::ZeroSpan{row, static_cast<std::size_t>(start), static_cast<std::size_t>(start + span), f0, f1};
  };
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    switch (modality) {
      case Modality::A:
        spans.push_back(draw(b, lengths[b], cfg.mask_audio, 0, frame_dim));
        break;
      case Modality::V:
        spans.push_back(draw(b, lengths[b], cfg.mask_visual, 0, frame_dim));
        break;
      case Modality::AV:
        spans.push_back(draw(b, lengths[b], cfg.mask_audio, 0, frame_dim));
        spans.push_back(draw(b, lengths[b], cfg.mask_visual, frame_dim, 2 * frame_dim));
        break;
    }
  }
  return spans;
}

}  // namespace ctcdrive::train
