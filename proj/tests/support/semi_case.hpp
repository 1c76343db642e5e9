#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "ctcdrive/gradcore/grad_check.hpp"
#include "ctcdrive/selftrain/selftrain.hpp"
#include "ctcdrive/synthdata/synthdata.hpp"
#include "tiny_model.hpp"

namespace ctcdrive::testing {

using namespace ctcdrive::train;
using grad::Tape;
using grad::Tensor;

// Full objective on a tiny batch: 2 labelled and 3 unlabelled samples, three
// masked views, pseudo-labels from a separate teacher.
inline Tensor<double> semi_objective(Tape<double>& tape, const model::Model<double>& student,
                                     const PseudoLabelBatch& pls, const std::vector<Tensor<double>>& view_frames,
                                     const TrainConfig& tc) {
  std::array<ViewLosses<double>, 3> views;
  const std::vector<std::vector<int>> refs{{1, 2}, {3, 3, 0}};
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<int> lengths{8, 7};
    for (std::size_t k : kept_rows(pls)) lengths.push_back(k == 0 ? 8 : 6);
    views[i] = view_losses(tape, student, view_frames[i], lengths, kModalities[i], refs, pls, tc);
  }
  return combine_semi(tape, views, tc);
}

/// Gradient check of the full objective for one pseudo-labelling mode.
/// Returns the worst relative error and fills `entries` with the number of
/// parameters checked.
inline double semi_gradient_error(Mode mode, std::size_t* entries = nullptr) {
  const auto cfg = tiny_config();
  auto teacher_params = tiny_params(cfg, 31);
  const model::Model<double> teacher(cfg, &teacher_params);
  auto student_params = tiny_params(cfg, 32, 1.0);
  const model::Model<double> student(cfg, &student_params);
  TrainConfig tc;
  tc.conf_threshold = 0.3;
  tc.ar_max_len = 5;
  Rng rng(77);
  const auto unlab_av = random_frames(rng, 3, 8, 8);
  auto pls = generate_pls(teacher, unlab_av, {8, 6, 6}, mode, tc);
  if (pls.skipped() == 3) throw std::logic_error("semi_gradient_error: every pseudo-label was skipped");
  const std::size_t rows = 2 + kept_rows(pls).size();
  std::vector<Tensor<double>> frames;
  for (std::size_t i = 0; i < 3; ++i) {
    auto x = random_frames(rng, rows, 8, kModalities[i] == model::Modality::AV ? 8 : 4);
    Tape<double> t(false);
    const std::vector<grad::ZeroSpan> spans{{0, 1, 3, 0, 99}, {1, 2, 4, 0, 2}};
    frames.push_back(grad::zero_spans<double>(t, x, spans));
  }
  auto params = student_params.tensors();
  std::vector<Tensor<double>> handles;
  for (auto* p : params) handles.push_back(*p);
  // h = 1e-3: key biases have an exactly zero gradient, and at smaller steps
  // roundoff in the loss difference exceeds 1e-4 of the 1e-8 denominator floor
  const auto result = grad::grad_check(
      [&](Tape<double>& tape) { return semi_objective(tape, student, pls, frames, tc); }, handles, 1e-3);
  if (entries) *entries = result.entries;
  return result.max_relative_error;
}

// Small corpus matched to the tiny model.
inline data::Corpus tiny_corpus() {
  data::CorpusConfig c;
  c.content_vocab = 4;
  c.viseme_classes = 2;
  c.frame_dim = 4;
  c.min_duration = c.max_duration = 2;
  c.successors = 3;
  c.labelled_size = 12;
  c.unlabelled_size = 24;
  c.test_id_size = 4;
  c.ood_per_bucket = 0;
  c.labelled_len = {3, 6};
  c.unlabelled_len = {3, 6};
  c.seed = 3;
  return data::gen_corpus(c);
}

inline TrainConfig tiny_train_config() {
  TrainConfig tc;
  tc.batch_labelled = 4;
  tc.batch_unlabelled = 6;
  tc.warm_epochs = 2;
  tc.semi_epochs = 2;
  tc.ar_max_len = 6;
  tc.mask_audio = 3;
  tc.mask_visual = 2;
  tc.record_wall_time = false;
  return tc;
}

}  // namespace ctcdrive::testing
