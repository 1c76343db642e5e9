#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctcdrive/seqmodel/config.hpp"

namespace ctcdrive::train {

using model::Modality;

inline constexpr std::array<Modality, 3> kModalities{Modality::A, Modality::V, Modality::AV};

/// Pseudo-labelling mode of one step.
enum class Mode { CtcDriven, Ar };

inline const char* mode_name(Mode m) { return m == Mode::Ar ? "ar" : "ctc"; }

struct PerModality {
  double a, v, av;
  double operator[](Modality m) const { return m == Modality::A ? a : m == Modality::V ? v : av; }
};

struct TrainConfig {
  double p_ar = 0.5;              // probability of the autoregressive mode per step
  double tau0_ema = 0.998;        // EMA decay at the first semi-supervised step
  double conf_threshold = 0.8;    // pseudo-label acceptance threshold
  double lambda_ctc = 0.1;        // CTC weight in the labelled joint loss
  double lambda_ctc_unlab = 0.1;  // CTC weight when combining the unlabelled losses
  double label_smoothing = 0.1;
  PerModality modality_weight{0.7, 0.3, 0.7};
  PerModality unlabelled_ratio{0.75, 0.97, 0.75};
  double att_target_split = 0.5;  // CTC-driven mode: decoder weight on attention PLs (rest on CTC PLs)
  double ctc_target_split = 0.5;  // AR mode: CTC-head weight on attention PLs (rest on CTC PLs)
  std::size_t batch_labelled = 8;
  std::size_t batch_unlabelled = 24;
  std::size_t warm_epochs = 20;  // supervised-only epochs over the labelled split
  std::size_t semi_epochs = 10;  // epochs over the unlabelled split
  std::size_t semi_steps_per_epoch = 0;  // 0: one pass over the unlabelled split
  double warmup_fraction = 0.3;
  double peak_lr = 3e-3;
  double weight_decay = 0.04;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double grad_clip = 3.0;
  std::size_t mask_audio = 9;   // longest zero span on the audio view, frames
  std::size_t mask_visual = 6;  // same for the visual view
  std::size_t ar_max_len = 33;
  std::size_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoints
  bool record_wall_time = true;
  std::uint64_t init_seed = 1;
  std::uint64_t train_seed = 1;

  void validate() const {
    auto unit = [](double x, const char* name) {
      if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
    };
    unit(p_ar, "p_ar");
    unit(tau0_ema, "tau0_ema");
    unit(lambda_ctc, "lambda_ctc");
    unit(lambda_ctc_unlab, "lambda_ctc_unlab");
    unit(att_target_split, "att_target_split");
    unit(ctc_target_split, "ctc_target_split");
    unit(warmup_fraction, "warmup_fraction");
    for (Modality m : kModalities) {
      unit(modality_weight[m], "modality weight");
      unit(unlabelled_ratio[m], "unlabelled ratio");
    }
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw std::invalid_argument("label_smoothing must lie in [0, 1)");
    if (conf_threshold < 0.0) throw std::invalid_argument("conf_threshold must be non-negative");
    if (batch_labelled == 0 || batch_unlabelled == 0) throw std::invalid_argument("batch sizes must be positive");
    if (peak_lr <= 0 || weight_decay < 0 || grad_clip <= 0) throw std::invalid_argument("bad optimiser settings");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) {
      throw std::invalid_argument("adam betas must lie in [0, 1)");
    }
  }

  std::vector<std::pair<std::string, std::string>> to_kv() const {
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    auto n = [](std::uint64_t v) { return std::to_string(v); };
    return {{"p_ar", num(p_ar)},
            {"tau0_ema", num(tau0_ema)},
            {"conf_threshold", num(conf_threshold)},
            {"lambda_ctc", num(lambda_ctc)},
            {"lambda_ctc_unlab", num(lambda_ctc_unlab)},
            {"label_smoothing", num(label_smoothing)},
            {"weight_a", num(modality_weight.a)},
            {"weight_v", num(modality_weight.v)},
            {"weight_av", num(modality_weight.av)},
            {"unlab_ratio_a", num(unlabelled_ratio.a)},
            {"unlab_ratio_v", num(unlabelled_ratio.v)},
            {"unlab_ratio_av", num(unlabelled_ratio.av)},
            {"att_target_split", num(att_target_split)},
            {"ctc_target_split", num(ctc_target_split)},
            {"batch_labelled", n(batch_labelled)},
            {"batch_unlabelled", n(batch_unlabelled)},
            {"warm_epochs", n(warm_epochs)},
            {"semi_epochs", n(semi_epochs)},
            {"semi_steps_per_epoch", n(semi_steps_per_epoch)},
            {"warmup_fraction", num(warmup_fraction)},
            {"peak_lr", num(peak_lr)},
            {"weight_decay", num(weight_decay)},
            {"adam_beta1", num(adam_beta1)},
            {"adam_beta2", num(adam_beta2)},
            {"adam_eps", num(adam_eps)},
            {"grad_clip", num(grad_clip)},
            {"mask_audio", n(mask_audio)},
            {"mask_visual", n(mask_visual)},
            {"ar_max_len", n(ar_max_len)},
            {"checkpoint_every", n(checkpoint_every)},
            {"record_wall_time", record_wall_time ? "1" : "0"},
            {"init_seed", n(init_seed)},
            {"train_seed", n(train_seed)}};
  }

  bool set(const std::string& key, const std::string& value) {
    auto d = [&] { return std::stod(value); };
    auto z = [&] { return static_cast<std::size_t>(std::stoull(value)); };
    if (key == "p_ar") p_ar = d();
    else if (key == "tau0_ema") tau0_ema = d();
    else if (key == "conf_threshold") conf_threshold = d();
    else if (key == "lambda_ctc") lambda_ctc = d();
    else if (key == "lambda_ctc_unlab") lambda_ctc_unlab = d();
    else if (key == "label_smoothing") label_smoothing = d();
    else if (key == "weight_a") modality_weight.a = d();
    else if (key == "weight_v") modality_weight.v = d();
    else if (key == "weight_av") modality_weight.av = d();
    else if (key == "unlab_ratio_a") unlabelled_ratio.a = d();
    else if (key == "unlab_ratio_v") unlabelled_ratio.v = d();
    else if (key == "unlab_ratio_av") unlabelled_ratio.av = d();
    else if (key == "att_target_split") att_target_split = d();
    else if (key == "ctc_target_split") ctc_target_split = d();
    else if (key == "batch_labelled") batch_labelled = z();
    else if (key == "batch_unlabelled") batch_unlabelled = z();
    else if (key == "warm_epochs") warm_epochs = z();
    else if (key == "semi_epochs") semi_epochs = z();
    else if (key == "semi_steps_per_epoch") semi_steps_per_epoch = z();
    else if (key == "warmup_fraction") warmup_fraction = d();
    else if (key == "peak_lr") peak_lr = d();
    else if (key == "weight_decay") weight_decay = d();
    else if (key == "adam_beta1") adam_beta1 = d();
    else if (key == "adam_beta2") adam_beta2 = d();
    else if (key == "adam_eps") adam_eps = d();
    else if (key == "grad_clip") grad_clip = d();
    else if (key == "mask_audio") mask_audio = z();
    else if (key == "mask_visual") mask_visual = z();
    else if (key == "ar_max_len") ar_max_len = z();
    else if (key == "checkpoint_every") checkpoint_every = z();
    else if (key == "record_wall_time") record_wall_time = std::stoi(value) != 0;
    else if (key == "init_seed") init_seed = std::stoull(value);
    else if (key == "train_seed") train_seed = std::stoull(value);
    else return false;
    return true;
  }
};

}  // namespace ctcdrive::train
