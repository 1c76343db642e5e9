#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctcdrive/selftrain/losses.hpp"
#include "ctcdrive/selftrain/optim.hpp"
#include "ctcdrive/selftrain/pseudo_labels.hpp"
#include "ctcdrive/selftrain/schedule.hpp"
#include "ctcdrive/seqmodel/checkpoint.hpp"
#include "ctcdrive/synthdata/batch.hpp"

namespace ctcdrive::train {

using data::Sample;

/// One row of metrics.csv.
struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string mode = "sup";  // sup during the supervised warm start, else ctc or ar
  double lr = 0;
  double tau = 0;  // 0 while no teacher exists
  double loss_total = 0;
  std::array<double, 3> loss_lab{};
  std::array<double, 3> loss_unlab_ctc{};
  std::array<double, 3> loss_unlab_att{};
  std::size_t ctc_accepted = 0, ctc_eligible = 0;
  std::size_t att_accepted = 0, att_eligible = 0;
  std::size_t skip_count = 0;
  double pl_wall_ms = 0;

  static double rate(std::size_t a, std::size_t n) { return n ? static_cast<double>(a) / static_cast<double>(n) : 0.0; }
  double accept_rate_ctc() const { return rate(ctc_accepted, ctc_eligible); }
  double accept_rate_att() const { return rate(att_accepted, att_eligible); }
  double loss_unlab_total() const {
    double s = 0;
    for (int i = 0; i < 3; ++i) s += loss_unlab_ctc[static_cast<std::size_t>(i)] + loss_unlab_att[static_cast<std::size_t>(i)];
    return s;
  }

  static std::string csv_header() {
    return "step,epoch,mode,lr,tau,loss_total,loss_lab_a,loss_lab_v,loss_lab_av,loss_unlab_ctc_a,loss_unlab_ctc_v,"
           "loss_unlab_ctc_av,loss_unlab_att_a,loss_unlab_att_v,loss_unlab_att_av,accept_rate_ctc,accept_rate_att,"
           "skip_count,pl_wall_ms";
  }

  std::string csv_row() const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << step << ',' << epoch << ',' << mode << ',' << lr << ',' << std::setprecision(17) << tau
       << std::setprecision(9) << ',' << loss_total;
    for (double v : loss_lab) os << ',' << v;
    for (double v : loss_unlab_ctc) os << ',' << v;
    for (double v : loss_unlab_att) os << ',' << v;
    os << ',' << accept_rate_ctc() << ',' << accept_rate_att() << ',' << skip_count << ',' << std::setprecision(6)
       << pl_wall_ms;
    return os.str();
  }
};

/// Student, teacher and optimiser of one run.
template <class T>
struct TrainState {
  model::ModelConfig model_config;
  TrainConfig config;
  model::ModelParams<T> student;
  std::optional<model::ModelParams<T>> teacher;  // exists from the first semi-supervised step
  std::optional<AdamW<T>> optimizer;
  PlCounters counters;

  TrainState(model::ModelConfig mc, TrainConfig tc)
      : model_config(mc), config(tc), student(model::init_params<T>(mc, tc.init_seed)) {
    config.validate();
    reset_optimizer();
  }

  void reset_optimizer() {
    optimizer.emplace(student, AdamWOptions{config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay});
  }

  /// Teacher := student (frozen copy, no gradient storage).
  void reset_teacher() {
    teacher = student.clone();
    teacher->visit([](const std::string&, Tensor<T>& t) { t = t.clone(false); });
  }
};

/// Where a step sits in its phase's schedules.
struct StepClock {
  std::size_t step = 0;        // global step, for the metrics row and the step's RNG stream
  std::size_t epoch = 0;
  std::size_t phase_step = 0;  // index within the current phase
  std::size_t phase_steps = 1; // steps in the current phase
};

/// One optimisation step. Without unlabelled samples this is a supervised
/// warm-start step. Otherwise: draw the mode, label the clean audiovisual
/// view with the teacher, run the student on masked A, V and AV views of
/// labelled and pseudo-labelled samples, back-propagate the combined loss,
/// clip, update, then move the teacher toward the student.
template <class T>
StepMetrics train_step(TrainState<T>& state, const std::vector<const Sample*>& labelled,
                       const std::vector<const Sample*>& unlabelled, const StepClock& clock, Rng& rng) {
  const auto& cfg = state.config;
  const auto& mc = state.model_config;
  const bool semi = !unlabelled.empty();
  StepMetrics metrics;
  metrics.step = clock.step;
  metrics.epoch = clock.epoch;
  metrics.lr = learning_rate(clock.phase_step, clock.phase_steps, cfg.peak_lr, cfg.warmup_fraction);

  PseudoLabelBatch pls;
  std::vector<const Sample*> kept;
  if (semi) {
    if (!state.teacher) throw std::logic_error("train_step: semi-supervised step without a teacher");
    const Mode mode = sample_mode(rng, cfg.p_ar);
    metrics.mode = mode_name(mode);
    const auto start = std::chrono::steady_clock::now();
    const auto clean = data::stack_frames<T>(unlabelled, Modality::AV, mc.frame_dim);
    const model::Model<T> teacher(mc, &*state.teacher);
    pls = generate_pls(teacher, clean.frames, clean.lengths, mode, cfg, &state.counters);
    if (cfg.record_wall_time) {
      metrics.pl_wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    for (std::size_t i : kept_rows(pls)) kept.push_back(unlabelled[i]);
    for (const auto& pl : pls.items) {
      if (pl.skipped()) {
        ++metrics.skip_count;
        continue;
      }
      ++metrics.ctc_eligible;
      metrics.ctc_accepted += pl.accept_ctc;
      metrics.att_eligible += pl.accept_att.size();
      metrics.att_accepted += static_cast<std::size_t>(std::count(pl.accept_att.begin(), pl.accept_att.end(), true));
    }
  } else {
    pls.mode = Mode::CtcDriven;
  }

  std::vector<const Sample*> rows = labelled;
  rows.insert(rows.end(), kept.begin(), kept.end());
  std::vector<std::vector<int>> references;
  for (const auto* s : labelled) references.push_back(s->tokens);

  const model::Model<T> student(mc, &state.student);
  Tape<T> tape(true);
  std::array<ViewLosses<T>, 3> views;
  for (std::size_t i = 0; i < 3; ++i) {
    const Modality m = kModalities[i];
    const auto batch = data::stack_frames<T>(rows, m, mc.frame_dim);
    const auto spans = draw_masks(rng, batch.lengths, m, cfg, mc.frame_dim);
    const auto masked = grad::zero_spans<T>(tape, batch.frames, spans);
    views[i] = view_losses(tape, student, masked, batch.lengths, m, references, pls, cfg);
    metrics.loss_lab[i] = views[i].labelled(cfg);
    metrics.loss_unlab_ctc[i] = views[i].unlab_ctc.item();
    metrics.loss_unlab_att[i] = views[i].unlab_att.item();
  }
  const auto loss = combine_semi(tape, views, cfg, !semi);
  metrics.loss_total = loss.item();

  state.optimizer->zero_grad();
  tape.backward(loss);
  state.optimizer->step(metrics.lr, cfg.grad_clip);

  if (semi) {
    const std::size_t last = clock.phase_steps > 0 ? clock.phase_steps - 1 : 0;
    metrics.tau = tau_schedule(clock.phase_step, last, cfg.tau0_ema);
    ema_update(*state.teacher, state.student, metrics.tau);
  }
  return metrics;
}

/// Copy of the unlabelled pool with references and per-token durations
/// removed; the trainer only ever sees frames of these samples.
inline std::vector<Sample> strip_references(const std::vector<const Sample*>& samples) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const auto* s : samples) {
    Sample x;
    x.split = s->split;
    x.durations = {s->frames()};
    x.audio = s->audio;
    x.visual = s->visual;
    out.push_back(std::move(x));
  }
  return out;
}

/// Endless shuffled pass over a pool, reshuffled at every wrap.
class BatchCursor {
 public:
  BatchCursor(std::vector<const Sample*> pool, Rng rng) : pool_(std::move(pool)), rng_(rng) {
    if (pool_.empty()) throw std::invalid_argument("BatchCursor: empty pool");
    shuffle();
  }

  std::vector<const Sample*> next(std::size_t n) {
    std::vector<const Sample*> out;
    while (out.size() < n) {
      if (pos_ == pool_.size()) shuffle();
      out.push_back(pool_[pos_++]);
    }
    return out;
  }

 private:
  void shuffle() {
    for (std::size_t i = pool_.size(); i > 1; --i) std::swap(pool_[i - 1], pool_[rng_.below(i)]);
    pos_ = 0;
  }

  std::vector<const Sample*> pool_;
  Rng rng_;
  std::size_t pos_ = 0;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct TrainPlan {
  std::size_t warm_steps_per_epoch, semi_steps_per_epoch;
  std::size_t warm_steps() const { return warm_epochs * warm_steps_per_epoch; }
  std::size_t semi_steps() const { return semi_epochs * semi_steps_per_epoch; }
  std::size_t warm_epochs, semi_epochs;
};

inline TrainPlan plan_for(const TrainConfig& cfg, std::size_t labelled, std::size_t unlabelled) {
  TrainPlan p;
  p.warm_epochs = cfg.warm_epochs;
  p.semi_epochs = cfg.semi_epochs;
  p.warm_steps_per_epoch = ceil_div(labelled, cfg.batch_labelled);
  p.semi_steps_per_epoch =
      cfg.semi_steps_per_epoch ? cfg.semi_steps_per_epoch : ceil_div(unlabelled, cfg.batch_unlabelled);
  return p;
}

/// Called after every epoch with the 1-based global epoch number and
/// whether this was the last epoch.
template <class T>
using EpochHook = std::function<void(const TrainState<T>&, std::size_t epoch, bool last)>;

/// Supervised warm start, then the semi-supervised phase. Each phase has
/// its own warmup-then-cosine learning rate and a fresh optimiser; the
/// teacher starts as a copy of the warm-started student.
template <class T>
void run_training(TrainState<T>& state, const std::vector<const Sample*>& labelled,
                  const std::vector<const Sample*>& unlabelled, const std::function<void(const StepMetrics&)>& on_step,
                  const EpochHook<T>& on_epoch = {}) {
  const auto& cfg = state.config;
  const auto plan = plan_for(cfg, labelled.size(), unlabelled.size());
  const Rng root(cfg.train_seed);
  BatchCursor lab_cursor(labelled, root.derive(1));
  std::size_t step = 0, epoch = 0;
  const std::size_t total_epochs = plan.warm_epochs + plan.semi_epochs;

  auto guarded = [&](auto&& fn) {
    try {
      return fn();
    } catch (const grad::NumericalError& e) {
      throw grad::NumericalError("training aborted at step " + std::to_string(step) + " (epoch " +
                               std::to_string(epoch + 1) + "): " + e.what());
    }
  };

  for (std::size_t e = 0; e < plan.warm_epochs; ++e, ++epoch) {
    for (std::size_t s = 0; s < plan.warm_steps_per_epoch; ++s, ++step) {
      Rng rng = root.derive(1000 + step);
      const StepClock clock{step, epoch + 1, e * plan.warm_steps_per_epoch + s, plan.warm_steps()};
      const auto m = guarded([&] { return train_step(state, lab_cursor.next(cfg.batch_labelled), {}, clock, rng); });
      if (on_step) on_step(m);
    }
    if (on_epoch) on_epoch(state, epoch + 1, epoch + 1 == total_epochs);
  }
  if (plan.semi_epochs == 0) return;

  const auto pool = strip_references(unlabelled);
  std::vector<const Sample*> pool_ptrs;
  for (const auto& s : pool) pool_ptrs.push_back(&s);
  BatchCursor unlab_cursor(pool_ptrs, root.derive(2));
  state.reset_teacher();
  state.reset_optimizer();
  for (std::size_t e = 0; e < plan.semi_epochs; ++e, ++epoch) {
    for (std::size_t s = 0; s < plan.semi_steps_per_epoch; ++s, ++step) {
      Rng rng = root.derive(1000 + step);
      const StepClock clock{step, epoch + 1, e * plan.semi_steps_per_epoch + s, plan.semi_steps()};
      const auto m = guarded([&] {
        return train_step(state, lab_cursor.next(cfg.batch_labelled), unlab_cursor.next(cfg.batch_unlabelled), clock,
                          rng);
      });
      if (on_step) on_step(m);
    }
    if (on_epoch) on_epoch(state, epoch + 1, epoch + 1 == total_epochs);
  }
}

}  // namespace ctcdrive::train
