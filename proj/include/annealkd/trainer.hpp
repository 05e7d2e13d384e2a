#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <variant>

#include "annealkd/checkpoint.hpp"
#include "annealkd/dataset.hpp"
#include "annealkd/distill.hpp"
#include "annealkd/metrics.hpp"
#include "annealkd/model.hpp"
#include "annealkd/optim.hpp"
#include "annealkd/precision.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace trainer {

using data::TaskKind;

/// Plain hard-label training.
struct ScratchSchedule {
  friend bool operator==(const ScratchSchedule&, const ScratchSchedule&) = default;
};

using Schedule = std::variant<ScratchSchedule, distill::VanillaKDConfig, distill::AnnealingSchedule>;

enum class LrSchedule {
  Constant,
  StepDecay,  // x0.1 at 50% and again at 75% of each stage's epochs
};

struct TrainConfig {
  autograd::SgdOptions optimizer;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  /// Epoch count for scratch and vanilla KD; annealing takes its epochs from
  /// the schedule.
  std::size_t epochs = 1;
  Schedule schedule = ScratchSchedule{};
  LrSchedule lr_schedule = LrSchedule::Constant;
  bool augment = false;
  /// Fills the metrics `seconds` column with wall-clock time. Off by default
  /// so that reruns produce byte-identical metrics files.
  bool record_wall_clock = false;
  TaskKind task = TaskKind::Classification;

  void validate() const;
};

struct TrainData {
  const data::Dataset& train;
  const data::Dataset& validation;
};

struct TrainResult {
  models::Model model;
  MetricsRecord metrics;
  /// Snapshot the returned model was restored from; `metric` holds the
  /// selection criterion value it won with.
  Checkpoint best;
};

struct TrainHooks {
  /// Called after the last epoch of every stage-one temperature with the
  /// current (not best) student.
  std::function<void(int temperature, const models::Model& student)> on_temperature_end;
  std::function<void(const MetricsRow& row)> on_epoch;
};

/// Two-stage annealed distillation. Stage one walks T = tau_max..1, training
/// `epochs_per_temperature` epochs against Phi(T) * z_t and keeping the best
/// checkpoint (lowest validation stage-one loss) of the current temperature;
/// that checkpoint is loaded at the stage boundary. Stage two fine-tunes on
/// hard labels and keeps the best validation metric.
TrainResult train_annealing_kd(models::Model student, const models::Model& teacher, const TrainData& data,
                               const TrainConfig& config, const TrainHooks& hooks = {});

/// Single-stage KD, best checkpoint by validation metric.
TrainResult train_vanilla_kd(models::Model student, const models::Model& teacher, const TrainData& data,
                             const TrainConfig& config, const TrainHooks& hooks = {});

/// Hard-label training (cross-entropy or MSE by task), best checkpoint by
/// validation metric.
TrainResult train_scratch(models::Model student, const TrainData& data, const TrainConfig& config,
                          const TrainHooks& hooks = {});

struct TakdResult {
  models::Model assistant;
  models::Model student;
  MetricsRecord assistant_metrics;
  MetricsRecord student_metrics;
};

/// Teacher -> assistant -> student, both hops with vanilla KD. An assistant
/// config with zero epochs skips the first hop and uses `assistant` as is.
TakdResult train_takd(const models::Model& teacher, models::Model assistant, models::Model student,
                      const TrainData& data, const TrainConfig& assistant_config, const TrainConfig& student_config);
TakdResult train_takd(const models::Model& teacher, const models::ModelSpec& assistant_spec, models::Model student,
                      const TrainData& data, const TrainConfig& assistant_config, const TrainConfig& student_config);

/// Accuracy for classification, mean squared error for regression.
double evaluate(const models::Model& model, const data::Dataset& dataset, TaskKind task);

/// True when `candidate` beats `incumbent` for the task's metric.
bool metric_improves(TaskKind task, double candidate, double incumbent);

/// Learning rate for `epoch_in_stage` (0-based) of a stage with `stage_epochs` epochs.
double scheduled_learning_rate(double base, LrSchedule schedule, std::size_t epoch_in_stage, std::size_t stage_epochs);

}  // namespace trainer
ANNEALKD_END_NAMESPACE
