#include "annealkd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <utility>

#include "annealkd/cifar.hpp"
#include "annealkd/errors.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace trainer {
namespace {

using autograd::Graph;
using autograd::NodeId;
using Clock = std::chrono::steady_clock;

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows) {
  const std::size_t width = source.size() / source.dim(0);
  std::vector<Real> values(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(source.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                values.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Shape shape = source.shape();
  shape[0] = rows.size();
  return Tensor(std::move(shape), std::move(values));
}

/// Loss for one phase of training: a graph builder for minibatches and a
/// value-only twin for the validation set.
struct Objective {
  std::function<NodeId(Graph&, NodeId logits, const data::Batch&, const Tensor* teacher)> build;
  std::function<double(const Tensor& logits)> validate;
  double temperature = 0;
};

class Session {
 public:
  Session(models::Model student, const models::Model* teacher, const TrainData& data, const TrainConfig& config,
          const TrainHooks& hooks)
      : model_(std::move(student)), teacher_(teacher), data_(data), config_(config), hooks_(hooks),
        start_(Clock::now()) {
    config_.validate();
    check_dataset(data_.train, "training");
    check_dataset(data_.validation, "validation");
    if (data_.train.task != config_.task || data_.validation.task != config_.task) {
      throw InvalidArgument("train: dataset task does not match the configured task");
    }
    model_.check_input(data_.train.inputs);
    if (teacher_) {
      if (teacher_->spec().output_dim != model_.spec().output_dim) {
        throw InvalidArgument("teacher has " + std::to_string(teacher_->spec().output_dim) +
                              " outputs but student has " + std::to_string(model_.spec().output_dim));
      }
      teacher_->check_input(data_.train.inputs);
      if (!config_.augment) train_teacher_ = teacher_->predict(data_.train.inputs);
      val_teacher_ = teacher_->predict(data_.validation.inputs);
    }
  }

  /// Runs `epochs` epochs of `objective`; `select` ranks candidates (lower is
  /// better) and the best snapshot of the run is returned.
  Checkpoint run(const Objective& objective, Stage stage, std::size_t epochs, bool select_by_loss,
                 autograd::SgdMomentum& optimizer, std::size_t stage_epoch_offset, std::size_t stage_epochs) {
    std::optional<Checkpoint> best;
    double best_score = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
      ++epoch_;
      optimizer.set_learning_rate(scheduled_learning_rate(config_.optimizer.learning_rate, config_.lr_schedule,
                                                          stage_epoch_offset + e, stage_epochs));
      MetricsRow row;
      row.epoch = epoch_;
      row.stage = stage;
      row.temperature = objective.temperature;
      row.train_loss = train_epoch(objective, optimizer);
      const Tensor logits = model_.predict(data_.validation.inputs);
      row.val_loss = objective.validate(logits);
      row.val_metric = metric_from_logits(logits, data_.validation, config_.task);
      if (config_.record_wall_clock) row.seconds = std::chrono::duration<double>(Clock::now() - start_).count();
      metrics_.append(row);
      if (hooks_.on_epoch) hooks_.on_epoch(row);

      const double score = select_by_loss ? row.val_loss : row.val_metric;
      const bool better = !best || (select_by_loss ? score < best_score : metric_improves(config_.task, score, best_score));
      if (better) {
        best_score = score;
        best = Checkpoint::capture(model_, epoch_, stage, objective.temperature, score);
      }
    }
    return std::move(*best);
  }

  Objective hard_label_objective() const {
    Objective o;
    const TaskKind task = config_.task;
    o.build = [task](Graph& g, NodeId logits, const data::Batch& b, const Tensor*) {
      return task == TaskKind::Classification ? distill::cross_entropy_loss(g, logits, b.labels)
                                              : distill::regression_fit_loss(g, logits, b.targets);
    };
    const data::Dataset& val = data_.validation;
    o.validate = [task, &val](const Tensor& logits) {
      return task == TaskKind::Classification ? distill::cross_entropy_loss(logits, val.labels)
                                              : distill::regression_fit_loss(logits, val.targets);
    };
    return o;
  }

  Objective vanilla_objective(const distill::VanillaKDConfig& kd) const {
    Objective o;
    const TaskKind task = config_.task;
    o.temperature = kd.temperature;
    o.build = [task, kd](Graph& g, NodeId logits, const data::Batch& b, const Tensor* teacher) {
      return task == TaskKind::Classification ? distill::vanilla_kd_loss(g, logits, *teacher, b.labels, kd)
                                              : distill::regression_kd_loss(g, logits, *teacher, b.targets, kd);
    };
    const data::Dataset& val = data_.validation;
    const Tensor& zt = val_teacher_;
    o.validate = [task, kd, &val, &zt](const Tensor& logits) {
      return task == TaskKind::Classification ? distill::vanilla_kd_loss(logits, zt, val.labels, kd)
                                              : distill::regression_kd_loss(logits, zt, val.targets, kd);
    };
    return o;
  }

  Objective annealing_objective(int temperature, const distill::AnnealingSchedule& schedule) const {
    Objective o;
    o.temperature = temperature;
    const Tensor& zt = val_teacher_;
    if (schedule.stage_one_loss == distill::StageOneLoss::Mse) {
      const double phi = distill::annealing_factor(temperature, schedule.tau_max);
      o.build = [phi](Graph& g, NodeId logits, const data::Batch&, const Tensor* teacher) {
        return distill::annealing_kd_loss(g, logits, *teacher, static_cast<Real>(phi));
      };
      o.validate = [phi, &zt](const Tensor& logits) { return distill::annealing_kd_loss(logits, zt, phi); };
    } else {
      const auto t = static_cast<Real>(temperature);
      o.build = [t](Graph& g, NodeId logits, const data::Batch&, const Tensor* teacher) {
        return distill::annealing_kl_loss(g, logits, *teacher, t);
      };
      o.validate = [t, &zt](const Tensor& logits) { return distill::annealing_kl_loss(logits, zt, t); };
    }
    return o;
  }

  /// Drops every teacher reference; later epochs cannot consult it.
  void detach_teacher() {
    teacher_ = nullptr;
    train_teacher_ = Tensor();
    val_teacher_ = Tensor();
  }

  models::Model& model() { return model_; }
  MetricsRecord& metrics() { return metrics_; }
  const TrainConfig& config() const { return config_; }
  const TrainHooks& hooks() const { return hooks_; }

 private:
  static void check_dataset(const data::Dataset& d, const char* what) {
    if (d.size() == 0) throw DataError(std::string(what) + " set is empty");
    d.validate();
  }

  double train_epoch(const Objective& objective, autograd::SgdMomentum& optimizer) {
    const std::uint64_t epoch_seed = data::mix_seed(config_.seed, epoch_);
    std::mt19937_64 augment_rng(data::mix_seed(epoch_seed, 1));
    auto parts = data::batches(data_.train, config_.batch_size, epoch_seed);
    double total = 0;
    std::size_t seen = 0;
    std::vector<Tensor> grads;
    for (data::Batch& b : parts) {
      const std::size_t n = b.inputs.dim(0);
      if (config_.augment) data::augment_images(b.inputs, augment_rng);
      std::optional<Tensor> teacher_rows;
      if (teacher_) {
        teacher_rows = config_.augment ? teacher_->forward(b.inputs) : gather_rows(train_teacher_, b.indices);
      }
      Graph g;
      const NodeId x = g.constant(b.inputs);
      const models::TrainTrace trace = model_.forward_train(g, x);
      const NodeId loss = objective.build(g, trace.logits, b, teacher_rows ? &*teacher_rows : nullptr);
      autograd::GradientMap map = g.backward(loss);
      grads.clear();
      for (NodeId p : trace.params) grads.push_back(std::move(map.at(p)));
      optimizer.step(model_.parameters(), grads);
      model_.update_running_stats(g, trace);
      total += static_cast<double>(g.value(loss).item()) * static_cast<double>(n);
      seen += n;
    }
    return total / static_cast<double>(seen);
  }

  static double metric_from_logits(const Tensor& logits, const data::Dataset& d, TaskKind task) {
    if (task == TaskKind::Regression) return distill::regression_fit_loss(logits, d.targets);
    const std::size_t n = logits.dim(0), k = logits.size() / n;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = logits.data().subspan(i * k, k);
      const auto arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (arg == d.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
  }

  friend double trainer::evaluate(const models::Model&, const data::Dataset&, TaskKind);

  models::Model model_;
  const models::Model* teacher_;
  const TrainData& data_;
  TrainConfig config_;
  const TrainHooks& hooks_;
  Clock::time_point start_;
  Tensor train_teacher_;
  Tensor val_teacher_;
  MetricsRecord metrics_;
  std::size_t epoch_ = 0;
};

TrainResult single_stage(Session& s, const Objective& objective) {
  autograd::SgdMomentum optimizer(s.config().optimizer);
  const std::size_t epochs = s.config().epochs;
  Checkpoint best = s.run(objective, Stage::One, epochs, false, optimizer, 0, epochs);
  best.restore(s.model());
  return TrainResult{std::move(s.model()), std::move(s.metrics()), std::move(best)};
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
  if (!(optimizer.learning_rate > 0)) throw InvalidArgument("train: learning_rate must be positive");
  if (const auto* a = std::get_if<distill::AnnealingSchedule>(&schedule)) {
    a->validate();
  } else {
    if (epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
    if (const auto* kd = std::get_if<distill::VanillaKDConfig>(&schedule)) kd->validate();
  }
}

bool metric_improves(TaskKind task, double candidate, double incumbent) {
  return task == TaskKind::Classification ? candidate > incumbent : candidate < incumbent;
}

double scheduled_learning_rate(double base, LrSchedule schedule, std::size_t epoch_in_stage,
                               std::size_t stage_epochs) {
  if (schedule == LrSchedule::Constant) return base;
  double lr = base;
  if (2 * epoch_in_stage >= stage_epochs) lr *= 0.1;
  if (4 * epoch_in_stage >= 3 * stage_epochs) lr *= 0.1;
  return lr;
}

TrainResult train_annealing_kd(models::Model student, const models::Model& teacher, const TrainData& data,
                               const TrainConfig& config, const TrainHooks& hooks) {
  const auto* schedule = std::get_if<distill::AnnealingSchedule>(&config.schedule);
  if (!schedule) throw InvalidArgument("train_annealing_kd: config schedule is not an annealing schedule");
  Session s(std::move(student), &teacher, data, config, hooks);

  const auto k = static_cast<std::size_t>(schedule->epochs_per_temperature);
  const std::size_t stage_one = schedule->stage_one_epochs();
  autograd::SgdMomentum optimizer(config.optimizer);
  std::optional<Checkpoint> best;
  std::size_t done = 0;
  for (int t : schedule->temperatures()) {
    best = s.run(s.annealing_objective(t, *schedule), Stage::One, k, true, optimizer, done, stage_one);
    done += k;
    if (hooks.on_temperature_end) hooks.on_temperature_end(t, s.model());
  }
  best->restore(s.model());
  s.detach_teacher();

  const auto n = static_cast<std::size_t>(schedule->fine_tune_epochs);
  if (n > 0) {
    autograd::SgdMomentum fine_tune(config.optimizer);
    best = s.run(s.hard_label_objective(), Stage::Two, n, false, fine_tune, 0, n);
    best->restore(s.model());
  }
  return TrainResult{std::move(s.model()), std::move(s.metrics()), std::move(*best)};
}

TrainResult train_vanilla_kd(models::Model student, const models::Model& teacher, const TrainData& data,
                             const TrainConfig& config, const TrainHooks& hooks) {
  const auto* kd = std::get_if<distill::VanillaKDConfig>(&config.schedule);
  if (!kd) throw InvalidArgument("train_vanilla_kd: config schedule is not a vanilla KD config");
  Session s(std::move(student), &teacher, data, config, hooks);
  return single_stage(s, s.vanilla_objective(*kd));
}

TrainResult train_scratch(models::Model student, const TrainData& data, const TrainConfig& config,
                          const TrainHooks& hooks) {
  Session s(std::move(student), nullptr, data, config, hooks);
  return single_stage(s, s.hard_label_objective());
}

TakdResult train_takd(const models::Model& teacher, models::Model assistant, models::Model student,
                      const TrainData& data, const TrainConfig& assistant_config, const TrainConfig& student_config) {
  TakdResult out{std::move(assistant), std::move(student), {}, {}};
  if (assistant_config.epochs > 0) {
    TrainResult hop = train_vanilla_kd(std::move(out.assistant), teacher, data, assistant_config);
    out.assistant = std::move(hop.model);
    out.assistant_metrics = std::move(hop.metrics);
  }
  TrainResult hop = train_vanilla_kd(std::move(out.student), out.assistant, data, student_config);
  out.student = std::move(hop.model);
  out.student_metrics = std::move(hop.metrics);
  return out;
}

TakdResult train_takd(const models::Model& teacher, const models::ModelSpec& assistant_spec, models::Model student,
                      const TrainData& data, const TrainConfig& assistant_config, const TrainConfig& student_config) {
  return train_takd(teacher, models::Model(assistant_spec), std::move(student), data, assistant_config,
                    student_config);
}

double evaluate(const models::Model& model, const data::Dataset& dataset, TaskKind task) {
  if (dataset.size() == 0) throw DataError("evaluate: empty dataset");
  if (dataset.task != task) throw InvalidArgument("evaluate: dataset task does not match");
  return Session::metric_from_logits(model.predict(dataset.inputs), dataset, task);
}

}  // namespace trainer
ANNEALKD_END_NAMESPACE
