#pragma once

// Reduced CIFAR-10 comparison of scratch, vanilla KD and annealing KD for a
// plain-CNN teacher/student pair.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "annealkd/cifar.hpp"
#include "annealkd/model.hpp"
#include "annealkd/runner.hpp"
#include "annealkd/trainer.hpp"

namespace cifar_check {

using namespace annealkd;

struct Params {
  std::size_t subset = 5000;
  std::size_t validation = 1000;
  std::optional<std::size_t> test_count;
  std::size_t epochs = 30;
  std::size_t teacher_epochs = 30;
  int tau_max = 10;
  int k = 2;
  int n = 10;
  int teacher_depth = 10;
  int student_depth = 2;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  autograd::SgdOptions optimizer{0.01, 0.9, 5e-4};
  std::size_t batch_size = 128;
};

struct Result {
  double teacher = 0;
  std::vector<double> scratch, kd, annealing;
  double median_scratch = 0, median_kd = 0, median_annealing = 0;
};

inline trainer::TrainConfig config(const Params& p, std::uint64_t seed, std::size_t epochs, trainer::Schedule s) {
  trainer::TrainConfig c;
  c.optimizer = p.optimizer;
  c.batch_size = p.batch_size;
  c.seed = seed;
  c.epochs = epochs;
  c.schedule = std::move(s);
  c.task = data::TaskKind::Classification;
  return c;
}

inline Result run(const std::filesystem::path& dir, const Params& p) {
  data::CifarOptions o;
  o.validation_count = p.validation;
  o.subset = data::CifarSubset{p.subset, 1};
  o.test_count = p.test_count;
  const data::CifarSplits d = data::load_cifar(dir, data::CifarVariant::Cifar10, o);
  const trainer::TrainData td{d.train, d.validation};
  const Shape input{3, 32, 32};

  const models::Model teacher =
      trainer::train_scratch(models::Model(models::ModelSpec::plain_cnn(p.teacher_depth, 10, 1000, input)), td,
                             config(p, 1000, p.teacher_epochs, trainer::ScratchSchedule{}))
          .model;
  Result r;
  r.teacher = trainer::evaluate(teacher, d.test, data::TaskKind::Classification);

  distill::AnnealingSchedule schedule;
  schedule.tau_max = p.tau_max;
  schedule.epochs_per_temperature = p.k;
  schedule.fine_tune_epochs = p.n;
  for (std::uint64_t seed : p.seeds) {
    const models::ModelSpec spec = models::ModelSpec::plain_cnn(p.student_depth, 10, seed, input);
    auto score = [&](const models::Model& m) { return trainer::evaluate(m, d.test, data::TaskKind::Classification); };
    r.scratch.push_back(score(
        trainer::train_scratch(models::Model(spec), td, config(p, seed, p.epochs, trainer::ScratchSchedule{})).model));
    r.kd.push_back(score(trainer::train_vanilla_kd(models::Model(spec), teacher, td,
                                                   config(p, seed, p.epochs, distill::VanillaKDConfig{1.0, 0.5}))
                             .model));
    r.annealing.push_back(
        score(trainer::train_annealing_kd(models::Model(spec), teacher, td, config(p, seed, 0, schedule)).model));
  }
  r.median_scratch = cli::median(r.scratch);
  r.median_kd = cli::median(r.kd);
  r.median_annealing = cli::median(r.annealing);
  return r;
}

}  // namespace cifar_check
