#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "annealkd/dataset.hpp"
#include "annealkd/distill.hpp"
#include "annealkd/landscape.hpp"
#include "annealkd/model.hpp"
#include "annealkd/optim.hpp"
#include "annealkd/precision.hpp"
#include "annealkd/trainer.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace cli {

enum class Method { Scratch, Kd, Takd, AnnealingKd };
enum class DataSource { Sine, Blobs, Cifar10, Cifar100 };

std::string_view to_string(Method method);
std::string_view to_string(DataSource source);
Method parse_method(std::string_view text);
DataSource parse_source(std::string_view text);

struct DataSection {
  DataSource source = DataSource::Sine;
  std::uint64_t seed = 0;
  // sine
  std::size_t train_count = 80;
  std::size_t val_count = 40;
  std::size_t test_count = 200;  // sine: grid points; cifar: cap on test rows (0 = all)
  double noise_sd = 0.05;
  bool test_against_teacher = false;  // sine: held-out targets are teacher outputs
  // blobs
  std::size_t classes = 3;
  std::size_t per_class = 100;
  std::size_t dim = 2;
  double sd = 1.0;
  // cifar
  std::string dir;
  std::size_t subset = 0;  // stratified training subset size (0 = all)
  std::size_t validation = 5000;

  friend bool operator==(const DataSection&, const DataSection&) = default;
};

/// Architecture keys; input shape and output size come from the data.
struct ModelSection {
  models::Family family = models::Family::Mlp;
  std::vector<std::size_t> hidden;  // MLP hidden widths
  int depth = 0;
  models::Activation activation = models::Activation::Relu;
  double first_layer_scale = 0;
  std::uint64_t seed = 0;  // teacher only; students and assistants use the run seed
  std::string checkpoint;  // teacher only: load instead of training

  friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct TrainSection {
  autograd::SgdOptions optimizer;
  std::size_t batch_size = 128;
  std::size_t epochs = 0;
  trainer::LrSchedule lr_schedule = trainer::LrSchedule::Constant;
  bool augment = false;
  bool record_wall_clock = false;
  std::uint64_t seed = 0;  // teacher only

  friend bool operator==(const TrainSection&, const TrainSection&) = default;
};

struct AnnealingSection {
  distill::AnnealingSchedule schedule;
  bool save_temperature_checkpoints = false;

  friend bool operator==(const AnnealingSection&, const AnnealingSection&) = default;
};

struct LandscapeSection {
  landscape::GridSpec grid;
  landscape::Normalization normalization = landscape::Normalization::Filter;
  bool two_dimensional = false;
  std::vector<int> temperatures;  // empty: tau_max and 1

  friend bool operator==(const LandscapeSection& a, const LandscapeSection& b) {
    return a.grid.lo == b.grid.lo && a.grid.hi == b.grid.hi && a.grid.steps == b.grid.steps &&
           a.normalization == b.normalization && a.two_dimensional == b.two_dimensional &&
           a.temperatures == b.temperatures;
  }
};

struct ExperimentConfig {
  Method method = Method::Scratch;
  std::vector<std::uint64_t> seeds{0};
  std::string output;  // default output directory, overridable with --out
  DataSection data;
  std::optional<ModelSection> teacher;
  std::optional<TrainSection> teacher_train;
  std::optional<ModelSection> ta;
  std::optional<TrainSection> ta_train;
  ModelSection student;
  TrainSection train;
  std::optional<distill::VanillaKDConfig> kd;
  std::optional<AnnealingSection> annealing;
  std::optional<LandscapeSection> landscape;

  data::TaskKind task() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses the line-oriented format:
///
///   # comment
///   [section]
///   key = value
///
/// Unknown sections or keys, duplicates, malformed values and missing
/// required keys raise ConfigError naming the line.
ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Canonical text form; parse_config_text(render(c)) == c.
std::string render(const ExperimentConfig& config);

/// Builds concrete model specs and train configs for one run seed.
models::ModelSpec make_spec(const ModelSection& section, const Shape& input_shape, std::size_t outputs,
                            std::uint64_t seed);
trainer::TrainConfig make_train_config(const TrainSection& section, data::TaskKind task, std::uint64_t seed,
                                       trainer::Schedule schedule);

}  // namespace cli
ANNEALKD_END_NAMESPACE
