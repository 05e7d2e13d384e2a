#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "annealkd/precision.hpp"
#include "annealkd/tensor.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace data {

enum class TaskKind { Classification, Regression };
enum class Split { Train, Validation, Test };

std::string_view to_string(TaskKind task);
std::string_view to_string(Split split);
TaskKind parse_task(std::string_view text);

/// Batch-major samples. Classification sets fill `labels`; regression sets
/// fill `targets` with shape (count, output_dim).
struct Dataset {
  Tensor inputs;
  std::vector<std::size_t> labels;
  Tensor targets;
  Split split = Split::Train;
  TaskKind task = TaskKind::Classification;
  std::size_t classes = 0;
  /// Per-channel standardization applied to image inputs (empty otherwise).
  std::vector<Real> channel_mean;
  std::vector<Real> channel_sd;

  std::size_t size() const noexcept { return inputs.empty() ? 0 : inputs.dim(0); }
  /// Throws DataError when lengths disagree or a label is out of range.
  void validate() const;
};

/// Rows of `source` selected by `indices`, in that order.
Dataset select(const Dataset& source, std::span<const std::size_t> indices);

/// f(x) = sin(3 pi x) + sin(6 pi x) + sin(9 pi x)
double sine_target(double x);

struct SineOptions {
  std::size_t count = 80;
  std::uint64_t seed = 0;
  double noise_sd = 0.05;
  double x_min = 0.0;
  double x_max = 1.0;
  Split split = Split::Train;
};

/// x ~ U[x_min, x_max), y = f(x) + N(0, noise_sd^2).
Dataset gen_sine_dataset(const SineOptions& options);

/// `count` evenly spaced points over [x_min, x_max] with noiseless targets.
Dataset sine_grid(std::size_t count, double x_min = 0.0, double x_max = 1.0);

/// Writes `x,y` rows for a one-dimensional regression set.
std::string sine_csv(const Dataset& dataset);

struct BlobOptions {
  std::size_t classes = 2;
  std::size_t per_class = 50;
  std::size_t dim = 2;
  std::uint64_t seed = 0;
  double center_scale = 5.0;  // centers ~ N(0, center_scale^2 I)
  double sd = 1.0;
  /// Explicit class centers (classes x dim, row-major); overrides the seeded draw.
  std::optional<std::vector<double>> centers;
  Split split = Split::Train;
};

/// Gaussian clusters around per-class centers, samples ordered by class.
Dataset gen_blob_classification(const BlobOptions& options);

struct Batch {
  Tensor inputs;
  std::vector<std::size_t> labels;
  Tensor targets;
  std::vector<std::size_t> indices;  // rows of the source dataset
};

/// Seeded permutation of [0, count).
std::vector<std::size_t> shuffled_indices(std::size_t count, std::uint64_t seed);

/// Shuffles with `epoch_seed` and cuts consecutive batches; the last batch
/// may be partial.
std::vector<Batch> batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t epoch_seed);

/// Deterministic 64-bit seed derivation (splitmix64 over both words).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace data
ANNEALKD_END_NAMESPACE
