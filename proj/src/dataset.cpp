#include "annealkd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <utility>

#include "annealkd/errors.hpp"
#include "format.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace data {

std::string_view to_string(TaskKind task) {
  return task == TaskKind::Classification ? "classification" : "regression";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view text) {
  if (text == "classification") return TaskKind::Classification;
  if (text == "regression") return TaskKind::Regression;
  throw InvalidArgument("unknown task kind '" + std::string(text) + "' (allowed: classification, regression)");
}

void Dataset::validate() const {
  const std::size_t n = size();
  if (task == TaskKind::Classification) {
    if (labels.size() != n) {
      throw DataError("dataset: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " inputs");
    }
    for (std::size_t label : labels) {
      if (label >= classes) {
        throw DataError("dataset: label " + std::to_string(label) + " outside [0," + std::to_string(classes) + ")");
      }
    }
  } else if (targets.empty() || targets.dim(0) != n) {
    throw DataError("dataset: regression targets do not match " + std::to_string(n) + " inputs");
  }
}

Dataset select(const Dataset& source, std::span<const std::size_t> indices) {
  const std::size_t n = source.size();
  if (indices.empty()) throw DataError("select: empty index set");
  Dataset out;
  out.split = source.split;
  out.task = source.task;
  out.classes = source.classes;
  out.channel_mean = source.channel_mean;
  out.channel_sd = source.channel_sd;

  auto gather = [&](const Tensor& t) {
    const std::size_t row = t.size() / t.dim(0);
    std::vector<Real> values(indices.size() * row);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= n) throw DataError("select: index " + std::to_string(indices[i]) + " out of range");
      std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row,
                  values.begin() + static_cast<std::ptrdiff_t>(i * row));
    }
    Shape shape = t.shape();
    shape[0] = indices.size();
    return Tensor(std::move(shape), std::move(values));
  };

  out.inputs = gather(source.inputs);
  if (!source.targets.empty()) out.targets = gather(source.targets);
  if (!source.labels.empty()) {
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(source.labels[i]);
  }
  return out;
}

double sine_target(double x) {
  constexpr double pi = std::numbers::pi;
  return std::sin(3 * pi * x) + std::sin(6 * pi * x) + std::sin(9 * pi * x);
}

Dataset gen_sine_dataset(const SineOptions& options) {
  if (options.count < 1) throw InvalidArgument("gen_sine_dataset: count must be >= 1");
  if (!(options.x_max > options.x_min)) throw InvalidArgument("gen_sine_dataset: empty x range");
  if (!(options.noise_sd >= 0)) throw InvalidArgument("gen_sine_dataset: noise_sd must be non-negative");
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> xs(options.x_min, options.x_max);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Real> x(options.count), y(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    const double xi = xs(rng);
    const double eps = noise(rng);
    x[i] = static_cast<Real>(xi);
    y[i] = static_cast<Real>(sine_target(static_cast<double>(x[i])) + options.noise_sd * eps);
  }
  Dataset d;
  d.inputs = Tensor(Shape{options.count, 1}, std::move(x));
  d.targets = Tensor(Shape{options.count, 1}, std::move(y));
  d.split = options.split;
  d.task = TaskKind::Regression;
  return d;
}

Dataset sine_grid(std::size_t count, double x_min, double x_max) {
  if (count < 2) throw InvalidArgument("sine_grid: count must be >= 2");
  std::vector<Real> x(count), y(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double xi = (x_min * static_cast<double>(count - 1 - i) + x_max * static_cast<double>(i)) /
                      static_cast<double>(count - 1);
    x[i] = static_cast<Real>(xi);
    y[i] = static_cast<Real>(sine_target(static_cast<double>(x[i])));
  }
  Dataset d;
  d.inputs = Tensor(Shape{count, 1}, std::move(x));
  d.targets = Tensor(Shape{count, 1}, std::move(y));
  d.split = Split::Test;
  d.task = TaskKind::Regression;
  return d;
}

std::string sine_csv(const Dataset& dataset) {
  if (dataset.task != TaskKind::Regression || dataset.inputs.rank() != 2 || dataset.inputs.dim(1) != 1 ||
      dataset.targets.rank() != 2 || dataset.targets.dim(1) != 1) {
    throw InvalidArgument("sine_csv: expects a one-dimensional regression dataset");
  }
  std::string out = "x,y\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out += detail::format_double(dataset.inputs[i]) + "," + detail::format_double(dataset.targets[i]) + "\n";
  }
  return out;
}

Dataset gen_blob_classification(const BlobOptions& options) {
  if (options.classes < 2) throw InvalidArgument("gen_blob_classification: classes must be >= 2");
  if (options.per_class < 1) throw InvalidArgument("gen_blob_classification: per_class must be >= 1");
  if (options.dim < 1) throw InvalidArgument("gen_blob_classification: dim must be >= 1");
  if (!(options.sd >= 0)) throw InvalidArgument("gen_blob_classification: sd must be non-negative");
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> centers;
  if (options.centers) {
    if (options.centers->size() != options.classes * options.dim) {
      throw InvalidArgument("gen_blob_classification: centers must hold classes x dim values");
    }
    centers = *options.centers;
  } else {
    centers.resize(options.classes * options.dim);
    for (double& c : centers) c = options.center_scale * normal(rng);
  }

  const std::size_t n = options.classes * options.per_class;
  std::vector<Real> x(n * options.dim);
  std::vector<std::size_t> labels(n);
  for (std::size_t c = 0; c < options.classes; ++c) {
    for (std::size_t k = 0; k < options.per_class; ++k) {
      const std::size_t row = c * options.per_class + k;
      labels[row] = c;
      for (std::size_t d = 0; d < options.dim; ++d) {
        x[row * options.dim + d] = static_cast<Real>(centers[c * options.dim + d] + options.sd * normal(rng));
      }
    }
  }
  Dataset out;
  out.inputs = Tensor(Shape{n, options.dim}, std::move(x));
  out.labels = std::move(labels);
  out.split = options.split;
  out.task = TaskKind::Classification;
  out.classes = options.classes;
  return out;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return splitmix(splitmix(a) ^ (b + 0x632be59bd9b4e019ULL));
}

std::vector<std::size_t> shuffled_indices(std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Explicit Fisher-Yates so the permutation does not depend on the
  // standard library's shuffle implementation.
  std::mt19937_64 rng(seed);
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<Batch> batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t epoch_seed) {
  if (batch_size < 1) throw InvalidArgument("batches: batch size must be >= 1");
  const std::size_t n = dataset.size();
  const auto order = shuffled_indices(n, epoch_seed);
  std::vector<Batch> out;
  out.reserve((n + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    std::span<const std::size_t> idx(order.data() + start, count);
    Dataset part = select(dataset, idx);
    Batch b;
    b.inputs = std::move(part.inputs);
    b.labels = std::move(part.labels);
    b.targets = std::move(part.targets);
    b.indices.assign(idx.begin(), idx.end());
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace data
ANNEALKD_END_NAMESPACE
