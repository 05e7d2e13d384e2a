#include "annealkd/cifar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "annealkd/errors.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace data {

std::size_t cifar_record_bytes(CifarVariant variant) {
  return (variant == CifarVariant::Cifar10 ? 1 : 2) + kCifarPixels;
}

std::size_t cifar_classes(CifarVariant variant) { return variant == CifarVariant::Cifar10 ? 10 : 100; }

std::vector<CifarRecord> parse_cifar_records(std::span<const std::uint8_t> bytes, CifarVariant variant,
                                             const std::string& name) {
  const std::size_t record = cifar_record_bytes(variant);
  if (bytes.empty() || bytes.size() % record != 0) {
    throw DataError(name + ": expected a positive multiple of " + std::to_string(record) + " bytes, got " +
                    std::to_string(bytes.size()));
  }
  const std::size_t classes = cifar_classes(variant);
  const std::size_t count = bytes.size() / record;
  std::vector<CifarRecord> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* p = bytes.data() + i * record;
    CifarRecord& r = out[i];
    if (variant == CifarVariant::Cifar100) {
      r.coarse_label = *p++;
      if (r.coarse_label >= 20) {
        throw DataError(name + ": record " + std::to_string(i) + " has coarse label " + std::to_string(r.coarse_label));
      }
    }
    r.label = *p++;
    if (r.label >= classes) {
      throw DataError(name + ": record " + std::to_string(i) + " has label " + std::to_string(r.label) +
                      ", expected < " + std::to_string(classes));
    }
    std::copy_n(p, kCifarPixels, r.pixels.begin());
  }
  return out;
}

std::vector<CifarRecord> read_cifar_file(const std::filesystem::path& path, CifarVariant variant) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(path.string() + ": cannot open file (expected a multiple of " +
                    std::to_string(cifar_record_bytes(variant)) + " bytes)");
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_cifar_records(bytes, variant, path.string());
}

std::vector<std::uint8_t> encode_cifar_records(std::span<const CifarRecord> records, CifarVariant variant) {
  std::vector<std::uint8_t> out;
  out.reserve(records.size() * cifar_record_bytes(variant));
  for (const CifarRecord& r : records) {
    if (variant == CifarVariant::Cifar100) out.push_back(r.coarse_label);
    out.push_back(r.label);
    out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  }
  return out;
}

std::vector<std::string> cifar_train_files(CifarVariant variant) {
  if (variant == CifarVariant::Cifar100) return {"train.bin"};
  return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"};
}

std::string cifar_test_file(CifarVariant variant) {
  return variant == CifarVariant::Cifar100 ? "test.bin" : "test_batch.bin";
}

std::filesystem::path resolve_cifar_dir(const std::filesystem::path& dir, CifarVariant variant) {
  const std::string probe = cifar_test_file(variant);
  const std::filesystem::path nested =
      dir / (variant == CifarVariant::Cifar10 ? "cifar-10-batches-bin" : "cifar-100-binary");
  if (!std::filesystem::exists(dir / probe) && std::filesystem::exists(nested / probe)) return nested;
  return dir;
}

Dataset cifar_to_dataset(std::span<const CifarRecord> records, CifarVariant variant, Split split) {
  if (records.empty()) throw DataError("cifar: no records");
  std::vector<Real> pixels(records.size() * kCifarPixels);
  std::vector<std::size_t> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    labels[i] = records[i].label;
    for (std::size_t j = 0; j < kCifarPixels; ++j) {
      pixels[i * kCifarPixels + j] = static_cast<Real>(records[i].pixels[j]) / Real(255);
    }
  }
  Dataset d;
  d.inputs = Tensor(Shape{records.size(), 3, 32, 32}, std::move(pixels));
  d.labels = std::move(labels);
  d.split = split;
  d.task = TaskKind::Classification;
  d.classes = cifar_classes(variant);
  return d;
}

std::vector<std::size_t> stratified_subset(std::span<const std::size_t> labels, std::size_t classes,
                                           std::size_t count, std::uint64_t seed) {
  if (count == 0 || count > labels.size()) {
    throw InvalidArgument("stratified_subset: count " + std::to_string(count) + " not in [1," +
                          std::to_string(labels.size()) + "]");
  }
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(labels[i]).push_back(i);

  // Largest-remainder apportionment of `count` across classes.
  std::vector<std::size_t> quota(classes);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double exact = static_cast<double>(count) * static_cast<double>(by_class[c].size()) /
                         static_cast<double>(labels.size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - static_cast<double>(quota[c]), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < count; ++i, ++assigned) ++quota[remainders[i % classes].second];

  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t c = 0; c < classes; ++c) {
    const auto order = shuffled_indices(by_class[c].size(), mix_seed(seed, c));
    for (std::size_t k = 0; k < quota[c]; ++k) out.push_back(by_class[c][order[k]]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void standardize_channels(Dataset& train, Dataset& validation, Dataset& test) {
  const Tensor& x = train.inputs;
  if (x.rank() != 4) throw InvalidArgument("standardize_channels: expects (N,C,H,W) images");
  const std::size_t n = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<Real> mean(channels), sd(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Real* p = x.data().data() + (i * channels + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) total += p[j];
    }
    const double mu = total / static_cast<double>(n * plane);
    double sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Real* p = x.data().data() + (i * channels + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mu) * (p[j] - mu);
    }
    const double sigma = std::sqrt(sq / static_cast<double>(n * plane));
    mean[c] = static_cast<Real>(mu);
    sd[c] = static_cast<Real>(sigma > 0 ? sigma : 1.0);
  }
  for (Dataset* d : {&train, &validation, &test}) {
    if (d->inputs.empty()) continue;
    const std::size_t rows = d->inputs.dim(0);
    auto v = d->inputs.data();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t c = 0; c < channels; ++c) {
        Real* p = v.data() + (i * channels + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) p[j] = (p[j] - mean[c]) / sd[c];
      }
    }
    d->channel_mean = mean;
    d->channel_sd = sd;
  }
}

void augment_images(Tensor& images, std::mt19937_64& rng) {
  if (images.rank() != 4) throw InvalidArgument("augment_images: expects (N,C,H,W) images");
  constexpr std::ptrdiff_t pad = 4;
  const std::size_t n = images.dim(0), channels = images.dim(1), h = images.dim(2), w = images.dim(3);
  std::vector<Real> plane(h * w);
  std::uniform_int_distribution<int> shift(-static_cast<int>(pad), static_cast<int>(pad));
  std::bernoulli_distribution flip(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const std::ptrdiff_t dy = shift(rng), dx = shift(rng);
    const bool mirror = flip(rng);
    for (std::size_t c = 0; c < channels; ++c) {
      Real* p = images.data().data() + (i * channels + c) * h * w;
      std::copy_n(p, h * w, plane.begin());
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          const std::size_t xx = mirror ? w - 1 - x : x;
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx) + dx;
          const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                              sx < static_cast<std::ptrdiff_t>(w);
          p[y * w + x] = inside ? plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] : Real(0);
        }
      }
    }
  }
}

CifarSplits load_cifar(const std::filesystem::path& dir, CifarVariant variant, const CifarOptions& options) {
  const auto root = resolve_cifar_dir(dir, variant);
  std::vector<CifarRecord> train_records;
  for (const std::string& file : cifar_train_files(variant)) {
    auto part = read_cifar_file(root / file, variant);
    train_records.insert(train_records.end(), part.begin(), part.end());
  }
  auto test_records = read_cifar_file(root / cifar_test_file(variant), variant);
  if (options.test_count && *options.test_count < test_records.size()) test_records.resize(*options.test_count);

  if (options.validation_count >= train_records.size()) {
    throw InvalidArgument("load_cifar: validation count " + std::to_string(options.validation_count) +
                          " leaves no training rows");
  }
  const auto order = shuffled_indices(train_records.size(), options.split_seed);
  const std::size_t train_count = train_records.size() - options.validation_count;
  std::vector<CifarRecord> train_part, val_part;
  train_part.reserve(train_count);
  for (std::size_t i = 0; i < train_count; ++i) train_part.push_back(train_records[order[i]]);
  for (std::size_t i = train_count; i < order.size(); ++i) val_part.push_back(train_records[order[i]]);

  if (options.subset) {
    std::vector<std::size_t> labels(train_part.size());
    for (std::size_t i = 0; i < train_part.size(); ++i) labels[i] = train_part[i].label;
    const auto keep = stratified_subset(labels, cifar_classes(variant), options.subset->count, options.subset->seed);
    std::vector<CifarRecord> picked;
    picked.reserve(keep.size());
    for (std::size_t i : keep) picked.push_back(train_part[i]);
    train_part = std::move(picked);
  }

  CifarSplits out;
  out.train = cifar_to_dataset(train_part, variant, Split::Train);
  if (!val_part.empty()) out.validation = cifar_to_dataset(val_part, variant, Split::Validation);
  out.test = cifar_to_dataset(test_records, variant, Split::Test);
  standardize_channels(out.train, out.validation, out.test);
  return out;
}

}  // namespace data
ANNEALKD_END_NAMESPACE
