#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "annealkd/dataset.hpp"
#include "annealkd/precision.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace data {

enum class CifarVariant { Cifar10 = 10, Cifar100 = 100 };

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;

/// One binary record. CIFAR-10 records carry only `label`; CIFAR-100 records
/// carry a coarse label byte followed by the fine `label` byte. Pixels are the
/// red, green and blue 32x32 planes in that order.
struct CifarRecord {
  std::uint8_t coarse_label = 0;
  std::uint8_t label = 0;
  std::array<std::uint8_t, kCifarPixels> pixels{};

  friend bool operator==(const CifarRecord&, const CifarRecord&) = default;
};

std::size_t cifar_record_bytes(CifarVariant variant);
std::size_t cifar_classes(CifarVariant variant);

/// Parses a whole batch file image. `name` is used in diagnostics.
std::vector<CifarRecord> parse_cifar_records(std::span<const std::uint8_t> bytes, CifarVariant variant,
                                             const std::string& name);
std::vector<CifarRecord> read_cifar_file(const std::filesystem::path& path, CifarVariant variant);
std::vector<std::uint8_t> encode_cifar_records(std::span<const CifarRecord> records, CifarVariant variant);

/// Standard batch file names: training files first, then the test file.
std::vector<std::string> cifar_train_files(CifarVariant variant);
std::string cifar_test_file(CifarVariant variant);

/// Resolves the directory holding the batch files, also looking inside the
/// archive's usual top-level folder.
std::filesystem::path resolve_cifar_dir(const std::filesystem::path& dir, CifarVariant variant);

struct CifarSubset {
  std::size_t count = 0;
  std::uint64_t seed = 0;
};

struct CifarOptions {
  /// Validation rows are the last `validation_count` of the seeded shuffle of
  /// the training files.
  std::size_t validation_count = 5000;
  std::uint64_t split_seed = 0;
  /// Optional stratified subset of the remaining training rows.
  std::optional<CifarSubset> subset;
  /// Optional cap on test rows (first rows of the test file).
  std::optional<std::size_t> test_count;
};

struct CifarSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

CifarSplits load_cifar(const std::filesystem::path& dir, CifarVariant variant, const CifarOptions& options = {});

/// Image tensor (N,3,32,32) scaled to [0,1] from raw records.
Dataset cifar_to_dataset(std::span<const CifarRecord> records, CifarVariant variant, Split split);

/// Per-class proportional sample of `count` rows, drawn without replacement.
std::vector<std::size_t> stratified_subset(std::span<const std::size_t> labels, std::size_t classes,
                                           std::size_t count, std::uint64_t seed);

/// Computes per-channel mean/sd on `train` and applies them to all three
/// splits, storing the statistics on each dataset.
void standardize_channels(Dataset& train, Dataset& validation, Dataset& test);

/// Pad-4 random crop back to the original size plus random horizontal flip,
/// applied in place to an (N,C,H,W) batch.
void augment_images(Tensor& images, std::mt19937_64& rng);

}  // namespace data
ANNEALKD_END_NAMESPACE
