#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "annealkd/metrics.hpp"
#include "annealkd/model.hpp"
#include "annealkd/precision.hpp"
#include "annealkd/tensor.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace trainer {

/// Snapshot of a model plus the bookkeeping recorded when it was saved.
///
/// File layout (all integers and floats little-endian):
///   8 bytes   magic "AKDCKPT\0"
///   u32       format version
///   u32 + n   spec descriptor (ModelSpec::describe())
///   u64       epoch
///   u8        stage (1 or 2)
///   f64       temperature
///   f64       validation metric
///   u8        scalar width in bytes (4 or 8)
///   u32       parameter count, then per tensor: u32 rank, rank x u64 dims, payload
///   u32       buffer count, same per-tensor encoding
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  models::ModelSpec spec;
  std::vector<Tensor> parameters;
  std::vector<Tensor> buffers;
  std::size_t epoch = 0;
  Stage stage = Stage::One;
  double temperature = 0;
  double metric = 0;
  std::uint32_t format_version = kFormatVersion;

  static Checkpoint capture(const models::Model& model, std::size_t epoch, Stage stage, double temperature,
                            double metric);
  /// Copies parameters and buffers into `model`; shapes must match exactly.
  void restore(models::Model& model) const;
  models::Model to_model() const;

  std::vector<std::uint8_t> serialize() const;
  /// Rejects bad magic, unsupported versions, truncated or over-long input.
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Loads and checks every tensor against the shapes `expected` builds to.
Checkpoint load_checkpoint(const std::filesystem::path& path, const models::ModelSpec& expected);
/// Loads without comparing against a spec.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trainer
ANNEALKD_END_NAMESPACE
