#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "annealkd/precision.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace trainer {

enum class Stage { One = 1, Two = 2 };

/// One evaluated epoch. `temperature` is the annealing temperature in stage
/// one, the KD temperature for vanilla KD, and 0 for hard-label training.
struct MetricsRow {
  std::size_t epoch = 0;  // global, 1-based
  Stage stage = Stage::One;
  double temperature = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_metric = 0;
  double seconds = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct MetricsRecord {
  std::vector<MetricsRow> rows;

  static constexpr const char* kCsvHeader = "epoch,stage,temperature,train_loss,val_loss,val_metric,seconds";

  /// Appends a row; rows must stay strictly ordered by (stage, epoch).
  void append(const MetricsRow& row);
  std::vector<MetricsRow> stage_rows(Stage stage) const;

  std::string to_csv() const;
  static MetricsRecord from_csv(const std::string& text);
  void write_csv(const std::filesystem::path& path) const;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

}  // namespace trainer
ANNEALKD_END_NAMESPACE
