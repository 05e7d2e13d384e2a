#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "annealkd/config.hpp"
#include "annealkd/dataset.hpp"
#include "annealkd/precision.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace cli {

inline constexpr const char* kDataDirEnv = "ANNEALKD_DATA_DIR";
inline constexpr const char* kSummaryHeader = "seed,method,task,final_metric,best_metric,seconds";

struct RunOptions {
  std::filesystem::path out;
  bool force = false;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::size_t threads = 1;
  /// Overrides [data] dir for image sources.
  std::optional<std::filesystem::path> data_dir;
};

struct ExperimentData {
  data::Dataset train;
  data::Dataset validation;
  data::Dataset test;
};

ExperimentData load_data(const ExperimentConfig& config, const std::optional<std::filesystem::path>& data_dir);

/// Output directory: --out if given, else [experiment] output.
std::filesystem::path output_dir(const ExperimentConfig& config, const RunOptions& options);

/// Trains the teacher (once) and every seed. Layout under the output dir:
///   config.cfg, summary.csv, teacher/{teacher.ckpt,metrics.csv},
///   seed_<s>/{metrics.csv,student.ckpt[,ta.ckpt,ta_metrics.csv,stage1_T<t>.ckpt]}
/// A seed that fails leaves seed_<s>/FAILED with the diagnostic and makes the
/// return value nonzero; remaining seeds still run.
int run_train(const ExperimentConfig& config, const RunOptions& options, std::ostream& log);

/// Prints `seed,test_metric` for each trained seed.
void run_eval(const ExperimentConfig& config, const RunOptions& options, std::ostream& out);

/// Writes seed_<s>/landscape_T<t>.txt grid files and landscape.csv with the
/// sharpness of each 1-D slice.
void run_landscape(const ExperimentConfig& config, const RunOptions& options, std::ostream& out);

struct SummaryRow {
  std::uint64_t seed = 0;
  std::string method;
  std::string task;
  double final_metric = 0;
  double best_metric = 0;
  double seconds = 0;
};

std::vector<SummaryRow> read_summary(const std::filesystem::path& path);
std::string render_summary(const std::vector<SummaryRow>& rows);

/// Per-method medians and per-seed values, best method first.
std::string compare(const std::vector<std::filesystem::path>& summaries);

double median(std::vector<double> values);

}  // namespace cli
ANNEALKD_END_NAMESPACE
