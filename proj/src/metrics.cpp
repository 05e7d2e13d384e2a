#include "annealkd/metrics.hpp"

#include <fstream>
#include <sstream>

#include "annealkd/errors.hpp"
#include "format.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace trainer {

void MetricsRecord::append(const MetricsRow& row) {
  if (!rows.empty()) {
    const MetricsRow& last = rows.back();
    const bool ordered = static_cast<int>(row.stage) > static_cast<int>(last.stage) ||
                         (row.stage == last.stage && row.epoch > last.epoch);
    if (!ordered || row.epoch <= last.epoch) {
      throw InvalidArgument("metrics: rows must be strictly ordered by (stage, epoch)");
    }
  }
  rows.push_back(row);
}

std::vector<MetricsRow> MetricsRecord::stage_rows(Stage stage) const {
  std::vector<MetricsRow> out;
  for (const MetricsRow& r : rows) {
    if (r.stage == stage) out.push_back(r);
  }
  return out;
}

std::string MetricsRecord::to_csv() const {
  std::string out = std::string(kCsvHeader) + "\n";
  using detail::format_double;
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(static_cast<int>(r.stage)) + "," +
           format_double(r.temperature) + "," + format_double(r.train_loss) + "," + format_double(r.val_loss) + "," +
           format_double(r.val_metric) + "," + format_double(r.seconds) + "\n";
  }
  return out;
}

MetricsRecord MetricsRecord::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw InvalidArgument("metrics csv: missing or wrong header");
  MetricsRecord record;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    int stage = 0;
    if (std::sscanf(line.c_str(), "%zu,%d,%lf,%lf,%lf,%lf,%lf", &r.epoch, &stage, &r.temperature, &r.train_loss,
                    &r.val_loss, &r.val_metric, &r.seconds) != 7 ||
        (stage != 1 && stage != 2)) {
      throw InvalidArgument("metrics csv: malformed row '" + line + "'");
    }
    r.stage = static_cast<Stage>(stage);
    record.append(r);
  }
  return record;
}

void MetricsRecord::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write metrics file " + path.string());
  out << to_csv();
  if (!out) throw Error("failed writing metrics file " + path.string());
}

}  // namespace trainer
ANNEALKD_END_NAMESPACE
