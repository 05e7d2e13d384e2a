#include "annealkd/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "annealkd/checkpoint.hpp"
#include "annealkd/cifar.hpp"
#include "annealkd/errors.hpp"
#include "annealkd/landscape.hpp"
#include "annealkd/trainer.hpp"
#include "format.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace cli {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string fmt(double v) { return detail::format_double(v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed_" + std::to_string(seed)); }

std::vector<std::uint64_t> run_seeds(const ExperimentConfig& config, const RunOptions& options) {
  return options.seeds ? *options.seeds : config.seeds;
}

std::size_t output_count(const ExperimentData& d) {
  return d.train.task == data::TaskKind::Regression ? d.train.targets.dim(1) : d.train.classes;
}

Shape input_shape(const ExperimentData& d) {
  const Shape& s = d.train.inputs.shape();
  return Shape(s.begin() + 1, s.end());
}

models::Model obtain_teacher(const ExperimentConfig& config, const ExperimentData& d, const fs::path& out,
                             std::ostream* log) {
  const ModelSection& section = *config.teacher;
  const models::ModelSpec spec = make_spec(section, input_shape(d), output_count(d), section.seed);
  if (!section.checkpoint.empty()) return trainer::load_checkpoint(section.checkpoint, spec).to_model();

  const fs::path saved = out / "teacher" / "teacher.ckpt";
  if (!log) return trainer::load_checkpoint(saved, spec).to_model();

  fs::create_directories(out / "teacher");
  const TrainSection& t = *config.teacher_train;
  const auto cfg = make_train_config(t, config.task(), t.seed, trainer::ScratchSchedule{});
  *log << "teacher: training " << spec.describe() << " for " << t.epochs << " epochs\n";
  trainer::TrainResult result = trainer::train_scratch(models::Model(spec), {d.train, d.validation}, cfg);
  result.metrics.write_csv(out / "teacher" / "metrics.csv");
  trainer::save_checkpoint(result.best, saved);
  *log << "teacher: test metric " << fmt(trainer::evaluate(result.model, d.test, config.task())) << "\n";
  return std::move(result.model);
}

/// Sine runs can score students against the teacher's function instead of
/// the ground truth.
void retarget_test(const ExperimentConfig& config, ExperimentData& d, const models::Model* teacher) {
  if (config.data.test_against_teacher) d.test.targets = teacher->predict(d.test.inputs);
}

double best_val_metric(const trainer::TrainResult& r) {
  for (const auto& row : r.metrics.rows) {
    if (row.epoch == r.best.epoch) return row.val_metric;
  }
  return r.best.metric;
}

SummaryRow train_seed(const ExperimentConfig& config, const ExperimentData& d, const models::Model* teacher,
                      std::uint64_t seed, const fs::path& dir) {
  const auto start = Clock::now();
  const data::TaskKind task = config.task();
  const Shape shape = input_shape(d);
  const std::size_t outputs = output_count(d);
  models::Model student(make_spec(config.student, shape, outputs, seed));
  const trainer::TrainData td{d.train, d.validation};

  trainer::TrainResult result{student, {}, {}};
  switch (config.method) {
    case Method::Scratch:
      result = trainer::train_scratch(std::move(student), td,
                                      make_train_config(config.train, task, seed, trainer::ScratchSchedule{}));
      break;
    case Method::Kd:
      result = trainer::train_vanilla_kd(std::move(student), *teacher, td,
                                         make_train_config(config.train, task, seed, *config.kd));
      break;
    case Method::Takd: {
      const auto ta_cfg = make_train_config(*config.ta_train, task, seed, *config.kd);
      models::Model assistant(make_spec(*config.ta, shape, outputs, seed));
      if (ta_cfg.epochs > 0) {
        trainer::TrainResult hop = trainer::train_vanilla_kd(std::move(assistant), *teacher, td, ta_cfg);
        hop.metrics.write_csv(dir / "ta_metrics.csv");
        trainer::save_checkpoint(hop.best, dir / "ta.ckpt");
        assistant = std::move(hop.model);
      }
      result = trainer::train_vanilla_kd(std::move(student), assistant, td,
                                         make_train_config(config.train, task, seed, *config.kd));
      break;
    }
    case Method::AnnealingKd: {
      trainer::TrainHooks hooks;
      if (config.annealing->save_temperature_checkpoints) {
        hooks.on_temperature_end = [&dir](int t, const models::Model& m) {
          trainer::save_checkpoint(trainer::Checkpoint::capture(m, 0, trainer::Stage::One, t, 0),
                                   dir / ("stage1_T" + std::to_string(t) + ".ckpt"));
        };
      }
      result = trainer::train_annealing_kd(std::move(student), *teacher, td,
                                           make_train_config(config.train, task, seed, config.annealing->schedule),
                                           hooks);
      break;
    }
  }
  result.metrics.write_csv(dir / "metrics.csv");
  trainer::save_checkpoint(result.best, dir / "student.ckpt");

  SummaryRow row;
  row.seed = seed;
  row.method = std::string(to_string(config.method));
  row.task = std::string(data::to_string(task));
  row.final_metric = trainer::evaluate(result.model, d.test, task);
  row.best_metric = best_val_metric(result);
  if (config.train.record_wall_clock) row.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return row;
}

std::string csv_field(std::string_view line, std::size_t index, std::size_t line_no, const fs::path& path) {
  std::size_t start = 0;
  for (std::size_t i = 0; i < index; ++i) {
    start = line.find(',', start);
    if (start == std::string_view::npos) throw DataError(path.string() + ":" + std::to_string(line_no) + ": too few fields");
    ++start;
  }
  return std::string(line.substr(start, line.find(',', start) - start));
}

double to_double(const std::string& s, std::size_t line_no, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
}

}  // namespace

ExperimentData load_data(const ExperimentConfig& config, const std::optional<fs::path>& data_dir) {
  const DataSection& s = config.data;
  ExperimentData d;
  switch (s.source) {
    case DataSource::Sine: {
      data::SineOptions o;
      o.noise_sd = s.noise_sd;
      o.count = s.train_count;
      o.seed = s.seed;
      d.train = data::gen_sine_dataset(o);
      o.count = s.val_count;
      o.seed = data::mix_seed(s.seed, 1);
      o.split = data::Split::Validation;
      d.validation = data::gen_sine_dataset(o);
      d.test = data::sine_grid(s.test_count);
      break;
    }
    case DataSource::Blobs: {
      data::BlobOptions o;
      o.classes = s.classes;
      o.per_class = s.per_class;
      o.dim = s.dim;
      o.sd = s.sd;
      o.seed = s.seed;
      d.train = data::gen_blob_classification(o);
      std::vector<double> centers(s.classes * s.dim);
      {
        // Same draw order as gen_blob_classification's seeded centers.
        std::mt19937_64 rng(s.seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& c : centers) c = o.center_scale * normal(rng);
      }
      o.centers = centers;
      o.seed = data::mix_seed(s.seed, 1);
      o.split = data::Split::Validation;
      d.validation = data::gen_blob_classification(o);
      o.seed = data::mix_seed(s.seed, 2);
      o.split = data::Split::Test;
      d.test = data::gen_blob_classification(o);
      break;
    }
    case DataSource::Cifar10:
    case DataSource::Cifar100: {
      const fs::path dir = data_dir ? *data_dir : fs::path(s.dir);
      if (dir.empty()) {
        throw DataError(std::string("no CIFAR directory: set [data] dir or ") + kDataDirEnv);
      }
      data::CifarOptions o;
      o.validation_count = s.validation;
      o.split_seed = s.seed;
      if (s.subset > 0) o.subset = data::CifarSubset{s.subset, data::mix_seed(s.seed, 1)};
      if (s.test_count > 0) o.test_count = s.test_count;
      if (s.validation == 0) throw ConfigError("[data] validation must be >= 1 for image sources");
      const auto variant = s.source == DataSource::Cifar10 ? data::CifarVariant::Cifar10 : data::CifarVariant::Cifar100;
      data::CifarSplits splits = data::load_cifar(dir, variant, o);
      d.train = std::move(splits.train);
      d.validation = std::move(splits.validation);
      d.test = std::move(splits.test);
      break;
    }
  }
  return d;
}

fs::path output_dir(const ExperimentConfig& config, const RunOptions& options) {
  fs::path out = options.out.empty() ? fs::path(config.output) : options.out;
  if (out.empty()) throw ConfigError("no output directory: pass --out or set [experiment] output");
  return out;
}

int run_train(const ExperimentConfig& config, const RunOptions& options, std::ostream& log) {
  const fs::path out = output_dir(config, options);
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!options.force) throw Error("output directory " + out.string() + " exists; pass --force to overwrite");
    fs::remove_all(out);
  }
  fs::create_directories(out);
  write_text(out / "config.cfg", render(config));

  ExperimentData d = load_data(config, options.data_dir);
  for (const auto* section : {config.teacher ? &*config.teacher : nullptr, config.ta ? &*config.ta : nullptr,
                              &config.student}) {
    if (section && !models::is_desk_scale(make_spec(*section, input_shape(d), output_count(d), 0))) {
      log << "warning: " << models::to_string(section->family) << "-" << section->depth
          << " is far beyond desk scale; expect a very long run\n";
    }
  }
  std::optional<models::Model> teacher;
  if (config.teacher) teacher = obtain_teacher(config, d, out, &log);
  retarget_test(config, d, teacher ? &*teacher : nullptr);

  const auto seeds = run_seeds(config, options);
  std::vector<std::optional<SummaryRow>> rows(seeds.size());
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      const fs::path dir = seed_dir(out, seeds[i]);
      fs::create_directories(dir);
      try {
        rows[i] = train_seed(config, d, teacher ? &*teacher : nullptr, seeds[i], dir);
        std::lock_guard lock(log_mutex);
        log << "seed " << seeds[i] << ": test metric " << fmt(rows[i]->final_metric) << "\n";
      } catch (const std::exception& e) {
        write_text(dir / "FAILED", std::string(e.what()) + "\n");
        std::lock_guard lock(log_mutex);
        log << "seed " << seeds[i] << ": FAILED: " << e.what() << "\n";
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, seeds.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::vector<SummaryRow> done;
  for (const auto& r : rows) {
    if (r) done.push_back(*r);
  }
  write_text(out / "summary.csv", render_summary(done));
  return done.size() == seeds.size() ? 0 : 2;
}

void run_eval(const ExperimentConfig& config, const RunOptions& options, std::ostream& out) {
  const fs::path root = output_dir(config, options);
  ExperimentData d = load_data(config, options.data_dir);
  std::optional<models::Model> teacher;
  if (config.data.test_against_teacher) teacher = obtain_teacher(config, d, root, nullptr);
  retarget_test(config, d, teacher ? &*teacher : nullptr);
  out << "seed,test_metric\n";
  for (std::uint64_t seed : run_seeds(config, options)) {
    const models::ModelSpec spec = make_spec(config.student, input_shape(d), output_count(d), seed);
    const models::Model model = trainer::load_checkpoint(seed_dir(root, seed) / "student.ckpt", spec).to_model();
    out << seed << "," << fmt(trainer::evaluate(model, d.test, config.task())) << "\n";
  }
}

void run_landscape(const ExperimentConfig& config, const RunOptions& options, std::ostream& out) {
  if (!config.annealing) throw ConfigError("landscape requires method annealing-kd");
  const fs::path root = output_dir(config, options);
  const LandscapeSection section = config.landscape.value_or(LandscapeSection{});
  const distill::AnnealingSchedule& schedule = config.annealing->schedule;
  std::vector<int> temperatures = section.temperatures;
  if (temperatures.empty()) temperatures = {schedule.tau_max, 1};

  ExperimentData d = load_data(config, options.data_dir);
  const models::Model teacher = obtain_teacher(config, d, root, nullptr);
  const Tensor teacher_logits = teacher.predict(d.train.inputs);

  std::string table = "seed,temperature,phi,sharpness\n";
  for (std::uint64_t seed : run_seeds(config, options)) {
    const fs::path dir = seed_dir(root, seed);
    const models::ModelSpec spec = make_spec(config.student, input_shape(d), output_count(d), seed);
    for (int t : temperatures) {
      const fs::path snapshot = dir / ("stage1_T" + std::to_string(t) + ".ckpt");
      const fs::path source = fs::exists(snapshot) ? snapshot : dir / "student.ckpt";
      models::Model model = trainer::load_checkpoint(source, spec).to_model();
      const double phi = distill::annealing_factor(t, schedule.tau_max);
      const landscape::Evaluator loss = [&](const models::Model& m) {
        const Tensor z = m.predict(d.train.inputs);
        return schedule.stage_one_loss == distill::StageOneLoss::Mse
                   ? distill::annealing_kd_loss(z, teacher_logits, phi)
                   : distill::annealing_kl_loss(z, teacher_logits, static_cast<double>(t));
      };
      const auto d1 = landscape::random_direction(model, seed, section.normalization);
      landscape::Surface surface;
      if (section.two_dimensional) {
        const auto d2 = landscape::random_direction(model, data::mix_seed(seed, 1), section.normalization);
        surface = landscape::loss_surface(model, loss, d1, d2, section.grid);
      } else {
        surface = landscape::loss_slice(model, loss, d1, section.grid);
      }
      landscape::write_surface(surface, {seed, static_cast<double>(t), phi},
                               dir / ("landscape_T" + std::to_string(t) + ".txt"));
      if (!surface.two_dimensional) {
        table += std::to_string(seed) + "," + std::to_string(t) + "," + fmt(phi) + "," +
                 fmt(landscape::sharpness(surface.losses)) + "\n";
      }
    }
  }
  write_text(root / "landscape.csv", table);
  out << table;
}

std::vector<SummaryRow> read_summary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read summary " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kSummaryHeader) {
    throw DataError(path.string() + ": missing header '" + std::string(kSummaryHeader) + "'");
  }
  std::vector<SummaryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    SummaryRow r;
    r.seed = static_cast<std::uint64_t>(to_double(csv_field(line, 0, line_no, path), line_no, path));
    r.method = csv_field(line, 1, line_no, path);
    r.task = csv_field(line, 2, line_no, path);
    r.final_metric = to_double(csv_field(line, 3, line_no, path), line_no, path);
    r.best_metric = to_double(csv_field(line, 4, line_no, path), line_no, path);
    r.seconds = to_double(csv_field(line, 5, line_no, path), line_no, path);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError(path.string() + ": summary has no rows");
  return rows;
}

std::string render_summary(const std::vector<SummaryRow>& rows) {
  std::string out = std::string(kSummaryHeader) + "\n";
  for (const SummaryRow& r : rows) {
    out += std::to_string(r.seed) + "," + r.method + "," + r.task + "," + fmt(r.final_metric) + "," +
           fmt(r.best_metric) + "," + fmt(r.seconds) + "\n";
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string compare(const std::vector<fs::path>& summaries) {
  if (summaries.empty()) throw InvalidArgument("compare: no summary files given");
  std::string task;
  std::map<std::string, std::vector<SummaryRow>> by_method;
  for (const fs::path& p : summaries) {
    for (SummaryRow& r : read_summary(p)) {
      if (task.empty()) task = r.task;
      if (r.task != task) {
        throw DataError("compare: " + p.string() + " mixes task '" + r.task + "' with '" + task + "'");
      }
      by_method[r.method].push_back(std::move(r));
    }
  }
  const bool higher_better = task == "classification";
  std::vector<std::pair<double, std::string>> order;
  for (const auto& [method, rows] : by_method) {
    std::vector<double> v;
    for (const SummaryRow& r : rows) v.push_back(r.final_metric);
    order.emplace_back(median(v), method);
  }
  std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    return higher_better ? a.first > b.first : a.first < b.first;
  });

  std::string out = "method,task,median,seeds,per_seed\n";
  for (const auto& [med, method] : order) {
    auto rows = by_method[method];
    std::sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) { return a.seed < b.seed; });
    std::string per_seed;
    for (const SummaryRow& r : rows) {
      if (!per_seed.empty()) per_seed += " ";
      per_seed += std::to_string(r.seed) + ":" + fmt(r.final_metric);
    }
    out += method + "," + task + "," + fmt(med) + "," + std::to_string(rows.size()) + "," + per_seed + "\n";
  }
  return out;
}

}  // namespace cli
ANNEALKD_END_NAMESPACE
