#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "annealkd/config.hpp"
#include "annealkd/errors.hpp"
#include "annealkd/runner.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, comma - start);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) throw annealkd::ConfigError("--seeds: bad seed '" + item + "'");
    seeds.push_back(v);
    start = comma + 1;
  }
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annealing knowledge distillation experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, seeds_text;
  bool force = false;
  std::size_t threads = 1;
  std::vector<std::string> summaries;

  auto add_run_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file")->required();
    cmd->add_option("--out", out_dir, "output directory (overrides [experiment] output)");
    cmd->add_option("--seeds", seeds_text, "comma-separated seed list (overrides [experiment] seeds)");
    cmd->add_option("--threads", threads, "seeds trained concurrently")->check(CLI::PositiveNumber);
  };
  CLI::App* train = app.add_subcommand("train", "train the teacher and one student per seed");
  add_run_flags(train);
  train->add_flag("--force", force, "replace an existing output directory");
  CLI::App* eval = app.add_subcommand("eval", "evaluate trained students on the test split");
  add_run_flags(eval);
  CLI::App* land = app.add_subcommand("landscape", "write stage-one loss slices around trained students");
  add_run_flags(land);
  CLI::App* cmp = app.add_subcommand("compare", "tabulate summary.csv files");
  cmp->add_option("summaries", summaries, "summary.csv paths")->required()->expected(1, -1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (cmp->parsed()) {
      std::vector<std::filesystem::path> paths(summaries.begin(), summaries.end());
      std::cout << annealkd::cli::compare(paths);
      return kOk;
    }
    const annealkd::cli::ExperimentConfig config = annealkd::cli::parse_config(config_path);
    annealkd::cli::RunOptions options;
    options.out = out_dir;
    options.force = force;
    options.threads = threads;
    if (!seeds_text.empty()) options.seeds = parse_seeds(seeds_text);
    if (const char* dir = std::getenv(annealkd::cli::kDataDirEnv); dir && *dir) options.data_dir = dir;

    if (train->parsed()) return annealkd::cli::run_train(config, options, std::cerr) == 0 ? kOk : kRuntimeError;
    if (eval->parsed()) annealkd::cli::run_eval(config, options, std::cout);
    if (land->parsed()) annealkd::cli::run_landscape(config, options, std::cout);
    return kOk;
  } catch (const annealkd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
