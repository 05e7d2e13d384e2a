#include <filesystem>
#include <string>

#include "annealkd/config.hpp"
#include "annealkd/errors.hpp"
#include "doctest.h"

using namespace annealkd;
using namespace annealkd::cli;

namespace {

const std::filesystem::path kConfigDir = std::filesystem::path(ANNEALKD_SOURCE_DIR) / "configs";

const char* kMinimal = R"(# sine scratch run
[experiment]
method = scratch

[data]
source = sine

[student]
family = mlp
hidden = 10
activation = sigmoid

[train]
lr = 0.01
epochs = 5
)";

std::size_t error_line(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  FAIL("config accepted: " << text);
  return 0;
}

std::string with(const std::string& extra) { return std::string(kMinimal) + extra; }

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("minimal config and defaults") {
    const ExperimentConfig c = parse_config_text(kMinimal);
    CHECK(c.method == Method::Scratch);
    CHECK(c.seeds == std::vector<std::uint64_t>{0});
    CHECK(c.student.hidden == std::vector<std::size_t>{10});
    CHECK(c.train.optimizer.learning_rate == 0.01);
    CHECK(c.train.epochs == 5);
    CHECK(c.task() == data::TaskKind::Regression);
  }

  TEST_CASE("every shipped config parses and round trips") {
    std::size_t seen = 0;
    for (const auto& entry : std::filesystem::directory_iterator(kConfigDir)) {
      if (entry.path().extension() != ".cfg") continue;
      CAPTURE(entry.path().string());
      const ExperimentConfig c = parse_config(entry.path());
      CHECK(parse_config_text(render(c)) == c);
      CHECK(render(parse_config_text(render(c))) == render(c));
      ++seen;
    }
    CHECK(seen >= 4);
  }

  TEST_CASE("annealing schedule from the CIFAR config") {
    const ExperimentConfig c = parse_config(kConfigDir / "cifar10_annealing.cfg");
    REQUIRE(c.annealing);
    CHECK(c.annealing->schedule.tau_max == 10);
    CHECK(c.annealing->schedule.epochs_per_temperature == 16);
    CHECK(c.annealing->schedule.fine_tune_epochs == 160);
    CHECK(c.annealing->schedule.stage_one_epochs() == 160);
    CHECK(c.task() == data::TaskKind::Classification);
    CHECK(c.train.lr_schedule == trainer::LrSchedule::StepDecay);
  }

  TEST_CASE("takd without an assistant is rejected") {
    std::string text = kMinimal;
    text.replace(text.find("method = scratch"), 16, "method = takd");
    text += "\n[teacher]\nfamily = mlp\nhidden = 20\nactivation = sigmoid\n"
            "\n[teacher_train]\nlr = 0.01\nepochs = 3\n\n[kd]\ntemperature = 2\nlambda = 0.5\n";
    try {
      parse_config_text(text);
      FAIL("takd accepted without [ta]");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("[ta]") != std::string::npos);
    }
  }

  TEST_CASE("errors name the offending line") {
    CHECK(error_line(with("lr = 0.02\n")) == 16);
    CHECK(error_line(with("colour = blue\n")) == 16);
    CHECK(error_line(with("batch_size = lots\n")) == 16);
    CHECK(error_line(with("[mystery]\n")) == 16);
    CHECK(error_line(with("this is not a key value line\n")) == 16);
  }

  TEST_CASE("semantic checks") {
    CHECK_THROWS_AS(parse_config_text(with("\n[annealing]\ntau_max = 3\nk = 1\nn = 1\n")), ConfigError);
    std::string bad_family = kMinimal;
    bad_family.replace(bad_family.find("family = mlp"), 12, "family = plain-cnn");
    CHECK_THROWS_AS(parse_config_text(bad_family), ConfigError);
    std::string no_epochs = kMinimal;
    no_epochs.erase(no_epochs.find("epochs = 5"));
    CHECK_THROWS_AS(parse_config_text(no_epochs), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[data]\nsource = sine\n"), ConfigError);
  }

  TEST_CASE("annealing forbids a train epoch count") {
    const ExperimentConfig base = parse_config(kConfigDir / "toy_annealing.cfg");
    std::string text = render(base);
    text.replace(text.find("[train]\n"), 8, "[train]\nepochs = 10\n");
    CHECK_THROWS_AS(parse_config_text(text), ConfigError);
  }

  TEST_CASE("run specs take the seed and data shape") {
    const ExperimentConfig c = parse_config(kConfigDir / "toy_annealing.cfg");
    const models::ModelSpec spec = make_spec(c.student, {1}, 1, 7);
    CHECK(spec.layers == std::vector<std::size_t>{1, 10, 1});
    CHECK(spec.seed == 7);
    CHECK(spec.first_layer_scale == 30);
    const trainer::TrainConfig tc = make_train_config(c.train, c.task(), 7, c.annealing->schedule);
    CHECK(tc.seed == 7);
    CHECK(tc.batch_size == 16);
    CHECK(tc.task == data::TaskKind::Regression);
  }

  TEST_CASE("method and source names") {
    CHECK(parse_method("annealing-kd") == Method::AnnealingKd);
    CHECK(to_string(Method::Takd) == "takd");
    CHECK(parse_source("cifar100") == DataSource::Cifar100);
    CHECK_THROWS(parse_method("distill"));
  }
}
