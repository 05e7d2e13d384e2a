#include "annealkd/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "annealkd/errors.hpp"
#include "format.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

struct Entry {
  std::string value;
  std::size_t line = 0;
};

struct Section {
  std::size_t line = 0;
  std::map<std::string, Entry, std::less<>> entries;
};

using Document = std::map<std::string, Section, std::less<>>;

Document tokenize(std::string_view text) {
  Document doc;
  Section* current = nullptr;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    ++line_no;
    const auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError("malformed section header", line_no);
      const std::string name(trim(line.substr(1, line.size() - 2)));
      if (doc.contains(name)) throw ConfigError("duplicate section [" + name + "]", line_no);
      current = &doc[name];
      current->line = line_no;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'", line_no);
    if (!current) throw ConfigError("key outside of any section", line_no);
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("empty key", line_no);
    if (current->entries.contains(key)) throw ConfigError("duplicate key '" + key + "'", line_no);
    current->entries[key] = Entry{std::string(trim(line.substr(eq + 1))), line_no};
  }
  return doc;
}

template <typename T>
T parse_number(std::string_view text, std::size_t line, const std::string& key) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "': cannot parse '" + std::string(text) + "' as a number", line);
  }
  return value;
}

/// Consumes keys of one section; anything left over is an unknown key.
class Fields {
 public:
  Fields(std::string name, Section section) : name_(std::move(name)), section_(std::move(section)) {}

  std::size_t line() const { return section_.line; }
  bool has(std::string_view key) const { return section_.entries.contains(key); }

  const Entry* find(std::string_view key) const {
    const auto it = section_.entries.find(key);
    return it == section_.entries.end() ? nullptr : &it->second;
  }

  std::optional<Entry> take(std::string_view key) {
    const auto it = section_.entries.find(key);
    if (it == section_.entries.end()) return std::nullopt;
    Entry e = it->second;
    section_.entries.erase(it);
    return e;
  }

  Entry require(std::string_view key) {
    auto e = take(key);
    if (!e) throw ConfigError("[" + name_ + "] is missing required key '" + std::string(key) + "'", line());
    return *e;
  }

  template <typename T>
  void number(std::string_view key, T& out) {
    if (auto e = take(key)) out = parse_number<T>(e->value, e->line, std::string(key));
  }

  template <typename T>
  void required_number(std::string_view key, T& out) {
    const Entry e = require(key);
    out = parse_number<T>(e.value, e.line, std::string(key));
  }

  void boolean(std::string_view key, bool& out) {
    if (auto e = take(key)) {
      if (e->value == "true") out = true;
      else if (e->value == "false") out = false;
      else throw ConfigError("key '" + std::string(key) + "': expected true or false", e->line);
    }
  }

  void text(std::string_view key, std::string& out) {
    if (auto e = take(key)) out = e->value;
  }

  template <typename T, typename Parser>
  void choice(std::string_view key, T& out, Parser parse, bool required = false) {
    std::optional<Entry> e = required ? std::optional<Entry>(require(key)) : take(key);
    if (!e) return;
    try {
      out = parse(e->value);
    } catch (const InvalidArgument& ex) {
      throw ConfigError(ex.what(), e->line);
    }
  }

  template <typename T>
  void list(std::string_view key, std::vector<T>& out) {
    if (auto e = take(key)) {
      out.clear();
      for (std::string_view item : split_list(e->value)) out.push_back(parse_number<T>(item, e->line, std::string(key)));
    }
  }

  void forbid(std::string_view key, const std::string& reason) {
    if (const Entry* e = find(key)) throw ConfigError("key '" + std::string(key) + "' " + reason, e->line);
  }

  void finish() const {
    if (!section_.entries.empty()) {
      const auto& [key, e] = *section_.entries.begin();
      throw ConfigError("unknown key '" + key + "' in [" + name_ + "]", e.line);
    }
  }

 private:
  std::string name_;
  Section section_;
};

trainer::LrSchedule parse_lr_schedule(std::string_view text) {
  if (text == "constant") return trainer::LrSchedule::Constant;
  if (text == "step") return trainer::LrSchedule::StepDecay;
  throw InvalidArgument("unknown lr_schedule '" + std::string(text) + "' (allowed: constant, step)");
}

distill::StageOneLoss parse_stage_one_loss(std::string_view text) {
  if (text == "mse") return distill::StageOneLoss::Mse;
  if (text == "kl") return distill::StageOneLoss::KlDiv;
  throw InvalidArgument("unknown stage1_loss '" + std::string(text) + "' (allowed: mse, kl)");
}

landscape::Normalization parse_normalization(std::string_view text) {
  if (text == "filter") return landscape::Normalization::Filter;
  if (text == "none") return landscape::Normalization::None;
  throw InvalidArgument("unknown normalization '" + std::string(text) + "' (allowed: filter, none)");
}

bool is_image(DataSource s) { return s == DataSource::Cifar10 || s == DataSource::Cifar100; }

ModelSection read_model(Fields& f, bool is_teacher, DataSource source) {
  ModelSection m;
  f.choice("family", m.family, models::parse_family, true);
  if (m.family == models::Family::Mlp) {
    const Entry hidden = f.require("hidden");
    for (std::string_view item : split_list(hidden.value)) {
      m.hidden.push_back(parse_number<std::size_t>(item, hidden.line, "hidden"));
    }
    f.forbid("depth", "applies to convolutional families only");
    f.number("first_layer_scale", m.first_layer_scale);
  } else {
    f.required_number("depth", m.depth);
    f.forbid("hidden", "applies to the mlp family only");
  }
  if (is_image(source) != (m.family != models::Family::Mlp)) {
    throw ConfigError("family " + std::string(models::to_string(m.family)) + " does not fit data source " +
                          std::string(to_string(source)),
                      f.line());
  }
  f.choice("activation", m.activation, models::parse_activation);
  if (is_teacher) {
    f.number("seed", m.seed);
    f.text("checkpoint", m.checkpoint);
  }
  f.finish();
  return m;
}

TrainSection read_train(Fields& f, bool is_teacher, bool epochs_required, bool epochs_allowed) {
  TrainSection t;
  f.number("lr", t.optimizer.learning_rate);
  f.number("momentum", t.optimizer.momentum);
  f.number("weight_decay", t.optimizer.weight_decay);
  f.number("batch_size", t.batch_size);
  if (!epochs_allowed) f.forbid("epochs", "is set by the [annealing] schedule");
  if (epochs_required) f.required_number("epochs", t.epochs);
  f.choice("lr_schedule", t.lr_schedule, parse_lr_schedule);
  f.boolean("augment", t.augment);
  f.boolean("record_wall_clock", t.record_wall_clock);
  if (is_teacher) f.number("seed", t.seed);
  f.finish();
  if (t.batch_size < 1) throw ConfigError("batch_size must be >= 1", f.line());
  if (!(t.optimizer.learning_rate > 0)) throw ConfigError("lr must be positive", f.line());
  return t;
}

std::string fmt(double v) { return detail::format_double(v); }

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

void render_model(std::ostringstream& os, const char* name, const ModelSection& m, bool is_teacher) {
  os << "\n[" << name << "]\n";
  os << "family = " << models::to_string(m.family) << "\n";
  if (m.family == models::Family::Mlp) {
    os << "hidden = " << join(m.hidden) << "\n";
    os << "first_layer_scale = " << fmt(m.first_layer_scale) << "\n";
  } else {
    os << "depth = " << m.depth << "\n";
  }
  os << "activation = " << models::to_string(m.activation) << "\n";
  if (is_teacher) {
    os << "seed = " << m.seed << "\n";
    if (!m.checkpoint.empty()) os << "checkpoint = " << m.checkpoint << "\n";
  }
}

void render_train(std::ostringstream& os, const char* name, const TrainSection& t, bool is_teacher, bool epochs) {
  os << "\n[" << name << "]\n";
  os << "lr = " << fmt(t.optimizer.learning_rate) << "\n";
  os << "momentum = " << fmt(t.optimizer.momentum) << "\n";
  os << "weight_decay = " << fmt(t.optimizer.weight_decay) << "\n";
  os << "batch_size = " << t.batch_size << "\n";
  if (epochs) os << "epochs = " << t.epochs << "\n";
  os << "lr_schedule = " << (t.lr_schedule == trainer::LrSchedule::StepDecay ? "step" : "constant") << "\n";
  os << "augment = " << (t.augment ? "true" : "false") << "\n";
  os << "record_wall_clock = " << (t.record_wall_clock ? "true" : "false") << "\n";
  if (is_teacher) os << "seed = " << t.seed << "\n";
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::Scratch: return "scratch";
    case Method::Kd: return "kd";
    case Method::Takd: return "takd";
    case Method::AnnealingKd: return "annealing-kd";
  }
  return "unknown";
}

std::string_view to_string(DataSource source) {
  switch (source) {
    case DataSource::Sine: return "sine";
    case DataSource::Blobs: return "blobs";
    case DataSource::Cifar10: return "cifar10";
    case DataSource::Cifar100: return "cifar100";
  }
  return "unknown";
}

Method parse_method(std::string_view text) {
  for (Method m : {Method::Scratch, Method::Kd, Method::Takd, Method::AnnealingKd}) {
    if (text == to_string(m)) return m;
  }
  throw InvalidArgument("unknown method '" + std::string(text) + "' (allowed: scratch, kd, takd, annealing-kd)");
}

DataSource parse_source(std::string_view text) {
  for (DataSource s : {DataSource::Sine, DataSource::Blobs, DataSource::Cifar10, DataSource::Cifar100}) {
    if (text == to_string(s)) return s;
  }
  throw InvalidArgument("unknown data source '" + std::string(text) + "' (allowed: sine, blobs, cifar10, cifar100)");
}

data::TaskKind ExperimentConfig::task() const {
  return data.source == DataSource::Sine ? data::TaskKind::Regression : data::TaskKind::Classification;
}

ExperimentConfig parse_config_text(std::string_view text) {
  Document doc = tokenize(text);
  auto take_section = [&](const char* name) -> std::optional<Fields> {
    const auto it = doc.find(std::string_view(name));
    if (it == doc.end()) return std::nullopt;
    Fields f(name, std::move(it->second));
    doc.erase(it);
    return f;
  };
  auto need = [&](const char* name, const char* why) {
    auto f = take_section(name);
    if (!f) throw ConfigError(std::string("missing section [") + name + "] " + why);
    return std::move(*f);
  };

  ExperimentConfig c;
  {
    Fields f = need("experiment", "");
    f.choice("method", c.method, parse_method, true);
    if (f.has("seeds")) {
      f.list("seeds", c.seeds);
      if (c.seeds.empty()) throw ConfigError("seeds must not be empty", f.line());
    }
    f.text("output", c.output);
    f.finish();
  }
  {
    Fields f = need("data", "");
    DataSection& d = c.data;
    f.choice("source", d.source, parse_source, true);
    f.number("seed", d.seed);
    switch (d.source) {
      case DataSource::Sine: {
        f.number("train_count", d.train_count);
        f.number("val_count", d.val_count);
        f.number("test_count", d.test_count);
        f.number("noise_sd", d.noise_sd);
        std::string targets = "truth";
        const Entry* e = f.find("test_targets");
        f.text("test_targets", targets);
        if (targets != "truth" && targets != "teacher") {
          throw ConfigError("test_targets must be truth or teacher", e ? e->line : f.line());
        }
        d.test_against_teacher = targets == "teacher";
        if (d.train_count < 1 || d.val_count < 1 || d.test_count < 2) {
          throw ConfigError("sine set sizes must be positive (test_count >= 2)", f.line());
        }
        break;
      }
      case DataSource::Blobs:
        f.number("classes", d.classes);
        f.number("per_class", d.per_class);
        f.number("dim", d.dim);
        f.number("sd", d.sd);
        if (d.classes < 2 || d.per_class < 1 || d.dim < 1) {
          throw ConfigError("blobs need classes >= 2, per_class >= 1, dim >= 1", f.line());
        }
        break;
      case DataSource::Cifar10:
      case DataSource::Cifar100:
        f.text("dir", d.dir);
        f.number("subset", d.subset);
        f.number("validation", d.validation);
        d.test_count = 0;
        f.number("test_count", d.test_count);
        break;
    }
    f.finish();
  }

  const bool uses_teacher = c.method != Method::Scratch;
  if (auto f = take_section("teacher")) {
    c.teacher = read_model(*f, true, c.data.source);
  } else if (uses_teacher || c.data.test_against_teacher) {
    throw ConfigError("missing section [teacher] required by method " + std::string(to_string(c.method)));
  }
  if (auto f = take_section("teacher_train")) {
    if (!c.teacher) throw ConfigError("[teacher_train] without [teacher]", f->line());
    c.teacher_train = read_train(*f, true, true, true);
  } else if (c.teacher && c.teacher->checkpoint.empty()) {
    throw ConfigError("missing section [teacher_train] (or set checkpoint in [teacher])");
  }

  if (c.method == Method::Takd) {
    Fields ta = need("ta", "required by method takd");
    c.ta = read_model(ta, false, c.data.source);
    Fields ta_train = need("ta_train", "required by method takd");
    c.ta_train = read_train(ta_train, false, true, true);
  }

  {
    Fields f = need("student", "");
    c.student = read_model(f, false, c.data.source);
  }
  const bool annealing = c.method == Method::AnnealingKd;
  {
    Fields f = need("train", "");
    c.train = read_train(f, false, !annealing, !annealing);
    if (!annealing && c.train.epochs < 1) throw ConfigError("epochs must be >= 1", f.line());
  }
  if (c.method == Method::Kd || c.method == Method::Takd) {
    Fields f = need("kd", c.method == Method::Kd ? "required by method kd" : "required by method takd");
    distill::VanillaKDConfig kd;
    f.number("temperature", kd.temperature);
    f.number("lambda", kd.lambda);
    f.finish();
    try {
      kd.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what(), f.line());
    }
    c.kd = kd;
  }
  if (annealing) {
    Fields f = need("annealing", "required by method annealing-kd");
    AnnealingSection a;
    f.required_number("tau_max", a.schedule.tau_max);
    f.required_number("k", a.schedule.epochs_per_temperature);
    f.required_number("n", a.schedule.fine_tune_epochs);
    f.choice("stage1_loss", a.schedule.stage_one_loss, parse_stage_one_loss);
    f.boolean("save_temperature_checkpoints", a.save_temperature_checkpoints);
    f.finish();
    try {
      a.schedule.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what(), f.line());
    }
    c.annealing = a;
  }
  if (auto f = take_section("landscape")) {
    if (!annealing) throw ConfigError("[landscape] requires method annealing-kd", f->line());
    LandscapeSection l;
    f->number("lo", l.grid.lo);
    f->number("hi", l.grid.hi);
    f->number("steps", l.grid.steps);
    f->choice("normalization", l.normalization, parse_normalization);
    f->boolean("two_dimensional", l.two_dimensional);
    f->list("temperatures", l.temperatures);
    f->finish();
    try {
      l.grid.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what(), f->line());
    }
    for (int t : l.temperatures) {
      if (t < 1 || t > c.annealing->schedule.tau_max) {
        throw ConfigError("landscape temperature " + std::to_string(t) + " outside [1, tau_max]", f->line());
      }
    }
    c.landscape = l;
  }

  if (!doc.empty()) {
    const auto& [name, section] = *doc.begin();
    throw ConfigError("section [" + name + "] is unknown or not used by method " + std::string(to_string(c.method)),
                      section.line);
  }
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string render(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[experiment]\n";
  os << "method = " << to_string(c.method) << "\n";
  os << "seeds = " << join(c.seeds) << "\n";
  if (!c.output.empty()) os << "output = " << c.output << "\n";

  const DataSection& d = c.data;
  os << "\n[data]\n";
  os << "source = " << to_string(d.source) << "\n";
  os << "seed = " << d.seed << "\n";
  switch (d.source) {
    case DataSource::Sine:
      os << "train_count = " << d.train_count << "\nval_count = " << d.val_count << "\ntest_count = " << d.test_count
         << "\nnoise_sd = " << fmt(d.noise_sd) << "\ntest_targets = " << (d.test_against_teacher ? "teacher" : "truth")
         << "\n";
      break;
    case DataSource::Blobs:
      os << "classes = " << d.classes << "\nper_class = " << d.per_class << "\ndim = " << d.dim
         << "\nsd = " << fmt(d.sd) << "\n";
      break;
    case DataSource::Cifar10:
    case DataSource::Cifar100:
      if (!d.dir.empty()) os << "dir = " << d.dir << "\n";
      os << "subset = " << d.subset << "\nvalidation = " << d.validation << "\ntest_count = " << d.test_count << "\n";
      break;
  }

  if (c.teacher) render_model(os, "teacher", *c.teacher, true);
  if (c.teacher_train) render_train(os, "teacher_train", *c.teacher_train, true, true);
  if (c.ta) render_model(os, "ta", *c.ta, false);
  if (c.ta_train) render_train(os, "ta_train", *c.ta_train, false, true);
  render_model(os, "student", c.student, false);
  render_train(os, "train", c.train, false, c.method != Method::AnnealingKd);
  if (c.kd) {
    os << "\n[kd]\ntemperature = " << fmt(c.kd->temperature) << "\nlambda = " << fmt(c.kd->lambda) << "\n";
  }
  if (c.annealing) {
    const auto& s = c.annealing->schedule;
    os << "\n[annealing]\ntau_max = " << s.tau_max << "\nk = " << s.epochs_per_temperature
       << "\nn = " << s.fine_tune_epochs
       << "\nstage1_loss = " << (s.stage_one_loss == distill::StageOneLoss::KlDiv ? "kl" : "mse")
       << "\nsave_temperature_checkpoints = " << (c.annealing->save_temperature_checkpoints ? "true" : "false")
       << "\n";
  }
  if (c.landscape) {
    const auto& l = *c.landscape;
    os << "\n[landscape]\nlo = " << fmt(l.grid.lo) << "\nhi = " << fmt(l.grid.hi) << "\nsteps = " << l.grid.steps
       << "\nnormalization = " << (l.normalization == landscape::Normalization::Filter ? "filter" : "none")
       << "\ntwo_dimensional = " << (l.two_dimensional ? "true" : "false") << "\n";
    if (!l.temperatures.empty()) os << "temperatures = " << join(l.temperatures) << "\n";
  }
  return os.str();
}

models::ModelSpec make_spec(const ModelSection& section, const Shape& input_shape, std::size_t outputs,
                            std::uint64_t seed) {
  models::ModelSpec spec;
  switch (section.family) {
    case models::Family::Mlp: {
      std::vector<std::size_t> layers{input_shape.at(0)};
      layers.insert(layers.end(), section.hidden.begin(), section.hidden.end());
      layers.push_back(outputs);
      spec = models::ModelSpec::mlp(std::move(layers), section.activation, seed);
      spec.first_layer_scale = section.first_layer_scale;
      break;
    }
    case models::Family::PlainCnn:
      spec = models::ModelSpec::plain_cnn(section.depth, outputs, seed, input_shape);
      spec.activation = section.activation;
      break;
    case models::Family::ResnetSmall:
      spec = models::ModelSpec::resnet_small(section.depth, outputs, seed, input_shape);
      spec.activation = section.activation;
      break;
  }
  models::validate(spec);
  return spec;
}

trainer::TrainConfig make_train_config(const TrainSection& section, data::TaskKind task, std::uint64_t seed,
                                       trainer::Schedule schedule) {
  trainer::TrainConfig t;
  t.optimizer = section.optimizer;
  t.batch_size = section.batch_size;
  t.seed = seed;
  t.epochs = section.epochs;
  t.schedule = std::move(schedule);
  t.lr_schedule = section.lr_schedule;
  t.augment = section.augment;
  t.record_wall_clock = section.record_wall_clock;
  t.task = task;
  return t;
}

}  // namespace cli
ANNEALKD_END_NAMESPACE
