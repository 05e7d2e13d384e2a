#include "annealkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "annealkd/errors.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace trainer {

namespace {

constexpr char kMagic[8] = {'A', 'K', 'D', 'C', 'K', 'P', 'T', '\0'};
using Kind = CheckpointError::Kind;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void uint(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void tensor(const Tensor& t) {
    uint(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) uint(static_cast<std::uint64_t>(d));
    for (Real v : t.data()) {
      if constexpr (sizeof(Real) == 8) {
        f64(static_cast<double>(v));
      } else {
        f32(static_cast<float>(v));
      }
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw CheckpointError(Kind::Truncated, "checkpoint truncated at byte " + std::to_string(pos_) + " (needed " +
                                                 std::to_string(n) + " more)");
    }
  }
  template <typename T>
  T uint() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor tensor(std::size_t width) {
    const auto rank = uint<std::uint32_t>();
    if (rank == 0 || rank > 8) throw CheckpointError(Kind::Corrupt, "checkpoint tensor has rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      const auto v = uint<std::uint64_t>();
      if (v == 0 || v > (std::uint64_t{1} << 32)) throw CheckpointError(Kind::Corrupt, "checkpoint tensor dimension out of range");
      d = static_cast<std::size_t>(v);
      count *= d;
      if (count > in_.size()) throw CheckpointError(Kind::Truncated, "checkpoint truncated inside a tensor payload");
    }
    need(count * width);
    std::vector<Real> values(count);
    for (Real& v : values) {
      if (width == 8) {
        v = static_cast<Real>(f64());
      } else {
        v = static_cast<Real>(std::bit_cast<float>(uint<std::uint32_t>()));
      }
    }
    return Tensor(std::move(shape), std::move(values));
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void check_shapes(const char* what, std::span<const Tensor> have, std::span<const Tensor> want) {
  if (have.size() != want.size()) {
    throw CheckpointError(Kind::ShapeMismatch, std::string("checkpoint ") + what + " count " +
                                                   std::to_string(have.size()) + " != model's " +
                                                   std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < have.size(); ++i) {
    if (have[i].shape() != want[i].shape()) {
      throw CheckpointError(Kind::ShapeMismatch, std::string("checkpoint ") + what + " " + std::to_string(i) +
                                                     " has shape " + to_string(have[i].shape()) + ", model expects " +
                                                     to_string(want[i].shape()));
    }
  }
}

}  // namespace

Checkpoint Checkpoint::capture(const models::Model& model, std::size_t epoch, Stage stage, double temperature,
                               double metric) {
  Checkpoint c;
  c.spec = model.spec();
  c.parameters.assign(model.parameters().begin(), model.parameters().end());
  c.buffers.assign(model.buffers().begin(), model.buffers().end());
  c.epoch = epoch;
  c.stage = stage;
  c.temperature = temperature;
  c.metric = metric;
  return c;
}

void Checkpoint::restore(models::Model& model) const {
  check_shapes("parameter", parameters, model.parameters());
  check_shapes("buffer", buffers, model.buffers());
  std::copy(parameters.begin(), parameters.end(), model.parameters().begin());
  std::copy(buffers.begin(), buffers.end(), model.buffers().begin());
}

models::Model Checkpoint::to_model() const {
  models::Model model(spec);
  restore(model);
  return model;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint(format_version);
  const std::string descriptor = spec.describe();
  w.uint(static_cast<std::uint32_t>(descriptor.size()));
  w.bytes(descriptor.data(), descriptor.size());
  w.uint(static_cast<std::uint64_t>(epoch));
  w.uint(static_cast<std::uint8_t>(stage));
  w.f64(temperature);
  w.f64(metric);
  w.uint(static_cast<std::uint8_t>(sizeof(Real)));
  w.uint(static_cast<std::uint32_t>(parameters.size()));
  for (const Tensor& t : parameters) w.tensor(t);
  w.uint(static_cast<std::uint32_t>(buffers.size()));
  for (const Tensor& t : buffers) w.tensor(t);
  return w.take();
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(Kind::BadMagic, "not a checkpoint file (bad magic)");
  }
  r.string(sizeof kMagic);
  Checkpoint c;
  c.format_version = r.uint<std::uint32_t>();
  if (c.format_version != kFormatVersion) {
    throw CheckpointError(Kind::VersionMismatch, "checkpoint format version " + std::to_string(c.format_version) +
                                                     ", expected " + std::to_string(kFormatVersion));
  }
  const auto descriptor_size = r.uint<std::uint32_t>();
  try {
    c.spec = models::ModelSpec::parse(r.string(descriptor_size));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::Corrupt, std::string("checkpoint spec descriptor: ") + e.what());
  }
  c.epoch = static_cast<std::size_t>(r.uint<std::uint64_t>());
  const auto stage = r.uint<std::uint8_t>();
  if (stage != 1 && stage != 2) throw CheckpointError(Kind::Corrupt, "checkpoint stage tag " + std::to_string(stage));
  c.stage = static_cast<Stage>(stage);
  c.temperature = r.f64();
  c.metric = r.f64();
  const auto width = r.uint<std::uint8_t>();
  if (width != 4 && width != 8) throw CheckpointError(Kind::Corrupt, "checkpoint scalar width " + std::to_string(width));
  const auto params = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < params; ++i) c.parameters.push_back(r.tensor(width));
  const auto buffers = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < buffers; ++i) c.buffers.push_back(r.tensor(width));
  if (!r.done()) throw CheckpointError(Kind::Corrupt, "checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = checkpoint.serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::Io, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Checkpoint::deserialize(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const models::ModelSpec& expected) {
  Checkpoint c = load_checkpoint(path);
  const models::Model reference(expected);
  check_shapes("parameter", c.parameters, reference.parameters());
  check_shapes("buffer", c.buffers, reference.buffers());
  return c;
}

}  // namespace trainer
ANNEALKD_END_NAMESPACE
