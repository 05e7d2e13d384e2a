#pragma once

// Helpers shared by the unit suites: scratch directories and synthetic
// CIFAR batch files.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "annealkd/cifar.hpp"

namespace fixtures {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("annealkd_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Records whose labels cycle through the classes; the red plane brightness
/// tracks the label so small models can learn something.
inline std::vector<annealkd::data::CifarRecord> synthetic_records(std::size_t count, std::size_t classes,
                                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(0, 40);
  std::vector<annealkd::data::CifarRecord> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& r = out[i];
    r.label = static_cast<std::uint8_t>(i % classes);
    r.coarse_label = static_cast<std::uint8_t>(r.label % 20);
    for (std::size_t p = 0; p < r.pixels.size(); ++p) {
      const int base = p < 1024 ? static_cast<int>(r.label * 200 / classes) : 100;
      r.pixels[p] = static_cast<std::uint8_t>(base + noise(rng));
    }
  }
  return out;
}

/// Writes a complete synthetic CIFAR-10 directory with `per_file` records in
/// each training file and `test` records in the test file.
inline void write_cifar10(const std::filesystem::path& dir, std::size_t per_file, std::size_t test) {
  using namespace annealkd::data;
  std::uint64_t seed = 1;
  for (const std::string& name : cifar_train_files(CifarVariant::Cifar10)) {
    write_bytes(dir / name, encode_cifar_records(synthetic_records(per_file, 10, seed++), CifarVariant::Cifar10));
  }
  write_bytes(dir / cifar_test_file(CifarVariant::Cifar10),
              encode_cifar_records(synthetic_records(test, 10, 99), CifarVariant::Cifar10));
}

}  // namespace fixtures
