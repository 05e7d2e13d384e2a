#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

// Finite-difference gradient oracle. Implemented against the 64-bit library
// build; the interface uses only standard types so 32-bit callers can link it.

struct OpCheck {
  std::string op;
  std::size_t cases = 0;
  std::size_t passed = 0;
  double worst_relative_error = 0;
};

/// Checks every differentiable op on `cases` seeded random inputs with
/// central differences of step `h`.
std::vector<OpCheck> run_gradient_oracle(std::size_t cases, std::uint64_t seed, double h, double tolerance);

/// Width of the scalar type the oracle was compiled with.
std::size_t gradient_oracle_scalar_bytes();
