#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "annealkd/model.hpp"
#include "annealkd/precision.hpp"
#include "annealkd/tensor.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace landscape {

enum class Normalization {
  Filter,  // rescale each output filter to the norm of the matching weight filter
  None,
};

/// One random perturbation per model parameter. Rank-1 parameters (biases,
/// batch-norm scale and shift) get a zero direction.
struct Direction {
  std::vector<Tensor> blocks;
  Normalization normalization = Normalization::Filter;
  std::uint64_t seed = 0;
};

/// Gaussian direction drawn with `seed`. Under filter normalization each
/// filter d_f is rescaled to d_f * ||w_f|| / ||d_f||, where a filter is a
/// slice along the output axis: dim 0 of a convolution weight, a column of a
/// linear weight stored as (in, out).
Direction random_direction(const models::Model& model, std::uint64_t seed,
                           Normalization normalization = Normalization::Filter);

struct GridSpec {
  double lo = -1.0;
  double hi = 1.0;
  std::size_t steps = 21;

  /// alpha_i = (lo * (steps - 1 - i) + hi * i) / (steps - 1)
  std::vector<double> points() const;
  void validate() const;
};

using Evaluator = std::function<double(const models::Model&)>;

/// Losses at theta + a * d1 (1-D) or theta + a * d1 + b * d2 (2-D, row-major
/// over a then b). Parameters are restored bit for bit afterwards; points
/// where evaluation is non-finite or throws a numeric error are stored as NaN.
struct Surface {
  GridSpec grid;
  bool two_dimensional = false;
  std::vector<double> losses;
};

Surface loss_slice(models::Model& model, const Evaluator& evaluate, const Direction& d1, const GridSpec& grid);
Surface loss_surface(models::Model& model, const Evaluator& evaluate, const Direction& d1, const Direction& d2,
                     const GridSpec& grid);

/// max_i |L[i-1] - 2 L[i] + L[i+1]| over interior points of a 1-D slice.
/// NaN entries make the result NaN.
double sharpness(const std::vector<double>& slice);

struct GridHeader {
  std::uint64_t seed = 0;
  double temperature = 0;
  double phi = 0;
};

/// Text rendering: `# key=value` header lines followed by `alpha,loss` or
/// `alpha,beta,loss` rows.
std::string render_surface(const Surface& surface, const GridHeader& header);
void write_surface(const Surface& surface, const GridHeader& header, const std::filesystem::path& path);

}  // namespace landscape
ANNEALKD_END_NAMESPACE
