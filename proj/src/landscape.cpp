#include "annealkd/landscape.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "annealkd/errors.hpp"
#include "format.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace landscape {
namespace {

// Calls f(offset, stride, count) for each output filter of a weight tensor.
template <typename F>
void for_each_filter(const Tensor& w, F&& f) {
  if (w.rank() == 2) {
    const std::size_t in = w.dim(0), out = w.dim(1);
    for (std::size_t j = 0; j < out; ++j) f(j, out, in);
  } else {
    const std::size_t filters = w.dim(0), len = w.size() / filters;
    for (std::size_t j = 0; j < filters; ++j) f(j * len, std::size_t{1}, len);
  }
}

double filter_norm(std::span<const Real> v, std::size_t offset, std::size_t stride, std::size_t count) {
  double sq = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double x = v[offset + i * stride];
    sq += x * x;
  }
  return std::sqrt(sq);
}

void axpy(std::span<Tensor> params, const Direction& d, double a) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto dst = params[p].data();
    const auto src = d.blocks[p].data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<Real>(a * static_cast<double>(src[i]));
  }
}

void check_direction(const models::Model& model, const Direction& d) {
  const auto params = model.parameters();
  if (d.blocks.size() != params.size()) {
    throw ShapeError("landscape: direction has " + std::to_string(d.blocks.size()) + " blocks for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (d.blocks[i].shape() != params[i].shape()) {
      throw ShapeError("landscape: direction block " + std::to_string(i) + " has shape " +
                       to_string(d.blocks[i].shape()) + ", parameter has " + to_string(params[i].shape()));
    }
  }
}

double safe_evaluate(const Evaluator& evaluate, const models::Model& model) {
  try {
    const double v = evaluate(model);
    return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN();
  } catch (const NumericError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

Direction random_direction(const models::Model& model, std::uint64_t seed, Normalization normalization) {
  Direction d;
  d.normalization = normalization;
  d.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const Tensor& w : model.parameters()) {
    Tensor block(w.shape(), Real(0));
    if (w.rank() > 1) {
      for (Real& x : block.data()) x = static_cast<Real>(normal(rng));
      if (normalization == Normalization::Filter) {
        auto dv = block.data();
        for_each_filter(w, [&](std::size_t offset, std::size_t stride, std::size_t count) {
          const double wn = filter_norm(w.data(), offset, stride, count);
          const double dn = filter_norm(dv, offset, stride, count);
          const double factor = dn > 0 ? wn / dn : 0.0;
          for (std::size_t i = 0; i < count; ++i) {
            Real& x = dv[offset + i * stride];
            x = static_cast<Real>(static_cast<double>(x) * factor);
          }
        });
      }
    }
    d.blocks.push_back(std::move(block));
  }
  return d;
}

std::vector<double> GridSpec::points() const {
  validate();
  std::vector<double> out(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    out[i] = (lo * static_cast<double>(steps - 1 - i) + hi * static_cast<double>(i)) / static_cast<double>(steps - 1);
  }
  return out;
}

void GridSpec::validate() const {
  if (steps < 2) throw InvalidArgument("landscape grid: steps must be >= 2");
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo)) {
    throw InvalidArgument("landscape grid: need finite lo < hi");
  }
}

Surface loss_slice(models::Model& model, const Evaluator& evaluate, const Direction& d1, const GridSpec& grid) {
  check_direction(model, d1);
  const auto alphas = grid.points();
  const std::vector<Tensor> saved(model.parameters().begin(), model.parameters().end());
  Surface s{grid, false, {}};
  for (double a : alphas) {
    axpy(model.parameters(), d1, a);
    s.losses.push_back(safe_evaluate(evaluate, model));
    std::copy(saved.begin(), saved.end(), model.parameters().begin());
  }
  return s;
}

Surface loss_surface(models::Model& model, const Evaluator& evaluate, const Direction& d1, const Direction& d2,
                     const GridSpec& grid) {
  check_direction(model, d1);
  check_direction(model, d2);
  const auto alphas = grid.points();
  const std::vector<Tensor> saved(model.parameters().begin(), model.parameters().end());
  Surface s{grid, true, {}};
  for (double a : alphas) {
    for (double b : alphas) {
      axpy(model.parameters(), d1, a);
      axpy(model.parameters(), d2, b);
      s.losses.push_back(safe_evaluate(evaluate, model));
      std::copy(saved.begin(), saved.end(), model.parameters().begin());
    }
  }
  return s;
}

double sharpness(const std::vector<double>& slice) {
  if (slice.size() < 3) throw InvalidArgument("sharpness: need at least three points");
  double worst = 0;
  for (std::size_t i = 1; i + 1 < slice.size(); ++i) {
    const double c = slice[i - 1] - 2 * slice[i] + slice[i + 1];
    if (std::isnan(c)) return std::numeric_limits<double>::quiet_NaN();
    worst = std::max(worst, std::abs(c));
  }
  return worst;
}

std::string render_surface(const Surface& surface, const GridHeader& header) {
  using detail::format_double;
  const auto alphas = surface.grid.points();
  std::string out = "# lo=" + format_double(surface.grid.lo) + "\n# hi=" + format_double(surface.grid.hi) +
                    "\n# steps=" + std::to_string(surface.grid.steps) + "\n# seed=" + std::to_string(header.seed) +
                    "\n# temperature=" + format_double(header.temperature) + "\n# phi=" + format_double(header.phi) +
                    "\n";
  if (!surface.two_dimensional) {
    out += "alpha,loss\n";
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      out += format_double(alphas[i]) + "," + format_double(surface.losses.at(i)) + "\n";
    }
  } else {
    out += "alpha,beta,loss\n";
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      for (std::size_t j = 0; j < alphas.size(); ++j) {
        out += format_double(alphas[i]) + "," + format_double(alphas[j]) + "," +
               format_double(surface.losses.at(i * alphas.size() + j)) + "\n";
      }
    }
  }
  return out;
}

void write_surface(const Surface& surface, const GridHeader& header, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << render_surface(surface, header);
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace landscape
ANNEALKD_END_NAMESPACE
