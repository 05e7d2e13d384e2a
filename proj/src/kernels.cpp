#include "kernels.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace kernels {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a + p * m;
    const Real* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = arow[i];
      if (av == Real(0)) continue;
      Real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      // Eight independent partial sums so the loop vectorizes.
      Real lane[8] = {};
      std::size_t p = 0;
      for (; p + 8 <= k; p += 8) {
        for (std::size_t l = 0; l < 8; ++l) lane[l] += arow[p + l] * brow[p + l];
      }
      Real acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
      for (; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

void im2col(const ConvGeometry& g, const Real* image, Real* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        Real* out = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          Real* orow = out + oy * g.out_width;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            for (std::size_t ox = 0; ox < g.out_width; ++ox) orow[ox] = 0;
            continue;
          }
          const Real* irow = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            orow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? Real(0) : irow[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const Real* col, Real* image) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const Real* in = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          Real* irow = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const Real* crow = in + oy * g.out_width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) irow[ix] += crow[ox];
          }
        }
      }
    }
  }
}

}  // namespace kernels
ANNEALKD_END_NAMESPACE
