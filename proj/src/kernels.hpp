#pragma once

#include <cstddef>

#include "annealkd/precision.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace kernels {

// Row-major GEMM variants. All of them accumulate into C.
// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel, stride, padding;
  std::size_t out_height, out_width;

  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_height * out_width; }
};

// One image (C,H,W) -> column matrix (C*K*K, Ho*Wo).
void im2col(const ConvGeometry& g, const Real* image, Real* col);
// Adjoint of im2col: scatters-and-adds the column matrix back into the image.
void col2im(const ConvGeometry& g, const Real* col, Real* image);

}  // namespace kernels
ANNEALKD_END_NAMESPACE
