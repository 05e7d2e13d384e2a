#pragma once

// Scalar type selection. The default build uses 32-bit floats; defining
// ANNEALKD_FLOAT64 switches every tensor to 64-bit. The two variants live in
// distinct inline namespaces so they can coexist in one executable.

#ifdef ANNEALKD_FLOAT64
#define ANNEALKD_ABI_NS f64
#else
#define ANNEALKD_ABI_NS f32
#endif

#define ANNEALKD_BEGIN_NAMESPACE \
  namespace annealkd {           \
  inline namespace ANNEALKD_ABI_NS {
#define ANNEALKD_END_NAMESPACE \
  }                            \
  }

ANNEALKD_BEGIN_NAMESPACE

#ifdef ANNEALKD_FLOAT64
using Real = double;
#else
using Real = float;
#endif

ANNEALKD_END_NAMESPACE
