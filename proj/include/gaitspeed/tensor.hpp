#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "gaitspeed/error.hpp"

namespace gaitspeed {

/// Dense row-major tensor of doubles. Training runs in double precision;
/// files store single precision.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    t.shape = std::move(shape);
    t.v.assign(n, 0.0);
    return t;
  }

  std::size_t size() const { return v.size(); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }
  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

namespace detail {

/// Reusable per-thread scratch; spares the hot loops repeated multi-MB
/// allocations. Slots must not be nested within one call chain.
inline double* scratch(int slot, std::size_t n) {
  thread_local std::vector<double> bufs[4];
  auto& b = bufs[static_cast<std::size_t>(slot)];
  if (b.size() < n) b.resize(n);
  return b.data();
}

// C[M,N] = A[M,K] * B[K,N], optionally accumulating into C. Four C rows are
// produced per pass so each B load is reused four times; the inner loops
// vectorize under -O3 because every c[n] update is independent.
inline void gemm(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B,
                 double* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  std::size_t m = 0;
  for (; m + 4 <= M; m += 4) {
    double* c0 = C + m * N;
    double* c1 = c0 + N;
    double* c2 = c1 + N;
    double* c3 = c2 + N;
    const double* a = A + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double a0 = a[k], a1 = a[K + k], a2 = a[2 * K + k], a3 = a[3 * K + k];
      const double* b = B + k * N;
      for (std::size_t n = 0; n < N; ++n) {
        const double bv = b[n];
        c0[n] += a0 * bv;
        c1[n] += a1 * bv;
        c2[n] += a2 * bv;
        c3[n] += a3 * bv;
      }
    }
  }
  for (; m < M; ++m) {
    const double* a = A + m * K;
    double* c = C + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[k];
      const double* b = B + k * N;
      for (std::size_t n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[M,N] = A[M,K] * B[N,K]^T. B is transposed into scratch first; the
// row-dot form compiles to a serial reduction, an order of magnitude slower.
inline void gemm_abt(std::size_t M, std::size_t K, std::size_t N, const double* A,
                     const double* B, double* C, bool accumulate) {
  double* bt = scratch(3, K * N);
  for (std::size_t n = 0; n < N; ++n) {
    const double* b = B + n * K;
    for (std::size_t k = 0; k < K; ++k) bt[k * N + n] = b[k];
  }
  gemm(M, K, N, A, bt, C, accumulate);
}

// C[M,N] = A[K,M]^T * B[K,N]. C rows are produced four at a time in one pass
// so B stays cache-resident across the m loop.
inline void gemm_atb(std::size_t M, std::size_t K, std::size_t N, const double* A,
                     const double* B, double* C, bool accumulate) {
  std::size_t m = 0;
  for (; m + 4 <= M; m += 4) {
    double* c0 = C + m * N;
    double* c1 = c0 + N;
    double* c2 = c1 + N;
    double* c3 = c2 + N;
    if (!accumulate) std::fill(c0, c3 + N, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double* a = A + k * M + m;
      const double a0 = a[0], a1 = a[1], a2 = a[2], a3 = a[3];
      const double* b = B + k * N;
      for (std::size_t n = 0; n < N; ++n) {
        const double bv = b[n];
        c0[n] += a0 * bv;
        c1[n] += a1 * bv;
        c2[n] += a2 * bv;
        c3[n] += a3 * bv;
      }
    }
  }
  for (; m < M; ++m) {
    double* c = C + m * N;
    if (!accumulate) std::fill(c, c + N, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double av = A[k * M + m];
      const double* b = B + k * N;
      for (std::size_t n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

}  // namespace detail

}  // namespace gaitspeed
