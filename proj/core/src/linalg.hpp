#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace padrec::linalg {

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// C[n x m] += A[n x k] * B[k x m]. Four rows of C share each load of B.
inline void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* A, const double* B, double* C) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* c0 = C + i * m;
    double* c1 = c0 + m;
    double* c2 = c1 + m;
    double* c3 = c2 + m;
    const double* a0 = A + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    for (std::size_t p = 0; p < k; ++p) {
      const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
      const double* b = B + p * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double bj = b[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < n; ++i) {
    double* c = C + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      const double* b = B + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += a * b[j];
    }
  }
}

// C[n x k] += G[n x m] * B^T where B is [k x m]
inline void gemm_nt(std::size_t n, std::size_t m, std::size_t k, const double* G, const double* B, double* C) {
  std::vector<double> bt(k * m);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = B[p * m + j];
  gemm_nn(n, m, k, G, bt.data(), C);
}

// C[k x m] += A^T * G where A is [n x k], G is [n x m]
inline void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* A, const double* G, double* C) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* g0 = G + i * m;
    const double* g1 = g0 + m;
    const double* g2 = g1 + m;
    const double* g3 = g2 + m;
    const double* a0 = A + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    for (std::size_t p = 0; p < k; ++p) {
      const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
      double* c = C + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += x0 * g0[j] + x1 * g1[j] + x2 * g2[j] + x3 * g3[j];
    }
  }
  for (; i < n; ++i) {
    const double* g = G + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      double* c = C + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += a * g[j];
    }
  }
}

inline void softmax(std::span<const double> x, std::span<double> y) {
  const double mx = *std::max_element(x.begin(), x.end());
  double s = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    y[j] = std::exp(x[j] - mx);
    s += y[j];
  }
  for (double& v : y) v /= s;
}

}  // namespace padrec::linalg
