#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <vector>

// Register-tiled double GEMM tuned for one core.
//
// gemm_nn_acc accumulates every output element along strictly ascending k
// with a single fma chain, so its results are bit-identical to a naive
// triple loop that uses std::fma the same way.

namespace grn {
namespace kern {

// bp is a packed [kmax-k0 x bw] panel of B columns [n0, n0+bw); coff is the
// column offset of this tile inside the panel.
template <int MR, int NR>
inline void micro_nn(const double* A, const double* bp, int bw, double* C, int K, int N, int k0,
                     int kmax, int m, int n, int coff) {
  double acc[MR][NR];
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) acc[i][j] = C[static_cast<std::size_t>(m + i) * N + n + j];
  const double* b = bp + coff;
  for (int k = k0; k < kmax; ++k, b += bw) {
    for (int i = 0; i < MR; ++i) {
      const double a = A[static_cast<std::size_t>(m + i) * K + k];
      for (int j = 0; j < NR; ++j) acc[i][j] = std::fma(a, b[j], acc[i][j]);
    }
  }
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) C[static_cast<std::size_t>(m + i) * N + n + j] = acc[i][j];
}

template <int MR>
inline void rows_nn(const double* A, const double* bp, int bw, double* C, int K, int N, int k0,
                    int kmax, int m, int n0, int n1) {
  int n = n0;
  for (; n + 24 <= n1; n += 24) micro_nn<MR, 24>(A, bp, bw, C, K, N, k0, kmax, m, n, n - n0);
  for (; n + 8 <= n1; n += 8) micro_nn<MR, 8>(A, bp, bw, C, K, N, k0, kmax, m, n, n - n0);
  for (; n + 4 <= n1; n += 4) micro_nn<MR, 4>(A, bp, bw, C, K, N, k0, kmax, m, n, n - n0);
  for (; n < n1; ++n) {
    for (int i = 0; i < MR; ++i) {
      double s = C[static_cast<std::size_t>(m + i) * N + n];
      const double* b = bp + (n - n0);
      for (int k = k0; k < kmax; ++k, b += bw)
        s = std::fma(A[static_cast<std::size_t>(m + i) * K + k], *b, s);
      C[static_cast<std::size_t>(m + i) * N + n] = s;
    }
  }
}

}  // namespace kern

// C[M x N] += A[M x K] * B[K x N]; per-element accumulation strictly k-ascending.
// B panels are packed contiguously so the hot loops read dense rows.
inline void gemm_nn_acc(const double* A, const double* B, double* C, int M, int K, int N) {
  constexpr int KB = 512;  // k panel height
  constexpr int NB = 240;  // column panel: KB x NB of B (~1MB) stays hot in L2
  thread_local std::vector<double> bpack;
  bpack.resize(static_cast<std::size_t>(KB) * NB);
  for (int k0 = 0; k0 < K; k0 += KB) {
    const int kmax = k0 + KB < K ? k0 + KB : K;
    for (int n0 = 0; n0 < N; n0 += NB) {
      const int nmax = n0 + NB < N ? n0 + NB : N;
      const int bw = nmax - n0;
      for (int k = k0; k < kmax; ++k)
        std::memcpy(bpack.data() + static_cast<std::size_t>(k - k0) * bw,
                    B + static_cast<std::size_t>(k) * N + n0, sizeof(double) * bw);
      const double* bp = bpack.data();
      int m = 0;
      for (; m + 4 <= M; m += 4) kern::rows_nn<4>(A, bp, bw, C, K, N, k0, kmax, m, n0, nmax);
      for (; m < M; ++m) kern::rows_nn<1>(A, bp, bw, C, K, N, k0, kmax, m, n0, nmax);
    }
  }
}

// Single-chain dot product (matches a naive loop bit for bit).
inline double dot_strict(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s = std::fma(a[i], b[i], s);
  return s;
}

}  // namespace grn
