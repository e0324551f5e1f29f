#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "histokt/errors.hpp"

namespace histokt {

/// Compact SVD A = U diag(sigma) V^T with r = min(m, n) triples,
/// singular values sorted non-increasing. U is m x r, V is n x r, both
/// row-major. Computed in double precision by one-sided Jacobi
/// (Hestenes) rotations, which orthogonalize the columns of A.
struct SvdResult {
  std::size_t m = 0, n = 0, r = 0;
  std::vector<double> u;      // m x r
  std::vector<double> sigma;  // r
  std::vector<double> v;      // n x r
};

namespace detail {

/// One-sided Jacobi on B (rows x cols, cols <= rows): returns B with
/// orthogonal columns and the accumulated right rotations in V (cols x cols).
inline void hestenes_sweep_until_converged(std::vector<double>& b, std::size_t rows,
                                           std::size_t cols, std::vector<double>& v) {
  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 64;

  // column-major access into b: b[col * rows + row]
  auto col = [&](std::size_t c) { return b.data() + c * rows; };
  auto vcol = [&](std::size_t c) { return v.data() + c * cols; };

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double* bp = col(p);
        double* bq = col(q);
        double alpha = 0, beta = 0, gamma = 0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += bp[i] * bp[i];
          beta += bq[i] * bq[i];
          gamma += bp[i] * bq[i];
        }
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double bpi = bp[i];
          bp[i] = c * bpi - s * bq[i];
          bq[i] = s * bpi + c * bq[i];
        }
        double* vp = vcol(p);
        double* vq = vcol(q);
        for (std::size_t i = 0; i < cols; ++i) {
          const double vpi = vp[i];
          vp[i] = c * vpi - s * vq[i];
          vq[i] = s * vpi + c * vq[i];
        }
      }
    }
    if (!rotated) break;
  }
}

/// SVD for the tall-or-square case (m >= n), A row-major m x n.
inline SvdResult svd_tall(const double* a, std::size_t m, std::size_t n) {
  // Work in column-major so each column is contiguous for the rotations.
  std::vector<double> b(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) b[j * m + i] = a[i * n + j];

  std::vector<double> v(n * n, 0.0);  // column-major accumulator
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  hestenes_sweep_until_converged(b, m, n, v);

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < m; ++i) s += b[j * m + i] * b[j * m + i];
    sigma[j] = std::sqrt(s);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult out;
  out.m = m;
  out.n = n;
  out.r = n;
  out.sigma.resize(n);
  out.u.assign(m * n, 0.0);
  out.v.assign(n * n, 0.0);
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    const double s = sigma[j];
    out.sigma[jj] = s;
    if (s > 0) {
      for (std::size_t i = 0; i < m; ++i) out.u[i * n + jj] = b[j * m + i] / s;
    }
    for (std::size_t i = 0; i < n; ++i) out.v[i * n + jj] = v[j * n + i];
  }
  return out;
}

}  // namespace detail

inline SvdResult svd_compact(const std::vector<double>& a, std::size_t m, std::size_t n) {
  if (m == 0 || n == 0 || a.size() != m * n) throw DataError("svd: bad matrix dims");
  if (m >= n) return detail::svd_tall(a.data(), m, n);

  // Wide case: factorize A^T = V S U^T and swap the factors.
  std::vector<double> at(n * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) at[j * m + i] = a[i * n + j];
  SvdResult t = detail::svd_tall(at.data(), n, m);
  SvdResult out;
  out.m = m;
  out.n = n;
  out.r = t.r;  // = m
  out.sigma = std::move(t.sigma);
  out.u = std::move(t.v);  // m x m
  out.v = std::move(t.u);  // n x m
  return out;
}

}  // namespace histokt
