// Test-only reference implementations, kept independent of the library's
// numerics so they can act as oracles.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace oracle {

/// Dense row-major double matrix for oracle math.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Symmetric eigendecomposition by the classical two-sided Jacobi method.
/// Returns eigenvalues (descending) and eigenvectors as columns of V.
inline void jacobi_eigh(Mat s, std::vector<double>& eigvals, Mat& eigvecs) {
  const std::size_t n = s.rows;
  eigvecs = Mat(n, n);
  for (std::size_t i = 0; i < n; ++i) eigvecs.at(i, i) = 1.0;

  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += s.at(p, q) * s.at(p, q);
    if (off < 1e-28) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = s.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double app = s.at(p, p);
        const double aqq = s.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double sip = s.at(i, p), siq = s.at(i, q);
          s.at(i, p) = c * sip - sn * siq;
          s.at(i, q) = sn * sip + c * siq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double spi = s.at(p, i), sqi = s.at(q, i);
          s.at(p, i) = c * spi - sn * sqi;
          s.at(q, i) = sn * spi + c * sqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = eigvecs.at(i, p), viq = eigvecs.at(i, q);
          eigvecs.at(i, p) = c * vip - sn * viq;
          eigvecs.at(i, q) = sn * vip + c * viq;
        }
      }
    }
  }

  eigvals.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigvals[i] = s.at(i, i);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return eigvals[a] > eigvals[b]; });
  std::vector<double> ev(n);
  Mat vv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    ev[j] = eigvals[order[j]];
    for (std::size_t i = 0; i < n; ++i) vv.at(i, j) = eigvecs.at(i, order[j]);
  }
  eigvals = std::move(ev);
  eigvecs = std::move(vv);
}

/// Singular values of A, descending.
inline std::vector<double> singular_values(const Mat& a) {
  const std::size_t n = a.cols;
  Mat ata(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < a.rows; ++k) acc += a.at(k, i) * a.at(k, j);
      ata.at(i, j) = acc;
    }
  std::vector<double> evals;
  Mat evecs;
  jacobi_eigh(ata, evals, evecs);
  std::vector<double> sv(n);
  for (std::size_t i = 0; i < n; ++i) sv[i] = std::sqrt(std::max(0.0, evals[i]));
  return sv;
}

/// Best rank-r approximation of A (Eckart-Young) computed from the
/// eigendecomposition of A^T A. Brute force, small matrices only.
inline Mat rank_truncation(const Mat& a, std::size_t r) {
  const std::size_t n = a.cols;
  Mat ata(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < a.rows; ++k) acc += a.at(k, i) * a.at(k, j);
      ata.at(i, j) = acc;
    }

  std::vector<double> evals;
  Mat v;
  jacobi_eigh(ata, evals, v);

  Mat out(a.rows, a.cols);
  const std::size_t terms = std::min(r, n);
  for (std::size_t t = 0; t < terms; ++t) {
    const double sigma = std::sqrt(std::max(0.0, evals[t]));
    if (sigma <= 0) continue;
    // u_t = A v_t / sigma
    std::vector<double> u(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += a.at(i, j) * v.at(j, t);
      u[i] = acc / sigma;
    }
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += sigma * u[i] * v.at(j, t);
  }
  return out;
}

}  // namespace oracle
