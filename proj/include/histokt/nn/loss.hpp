#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "histokt/errors.hpp"

namespace histokt::nn {

template <typename T>
struct LossResult {
  T loss = T(0);
  std::vector<T> dlogits;
};

/// Mean softmax cross-entropy over the batch; gradient (softmax-onehot)/N.
template <typename T>
LossResult<T> loss_ce(const std::vector<T>& logits, std::size_t n, std::uint32_t classes,
                      const std::vector<int>& targets) {
  if (targets.size() != n) throw DataError("loss_ce: target count mismatch");
  if (logits.size() != n * classes) throw DataError("loss_ce: logits size mismatch");
  LossResult<T> out;
  out.dlogits.assign(logits.size(), T(0));
  const T inv_n = T(1) / static_cast<T>(n);
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::uint32_t>(t) >= classes) {
      throw DataError("loss_ce: target index out of range");
    }
    const T* z = logits.data() + i * classes;
    T* g = out.dlogits.data() + i * classes;
    T zmax = z[0];
    for (std::uint32_t k = 1; k < classes; ++k) zmax = std::max(zmax, z[k]);
    T sum = T(0);
    for (std::uint32_t k = 0; k < classes; ++k) sum += std::exp(z[k] - zmax);
    const T lse = zmax + std::log(sum);
    loss += static_cast<double>(lse - z[t]);
    for (std::uint32_t k = 0; k < classes; ++k) {
      const T softmax = std::exp(z[k] - lse);
      g[k] = (softmax - (static_cast<std::uint32_t>(t) == k ? T(1) : T(0))) * inv_n;
    }
  }
  out.loss = static_cast<T>(loss / static_cast<double>(n));
  return out;
}

/// Weighted one-vs-all (per-class sigmoid) cross-entropy for multi-label
/// targets: L = (1/(N*C)) sum_n sum_c w_c * BCE(sigma(z_nc), y_nc).
template <typename T>
LossResult<T> loss_weighted_ova(const std::vector<T>& logits, std::size_t n,
                                std::uint32_t classes,
                                const std::vector<std::uint8_t>& multihot,
                                const std::vector<T>& class_weights) {
  if (multihot.size() != n * classes) throw DataError("loss_ova: target size mismatch");
  if (logits.size() != n * classes) throw DataError("loss_ova: logits size mismatch");
  if (class_weights.size() != classes) throw DataError("loss_ova: weight length mismatch");
  LossResult<T> out;
  out.dlogits.assign(logits.size(), T(0));
  const T scale = T(1) / static_cast<T>(n * classes);
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t c = 0; c < classes; ++c) {
      const T z = logits[i * classes + c];
      const T y = multihot[i * classes + c] ? T(1) : T(0);
      const T w = class_weights[c];
      // max(z,0) - z*y + log1p(exp(-|z|)) is the stable BCE-with-logits.
      const T bce = std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
      loss += static_cast<double>(w * bce);
      const T sigma = T(1) / (T(1) + std::exp(-z));
      out.dlogits[i * classes + c] = w * (sigma - y) * scale;
    }
  }
  out.loss = static_cast<T>(loss / static_cast<double>(n * classes));
  return out;
}

/// Inverse-frequency class weights w_c = N_total / (C * N_c), clamped to
/// [0.1, 10]. N_c counts positive samples of class c.
template <typename T>
std::vector<T> inverse_frequency_weights(const std::vector<std::uint8_t>& multihot,
                                         std::size_t n, std::uint32_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t c = 0; c < classes; ++c) {
      if (multihot[i * classes + c]) counts[c] += 1;
    }
  }
  std::vector<T> w(classes);
  for (std::uint32_t c = 0; c < classes; ++c) {
    const double raw = counts[c] == 0
                           ? 10.0
                           : static_cast<double>(n) /
                                 (static_cast<double>(classes) * static_cast<double>(counts[c]));
    w[c] = static_cast<T>(std::clamp(raw, 0.1, 10.0));
  }
  return w;
}

}  // namespace histokt::nn
