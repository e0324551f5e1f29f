#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "histokt/rng.hpp"
#include "histokt/tensor.hpp"

namespace histokt {

/// Kaiming-uniform fill: values ~ U(-b, b) with b = sqrt(6 / fan_in).
/// Deterministic in (key, dims).
inline Tensor kaiming_uniform(std::vector<std::uint32_t> dims, std::size_t fan_in,
                              std::uint64_t key) {
  Tensor t(std::move(dims));
  const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  Prng rng(key);
  for (auto& v : t.data) v = (2.0f * rng.next_float() - 1.0f) * bound;
  return t;
}

inline Tensor constant_tensor(std::vector<std::uint32_t> dims, float value) {
  Tensor t(std::move(dims));
  t.fill(value);
  return t;
}

}  // namespace histokt
