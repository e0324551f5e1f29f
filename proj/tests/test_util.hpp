#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "histokt/checkpoint.hpp"
#include "histokt/rng.hpp"
#include "histokt/tensor.hpp"

namespace testutil {

inline histokt::Tensor random_tensor(std::vector<std::uint32_t> dims, std::uint64_t seed,
                                     float scale = 1.0f) {
  histokt::Tensor t(std::move(dims));
  histokt::Prng rng(seed);
  for (auto& v : t.data) v = (2.0f * rng.next_float() - 1.0f) * scale;
  return t;
}

inline histokt::Checkpoint random_checkpoint(std::uint64_t seed) {
  histokt::Checkpoint c;
  c.arch_id = "test-arch";
  c.class_count = 4;
  c.meta["source"] = "unit-test";
  c.add("conv1.weight", random_tensor({3, 3, 2, 5}, seed));
  c.add("bn1.gamma", random_tensor({5}, seed + 1));
  c.add("head.fc.weight", random_tensor({4, 5}, seed + 2));
  c.add("head.fc.bias", random_tensor({4}, seed + 3));
  return c;
}

/// Scratch directory under the system temp root, unique per tag.
inline std::string scratch_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / ("histokt_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

inline double rel_frobenius(const std::vector<float>& a, const std::vector<float>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace testutil
