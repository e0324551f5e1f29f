#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <type_traits>
#include <vector>

namespace histokt {

/// SplitMix64 step: advances the state and returns the next value.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Stateless SplitMix64 finalizer, used to hash keys and counters.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Derives a child key from a seed and an arbitrary tag path, e.g.
/// derive_key(seed, "train", 3). Order-sensitive.
inline std::uint64_t derive_key(std::uint64_t seed) { return mix64(seed); }

template <typename Head, typename... Tail>
std::uint64_t derive_key(std::uint64_t seed, Head head, Tail... tail) {
  std::uint64_t h;
  if constexpr (std::is_convertible_v<Head, std::string_view>) {
    h = fnv1a64(std::string_view(head));
  } else {
    h = static_cast<std::uint64_t>(head);
  }
  return derive_key(mix64(seed ^ mix64(h)), tail...);
}

/// Counter-based generator: value i is mix64(key + i * golden ratio).
/// Random access, no sequential state; identical keys give identical
/// streams on every platform.
struct CounterRng {
  std::uint64_t key = 0;

  std::uint64_t at(std::uint64_t counter) const {
    return mix64(key ^ (counter * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
  }
};

/// Sequential PRNG over SplitMix64, seeded from a derived key.
struct Prng {
  std::uint64_t state = 0;

  explicit Prng(std::uint64_t seed = 0) : state(mix64(seed)) {}

  std::uint64_t next_u64() { return splitmix64(state); }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  /// Uniform integer in [0, n). Fixed multiply-shift reduction.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Uniform in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Standard normal via Box-Muller.
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
};

/// Deterministic Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& v, Prng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace histokt
