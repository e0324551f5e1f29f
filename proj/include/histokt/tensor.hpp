#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "histokt/errors.hpp"

namespace histokt {

/// Dense n-dimensional array, row-major over `dims`.
/// T is float for storage and training, double for high-precision checks.
template <typename T>
struct TensorT {
  std::vector<std::uint32_t> dims;
  std::vector<T> data;

  TensorT() = default;

  explicit TensorT(std::vector<std::uint32_t> d) : dims(std::move(d)) {
    data.assign(checked_numel(dims), T(0));
  }

  TensorT(std::vector<std::uint32_t> d, std::vector<T> values)
      : dims(std::move(d)), data(std::move(values)) {
    if (data.size() != checked_numel(dims)) {
      throw DataError("tensor data length does not match dims product");
    }
  }

  static std::size_t checked_numel(const std::vector<std::uint32_t>& d) {
    if (d.empty()) throw DataError("tensor dims must be non-empty");
    std::size_t n = 1;
    for (std::uint32_t e : d) {
      if (e == 0) throw DataError("tensor extents must be >= 1");
      n *= e;
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return dims.size(); }

  bool same_shape(const TensorT& other) const { return dims == other.dims; }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  /// Flat index for a 4-D tensor with dims (d0,d1,d2,d3).
  std::size_t at4(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) const {
    return ((i0 * dims[1] + i1) * dims[2] + i2) * dims[3] + i3;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.dims = dims;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

inline std::string dims_to_string(const std::vector<std::uint32_t>& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  s += ")";
  return s;
}

}  // namespace histokt
