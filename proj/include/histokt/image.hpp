#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "histokt/errors.hpp"

namespace histokt {

/// 8-bit RGB raster with a physical pixel size in microns.
struct ImageRGB {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel
  double resolution_um = 1.0;

  ImageRGB() = default;
  ImageRGB(std::uint32_t w, std::uint32_t h, double res_um = 1.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0),
        resolution_um(res_um) {
    if (w == 0 || h == 0) throw DataError("image dims must be positive");
    if (!(res_um > 0)) throw DataError("resolution_um must be positive");
  }

  std::uint8_t* px(std::uint32_t x, std::uint32_t y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* px(std::uint32_t x, std::uint32_t y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

inline std::uint32_t round_half_up_to_u32(double x) {
  return static_cast<std::uint32_t>(std::floor(x + 0.5));
}

/// Symmetric reflection index (edge pixel repeated): ... 1 0 | 0 1 2 | 2 1 ...
/// Valid for arbitrarily large deficits via the period-2n extension.
inline std::uint32_t reflect_index(std::int64_t i, std::uint32_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * static_cast<std::int64_t>(n);
  std::int64_t j = ((i % period) + period) % period;
  return static_cast<std::uint32_t>(j < n ? j : period - 1 - j);
}

namespace detail {

inline std::uint8_t quantize(float v) {
  const float r = std::floor(v + 0.5f);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0f, 255.0f));
}

/// Separable Gaussian blur on float planes (3 interleaved channels),
/// symmetric-reflect boundary.
inline void gaussian_blur_inplace(std::vector<float>& img, std::uint32_t w, std::uint32_t h,
                                  double sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    kernel[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (auto& k : kernel) k = static_cast<float>(k / sum);

  std::vector<float> tmp(img.size());
  // horizontal
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      float acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        const std::uint32_t sx = reflect_index(static_cast<std::int64_t>(x) + i, w);
        const float* p = img.data() + (static_cast<std::size_t>(y) * w + sx) * 3;
        const float k = kernel[i + radius];
        acc[0] += k * p[0];
        acc[1] += k * p[1];
        acc[2] += k * p[2];
      }
      float* q = tmp.data() + (static_cast<std::size_t>(y) * w + x) * 3;
      q[0] = acc[0];
      q[1] = acc[1];
      q[2] = acc[2];
    }
  }
  // vertical
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      float acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        const std::uint32_t sy = reflect_index(static_cast<std::int64_t>(y) + i, h);
        const float* p = tmp.data() + (static_cast<std::size_t>(sy) * w + x) * 3;
        const float k = kernel[i + radius];
        acc[0] += k * p[0];
        acc[1] += k * p[1];
        acc[2] += k * p[2];
      }
      float* q = img.data() + (static_cast<std::size_t>(y) * w + x) * 3;
      q[0] = acc[0];
      q[1] = acc[1];
      q[2] = acc[2];
    }
  }
}

}  // namespace detail

/// Rescales to a target physical resolution. Output dims are
/// round-half-up(dim * res/target), clamped to >= 1. Bilinear sampling;
/// on downscale a Gaussian prefilter with sigma = ((1/scale)-1)/2 is
/// applied first as an anti-alias step.
inline ImageRGB rescale_image(const ImageRGB& img, double target_resolution_um) {
  if (!(target_resolution_um > 0)) throw DataError("target resolution must be positive");
  const double scale = img.resolution_um / target_resolution_um;
  const std::uint32_t out_w =
      std::max<std::uint32_t>(1, round_half_up_to_u32(img.width * scale));
  const std::uint32_t out_h =
      std::max<std::uint32_t>(1, round_half_up_to_u32(img.height * scale));

  if (out_w == img.width && out_h == img.height) {
    ImageRGB same = img;
    same.resolution_um = target_resolution_um;
    return same;
  }

  std::vector<float> src(img.pixels.begin(), img.pixels.end());
  if (scale < 1.0) {
    const double sigma = ((1.0 / scale) - 1.0) / 2.0;
    detail::gaussian_blur_inplace(src, img.width, img.height, sigma);
  }

  ImageRGB out(out_w, out_h, target_resolution_um);
  const double fx = static_cast<double>(img.width) / out_w;
  const double fy = static_cast<double>(img.height) / out_h;
  for (std::uint32_t oy = 0; oy < out_h; ++oy) {
    const double sy = std::clamp((oy + 0.5) * fy - 0.5, 0.0, img.height - 1.0);
    const std::uint32_t y0 = static_cast<std::uint32_t>(sy);
    const std::uint32_t y1 = std::min(y0 + 1, img.height - 1);
    const float wy = static_cast<float>(sy - y0);
    for (std::uint32_t ox = 0; ox < out_w; ++ox) {
      const double sx = std::clamp((ox + 0.5) * fx - 0.5, 0.0, img.width - 1.0);
      const std::uint32_t x0 = static_cast<std::uint32_t>(sx);
      const std::uint32_t x1 = std::min(x0 + 1, img.width - 1);
      const float wx = static_cast<float>(sx - x0);
      const float* p00 = src.data() + (static_cast<std::size_t>(y0) * img.width + x0) * 3;
      const float* p01 = src.data() + (static_cast<std::size_t>(y0) * img.width + x1) * 3;
      const float* p10 = src.data() + (static_cast<std::size_t>(y1) * img.width + x0) * 3;
      const float* p11 = src.data() + (static_cast<std::size_t>(y1) * img.width + x1) * 3;
      std::uint8_t* q = out.px(ox, oy);
      for (int c = 0; c < 3; ++c) {
        const float top = p00[c] + (p01[c] - p00[c]) * wx;
        const float bot = p10[c] + (p11[c] - p10[c]) * wx;
        q[c] = detail::quantize(top + (bot - top) * wy);
      }
    }
  }
  return out;
}

/// Pads each deficient axis up to the minimum by mirror reflection,
/// splitting the padding evenly with the extra pixel on the bottom/right.
/// No-op when the image already meets the minimum.
inline ImageRGB reflection_wrap(const ImageRGB& img, std::uint32_t min_w, std::uint32_t min_h) {
  if (img.width >= min_w && img.height >= min_h) return img;
  const std::uint32_t out_w = std::max(img.width, min_w);
  const std::uint32_t out_h = std::max(img.height, min_h);
  const std::uint32_t pad_left = (out_w - img.width) / 2;
  const std::uint32_t pad_top = (out_h - img.height) / 2;

  ImageRGB out(out_w, out_h, img.resolution_um);
  for (std::uint32_t y = 0; y < out_h; ++y) {
    const std::uint32_t sy =
        reflect_index(static_cast<std::int64_t>(y) - pad_top, img.height);
    for (std::uint32_t x = 0; x < out_w; ++x) {
      const std::uint32_t sx =
          reflect_index(static_cast<std::int64_t>(x) - pad_left, img.width);
      const std::uint8_t* p = img.px(sx, sy);
      std::uint8_t* q = out.px(x, y);
      q[0] = p[0];
      q[1] = p[1];
      q[2] = p[2];
    }
  }
  return out;
}

/// Anchor positions along one axis: 0, stride, 2*stride, ... while the
/// patch fits, plus the edge anchor (dim - patch) if not already present.
inline std::vector<std::uint32_t> tile_anchors(std::uint32_t dim, std::uint32_t patch,
                                               std::uint32_t stride) {
  std::vector<std::uint32_t> anchors;
  for (std::uint32_t pos = 0; pos + patch <= dim; pos += stride) {
    anchors.push_back(pos);
    if (stride == 0) break;
  }
  const std::uint32_t edge = dim - patch;
  if (anchors.empty() || anchors.back() != edge) anchors.push_back(edge);
  return anchors;
}

struct TilePos {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
};

/// Tile positions in row-major order (rows outer). Requires the image to
/// be at least patch-sized on both axes; callers reflection_wrap first.
inline std::vector<TilePos> tile_grid(std::uint32_t width, std::uint32_t height,
                                      std::uint32_t patch, double overlap_frac) {
  if (!(overlap_frac >= 0.0 && overlap_frac < 1.0)) {
    throw DataError("overlap_frac must be in [0,1)");
  }
  if (width < patch || height < patch) {
    throw DataError("image smaller than patch; reflection_wrap first");
  }
  const std::uint32_t stride =
      std::max<std::uint32_t>(1, round_half_up_to_u32(patch * (1.0 - overlap_frac)));
  const auto xs = tile_anchors(width, patch, stride);
  const auto ys = tile_anchors(height, patch, stride);
  std::vector<TilePos> grid;
  grid.reserve(xs.size() * ys.size());
  for (std::uint32_t y : ys)
    for (std::uint32_t x : xs) grid.push_back({x, y});
  return grid;
}

inline ImageRGB crop(const ImageRGB& img, std::uint32_t x0, std::uint32_t y0,
                     std::uint32_t w, std::uint32_t h) {
  if (x0 + w > img.width || y0 + h > img.height) throw DataError("crop out of bounds");
  ImageRGB out(w, h, img.resolution_um);
  for (std::uint32_t y = 0; y < h; ++y) {
    const std::uint8_t* src = img.px(x0, y0 + y);
    std::copy(src, src + static_cast<std::size_t>(w) * 3, out.px(0, y));
  }
  return out;
}

inline std::vector<std::pair<TilePos, ImageRGB>> extract_patches(const ImageRGB& img,
                                                                 std::uint32_t patch,
                                                                 double overlap_frac) {
  std::vector<std::pair<TilePos, ImageRGB>> out;
  for (TilePos pos : tile_grid(img.width, img.height, patch, overlap_frac)) {
    out.emplace_back(pos, crop(img, pos.x, pos.y, patch, patch));
  }
  return out;
}

/// Linearly interpolated percentile over a sorted copy of the values,
/// numpy-style: rank = pct/100 * (n-1).
inline double percentile_sorted(const std::vector<float>& sorted, double pct) {
  if (sorted.empty()) throw DataError("percentile of empty data");
  const double rank = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

/// Background test: the luma span between the lo/hi percentiles covers
/// less than `frac` of the 0-255 range. Rec.709 luma.
inline bool is_low_contrast(const ImageRGB& img, double lo_pct = 5.0, double hi_pct = 99.0,
                            double frac = 0.05) {
  if (!(lo_pct >= 0 && lo_pct < hi_pct && hi_pct <= 100)) {
    throw DataError("percentile bounds must satisfy 0 <= lo < hi <= 100");
  }
  std::vector<float> luma;
  luma.reserve(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    luma.push_back(0.2125f * img.pixels[i] + 0.7154f * img.pixels[i + 1] +
                   0.0721f * img.pixels[i + 2]);
  }
  std::sort(luma.begin(), luma.end());
  const double span = percentile_sorted(luma, hi_pct) - percentile_sorted(luma, lo_pct);
  return span / 255.0 < frac;
}

}  // namespace histokt
