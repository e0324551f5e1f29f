#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace histokt::nn {

inline std::uint32_t conv_out_dim(std::uint32_t dim, std::uint32_t k, std::uint32_t stride,
                                  std::uint32_t pad) {
  return (dim + 2 * pad - k) / stride + 1;
}

namespace detail {

/// One register tile: C[r0..r0+RB, j0..j0+JB) += A[r0.., :] * B[:, j0..).
/// Accumulators live in a fixed-size local array so the compiler keeps
/// them in vector registers across the k loop.
template <typename T, int RB, int JB>
inline void gemm_tile(const T* __restrict a, const T* __restrict b, T* __restrict c,
                      std::size_t inner, std::size_t cols, std::size_t r0, std::size_t j0) {
  T acc[RB][JB];
  for (int r = 0; r < RB; ++r)
    for (int j = 0; j < JB; ++j) acc[r][j] = c[(r0 + r) * cols + j0 + j];
  for (std::size_t k = 0; k < inner; ++k) {
    const T* __restrict bk = b + k * cols + j0;
    for (int r = 0; r < RB; ++r) {
      T* __restrict accr = acc[r];
      const T av = a[(r0 + r) * inner + k];
#pragma omp simd
      for (int j = 0; j < JB; ++j) accr[j] += av * bk[j];
    }
  }
  for (int r = 0; r < RB; ++r)
    for (int j = 0; j < JB; ++j) c[(r0 + r) * cols + j0 + j] = acc[r][j];
}

}  // namespace detail

/// C[r,:] (+)= A[r,:] * B — row-major GEMM, register-tiled with 16- and
/// 8-wide column passes (conv channel counts are multiples of 8 here).
template <typename T>
void gemm_rm(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t rows,
             std::size_t inner, std::size_t cols, bool zero_first) {
  constexpr int RB = 4;
  if (zero_first) std::fill(c, c + rows * cols, T(0));

  const std::size_t r_main = rows - rows % RB;
  const std::size_t j16 = cols - cols % 16;
  const std::size_t j8 = cols - cols % 8;
  for (std::size_t r0 = 0; r0 < r_main; r0 += RB) {
    std::size_t j0 = 0;
    for (; j0 < j16; j0 += 16) detail::gemm_tile<T, RB, 16>(a, b, c, inner, cols, r0, j0);
    for (; j0 < j8; j0 += 8) detail::gemm_tile<T, RB, 8>(a, b, c, inner, cols, r0, j0);
    if (j0 < cols) {
      for (int dr = 0; dr < RB; ++dr) {
        const std::size_t r = r0 + dr;
        const T* __restrict arow = a + r * inner;
        T* __restrict crow = c + r * cols;
        for (std::size_t k = 0; k < inner; ++k) {
          const T av = arow[k];
          const T* __restrict brow = b + k * cols;
          for (std::size_t j = j0; j < cols; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
  // Row tail over the full width.
  for (std::size_t r = r_main; r < rows; ++r) {
    std::size_t j0 = 0;
    for (; j0 < j16; j0 += 16) detail::gemm_tile<T, 1, 16>(a, b, c, inner, cols, r, j0);
    for (; j0 < j8; j0 += 8) detail::gemm_tile<T, 1, 8>(a, b, c, inner, cols, r, j0);
    if (j0 < cols) {
      const T* __restrict arow = a + r * inner;
      T* __restrict crow = c + r * cols;
      for (std::size_t k = 0; k < inner; ++k) {
        const T av = arow[k];
        const T* __restrict brow = b + k * cols;
        for (std::size_t j = j0; j < cols; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

/// out[r,k] = sum_o dy[r,o] * b[k,o], i.e. out = dy * b^T. Computed by
/// transposing b into scratch once, then running the tiled kernel.
template <typename T>
void gemm_a_bt(const T* __restrict dy, const T* __restrict b, T* __restrict out,
               std::size_t rows, std::size_t no, std::size_t k_cols,
               std::vector<T>& bt_scratch) {
  bt_scratch.resize(no * k_cols);
  for (std::size_t k = 0; k < k_cols; ++k)
    for (std::size_t o = 0; o < no; ++o) bt_scratch[o * k_cols + k] = b[k * no + o];
  gemm_rm(dy, bt_scratch.data(), out, rows, no, k_cols, /*zero_first=*/true);
}

/// dw[k,o] += sum_r a[r,k] * dy[r,o] — saxpy over rows into dw rows.
template <typename T>
void gemm_at_b(const T* __restrict a, const T* __restrict dy, T* __restrict dw,
               std::size_t rows, std::size_t k_cols, std::size_t no) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* __restrict arow = a + r * k_cols;
    const T* __restrict dyrow = dy + r * no;
    for (std::size_t k = 0; k < k_cols; ++k) {
      const T av = arow[k];
      T* __restrict dwrow = dw + k * no;
      for (std::size_t o = 0; o < no; ++o) dwrow[o] += av * dyrow[o];
    }
  }
}

/// Gathers conv patches from NHWC input into rows of (kx*kh + ky)*C + c
/// order, matching the (w,h,n_i,n_o) weight layout viewed as K x n_o.
template <typename T>
void im2col_nhwc(const T* x, std::size_t n, std::uint32_t h, std::uint32_t w, std::uint32_t c,
                 std::uint32_t k, std::uint32_t stride, std::uint32_t pad, T* cols) {
  const std::uint32_t oh = conv_out_dim(h, k, stride, pad);
  const std::uint32_t ow = conv_out_dim(w, k, stride, pad);
  const std::size_t k_cols = static_cast<std::size_t>(k) * k * c;
  std::size_t row = 0;
  for (std::size_t img = 0; img < n; ++img) {
    const T* xi = x + img * h * w * c;
    for (std::uint32_t oy = 0; oy < oh; ++oy) {
      for (std::uint32_t ox = 0; ox < ow; ++ox, ++row) {
        T* dst = cols + row * k_cols;
        for (std::uint32_t kx = 0; kx < k; ++kx) {
          const std::int64_t ix = static_cast<std::int64_t>(ox) * stride - pad + kx;
          for (std::uint32_t ky = 0; ky < k; ++ky) {
            const std::int64_t iy = static_cast<std::int64_t>(oy) * stride - pad + ky;
            T* cell = dst + (static_cast<std::size_t>(kx) * k + ky) * c;
            if (ix < 0 || ix >= w || iy < 0 || iy >= h) {
              for (std::uint32_t ch = 0; ch < c; ++ch) cell[ch] = T(0);
            } else {
              const T* src = xi + (static_cast<std::size_t>(iy) * w + ix) * c;
              for (std::uint32_t ch = 0; ch < c; ++ch) cell[ch] = src[ch];
            }
          }
        }
      }
    }
  }
}

/// Scatter-add inverse of im2col for input gradients.
template <typename T>
void col2im_nhwc(const T* dcols, std::size_t n, std::uint32_t h, std::uint32_t w,
                 std::uint32_t c, std::uint32_t k, std::uint32_t stride, std::uint32_t pad,
                 T* dx) {
  const std::uint32_t oh = conv_out_dim(h, k, stride, pad);
  const std::uint32_t ow = conv_out_dim(w, k, stride, pad);
  std::fill(dx, dx + n * h * w * c, T(0));
  std::size_t row = 0;
  for (std::size_t img = 0; img < n; ++img) {
    T* dxi = dx + img * h * w * c;
    for (std::uint32_t oy = 0; oy < oh; ++oy) {
      for (std::uint32_t ox = 0; ox < ow; ++ox, ++row) {
        const T* src_row = dcols + row * (static_cast<std::size_t>(k) * k * c);
        for (std::uint32_t kx = 0; kx < k; ++kx) {
          const std::int64_t ix = static_cast<std::int64_t>(ox) * stride - pad + kx;
          if (ix < 0 || ix >= w) continue;
          for (std::uint32_t ky = 0; ky < k; ++ky) {
            const std::int64_t iy = static_cast<std::int64_t>(oy) * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const T* cell = src_row + (static_cast<std::size_t>(kx) * k + ky) * c;
            T* dst = dxi + (static_cast<std::size_t>(iy) * w + ix) * c;
            for (std::uint32_t ch = 0; ch < c; ++ch) dst[ch] += cell[ch];
          }
        }
      }
    }
  }
}

/// Per-channel batch statistics over NHWC (population variance).
template <typename T>
void bn_batch_stats(const T* x, std::size_t rows, std::uint32_t c, T* mean, T* var) {
  std::fill(mean, mean + c, T(0));
  std::fill(var, var + c, T(0));
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x + i * c;
    for (std::uint32_t ch = 0; ch < c; ++ch) mean[ch] += xi[ch];
  }
  const T inv_m = T(1) / static_cast<T>(rows);
  for (std::uint32_t ch = 0; ch < c; ++ch) mean[ch] *= inv_m;
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x + i * c;
    for (std::uint32_t ch = 0; ch < c; ++ch) {
      const T d = xi[ch] - mean[ch];
      var[ch] += d * d;
    }
  }
  for (std::uint32_t ch = 0; ch < c; ++ch) var[ch] *= inv_m;
}

template <typename T>
void bn_apply(const T* x, std::size_t rows, std::uint32_t c, const T* mean, const T* inv_std,
              const T* gamma, const T* beta, T* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x + i * c;
    T* yi = y + i * c;
    for (std::uint32_t ch = 0; ch < c; ++ch) {
      yi[ch] = gamma[ch] * (xi[ch] - mean[ch]) * inv_std[ch] + beta[ch];
    }
  }
}

/// Batch-stat batch-norm backward:
///   dx = (gamma*inv_std/M) * (M*dy - sum(dy) - xhat * sum(dy*xhat)).
template <typename T>
void bn_backward_train(const T* x, const T* dy, std::size_t rows, std::uint32_t c,
                       const T* mean, const T* inv_std, const T* gamma, T* dgamma, T* dbeta,
                       T* dx) {
  std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x + i * c;
    const T* dyi = dy + i * c;
    for (std::uint32_t ch = 0; ch < c; ++ch) {
      const T xhat = (xi[ch] - mean[ch]) * inv_std[ch];
      sum_dy[ch] += dyi[ch];
      sum_dy_xhat[ch] += dyi[ch] * xhat;
    }
  }
  for (std::uint32_t ch = 0; ch < c; ++ch) {
    dgamma[ch] += sum_dy_xhat[ch];
    dbeta[ch] += sum_dy[ch];
  }
  const T inv_m = T(1) / static_cast<T>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x + i * c;
    const T* dyi = dy + i * c;
    T* dxi = dx + i * c;
    for (std::uint32_t ch = 0; ch < c; ++ch) {
      const T xhat = (xi[ch] - mean[ch]) * inv_std[ch];
      dxi[ch] = gamma[ch] * inv_std[ch] * inv_m *
                (static_cast<T>(rows) * dyi[ch] - sum_dy[ch] - xhat * sum_dy_xhat[ch]);
    }
  }
}

/// Running-stat (eval / frozen) batch-norm backward: stats are constants.
template <typename T>
void bn_backward_eval(const T* x, const T* dy, std::size_t rows, std::uint32_t c,
                      const T* mean, const T* inv_std, const T* gamma, T* dgamma, T* dbeta,
                      T* dx) {
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x + i * c;
    const T* dyi = dy + i * c;
    T* dxi = dx + i * c;
    for (std::uint32_t ch = 0; ch < c; ++ch) {
      const T xhat = (xi[ch] - mean[ch]) * inv_std[ch];
      dgamma[ch] += dyi[ch] * xhat;
      dbeta[ch] += dyi[ch];
      dxi[ch] = dyi[ch] * gamma[ch] * inv_std[ch];
    }
  }
}

template <typename T>
void relu_forward(const T* x, std::size_t n, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* y, const T* dy, std::size_t n, T* dx) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void gap_forward(const T* x, std::size_t n, std::uint32_t h, std::uint32_t w, std::uint32_t c,
                 T* feat) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const T inv = T(1) / static_cast<T>(hw);
  for (std::size_t img = 0; img < n; ++img) {
    const T* xi = x + img * hw * c;
    T* fi = feat + img * c;
    std::fill(fi, fi + c, T(0));
    for (std::size_t i = 0; i < hw; ++i) {
      for (std::uint32_t ch = 0; ch < c; ++ch) fi[ch] += xi[i * c + ch];
    }
    for (std::uint32_t ch = 0; ch < c; ++ch) fi[ch] *= inv;
  }
}

template <typename T>
void gap_backward(const T* dfeat, std::size_t n, std::uint32_t h, std::uint32_t w,
                  std::uint32_t c, T* dx) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const T inv = T(1) / static_cast<T>(hw);
  for (std::size_t img = 0; img < n; ++img) {
    const T* dfi = dfeat + img * c;
    T* dxi = dx + img * hw * c;
    for (std::size_t i = 0; i < hw; ++i) {
      for (std::uint32_t ch = 0; ch < c; ++ch) dxi[i * c + ch] = dfi[ch] * inv;
    }
  }
}

/// logits[n,k] = dot(feat[n,:], w[k,:]) + b[k]; w is (classes, feat).
template <typename T>
void linear_forward(const T* feat, const T* w, const T* b, std::size_t n, std::uint32_t in_dim,
                    std::uint32_t out_dim, T* logits) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* fi = feat + i * in_dim;
    T* li = logits + i * out_dim;
    for (std::uint32_t k = 0; k < out_dim; ++k) {
      const T* wk = w + static_cast<std::size_t>(k) * in_dim;
      T acc = b[k];
      for (std::uint32_t c = 0; c < in_dim; ++c) acc += fi[c] * wk[c];
      li[k] = acc;
    }
  }
}

template <typename T>
void linear_backward(const T* feat, const T* w, const T* dlogits, std::size_t n,
                     std::uint32_t in_dim, std::uint32_t out_dim, T* dw, T* db, T* dfeat) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* fi = feat + i * in_dim;
    const T* dli = dlogits + i * out_dim;
    T* dfi = dfeat + i * in_dim;
    std::fill(dfi, dfi + in_dim, T(0));
    for (std::uint32_t k = 0; k < out_dim; ++k) {
      const T g = dli[k];
      db[k] += g;
      const T* wk = w + static_cast<std::size_t>(k) * in_dim;
      T* dwk = dw + static_cast<std::size_t>(k) * in_dim;
      for (std::uint32_t c = 0; c < in_dim; ++c) {
        dwk[c] += g * fi[c];
        dfi[c] += g * wk[c];
      }
    }
  }
}

}  // namespace histokt::nn
