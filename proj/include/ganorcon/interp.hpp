#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace ganorcon {

// Corner-aligned sampling: output corners map exactly onto input corners.
// Used for every spatial interpolation in the project (hypercolumn
// upsampling, dataset resizing, decoder upsampling) so geometry stays
// consistent across stages.
inline double align_corners_pos(int dst_index, int dst_size, int src_size) {
  if (dst_size <= 1 || src_size <= 1) return 0.0;
  return static_cast<double>(dst_index) * (src_size - 1) / static_cast<double>(dst_size - 1);
}

struct BilinearTap {
  int lo, hi;
  double w_hi;  // weight of hi; lo gets (1 - w_hi)
};

inline BilinearTap bilinear_tap(int dst_index, int dst_size, int src_size) {
  double pos = align_corners_pos(dst_index, dst_size, src_size);
  int lo = static_cast<int>(std::floor(pos));
  lo = std::clamp(lo, 0, src_size - 1);
  int hi = std::min(lo + 1, src_size - 1);
  return {lo, hi, pos - lo};
}

inline int nearest_tap(int dst_index, int dst_size, int src_size) {
  double pos = align_corners_pos(dst_index, dst_size, src_size);
  int idx = static_cast<int>(std::floor(pos + 0.5));
  return std::clamp(idx, 0, src_size - 1);
}

// Bilinear resize of an HWC buffer; writes rows [row_begin, row_end) of the
// destination. Channel count is arbitrary.
template <typename T>
void resize_bilinear_hwc(const T* src, int sh, int sw, int c, T* dst, int dh, int dw,
                         int row_begin, int row_end) {
  for (int y = row_begin; y < row_end; ++y) {
    BilinearTap ty = bilinear_tap(y, dh, sh);
    for (int x = 0; x < dw; ++x) {
      BilinearTap tx = bilinear_tap(x, dw, sw);
      const T* p00 = src + (static_cast<int64_t>(ty.lo) * sw + tx.lo) * c;
      const T* p01 = src + (static_cast<int64_t>(ty.lo) * sw + tx.hi) * c;
      const T* p10 = src + (static_cast<int64_t>(ty.hi) * sw + tx.lo) * c;
      const T* p11 = src + (static_cast<int64_t>(ty.hi) * sw + tx.hi) * c;
      double w00 = (1.0 - ty.w_hi) * (1.0 - tx.w_hi);
      double w01 = (1.0 - ty.w_hi) * tx.w_hi;
      double w10 = ty.w_hi * (1.0 - tx.w_hi);
      double w11 = ty.w_hi * tx.w_hi;
      T* out = dst + (static_cast<int64_t>(y) * dw + x) * c;
      for (int k = 0; k < c; ++k) {
        out[k] = static_cast<T>(w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k]);
      }
    }
  }
}

template <typename T>
void resize_bilinear_hwc(const T* src, int sh, int sw, int c, T* dst, int dh, int dw) {
  resize_bilinear_hwc(src, sh, sw, c, dst, dh, dw, 0, dh);
}

// Nearest-neighbor resize (label-safe).
template <typename T>
void resize_nearest_hwc(const T* src, int sh, int sw, int c, T* dst, int dh, int dw) {
  for (int y = 0; y < dh; ++y) {
    int sy = nearest_tap(y, dh, sh);
    for (int x = 0; x < dw; ++x) {
      int sx = nearest_tap(x, dw, sw);
      const T* in = src + (static_cast<int64_t>(sy) * sw + sx) * c;
      T* out = dst + (static_cast<int64_t>(y) * dw + x) * c;
      for (int k = 0; k < c; ++k) out[k] = in[k];
    }
  }
}

}  // namespace ganorcon
