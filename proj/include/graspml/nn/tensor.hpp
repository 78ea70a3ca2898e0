#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace graspml::nn {

/// Storage aligned for Eigen's widest packet. Vectorized reductions over unaligned data
/// start at an address-dependent offset, which makes float sums vary between runs.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// Channel-major feature volume: element (c, r, x) at data[(c * rows + r) * cols + x].
template <typename T>
struct Tensor3 {
  int channels = 0;
  int rows = 0;
  int cols = 0;
  Buffer<T> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, T fill = T{})
      : channels(c), rows(h), cols(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(rows) * cols; }
  std::size_t size() const { return data.size(); }
  T* channel(int c) { return data.data() + c * plane(); }
  const T* channel(int c) const { return data.data() + c * plane(); }
  T& at(int c, int r, int x) { return data[(static_cast<std::size_t>(c) * rows + r) * cols + x]; }
  const T& at(int c, int r, int x) const { return data[(static_cast<std::size_t>(c) * rows + r) * cols + x]; }

  bool same_shape(const Tensor3& o) const { return channels == o.channels && rows == o.rows && cols == o.cols; }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Geometry of a sliding-window operator.
struct Window {
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int dilation = 1;

  int out_extent(int in) const { return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
};

namespace detail {

// Range of output positions o with 0 <= o * stride + offset < extent.
inline void valid_range(int offset, int stride, int extent, int out_extent, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = extent - offset <= 0 ? 0 : (extent - offset + stride - 1) / stride;
  lo = std::min(lo, out_extent);
  hi = std::clamp(hi, lo, out_extent);
}

}  // namespace detail

/// Unfolds `in` into a (C * k * k) x (out_rows * out_cols) row-major matrix.
template <typename T>
void im2col(const Tensor3<T>& in, const Window& w, int out_rows, int out_cols, T* cols) {
  const std::size_t n = static_cast<std::size_t>(out_rows) * out_cols;
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.channel(c);
    for (int ky = 0; ky < w.kernel; ++ky) {
      const int roff = ky * w.dilation - w.pad;
      int rlo, rhi;
      detail::valid_range(roff, w.stride, in.rows, out_rows, rlo, rhi);
      for (int kx = 0; kx < w.kernel; ++kx) {
        const int coff = kx * w.dilation - w.pad;
        int clo, chi;
        detail::valid_range(coff, w.stride, in.cols, out_cols, clo, chi);
        T* dst = cols + ((static_cast<std::size_t>(c) * w.kernel + ky) * w.kernel + kx) * n;
        std::fill(dst, dst + n, T{});
        for (int ro = rlo; ro < rhi; ++ro) {
          const T* srow = src + static_cast<std::size_t>(ro * w.stride + roff) * in.cols;
          T* drow = dst + static_cast<std::size_t>(ro) * out_cols;
          if (w.stride == 1) {
            std::copy(srow + clo + coff, srow + chi + coff, drow + clo);
          } else {
            for (int co = clo; co < chi; ++co) drow[co] = srow[co * w.stride + coff];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates columns back into `out`.
template <typename T>
void col2im(const T* cols, const Window& w, int out_rows, int out_cols, Tensor3<T>& out) {
  const std::size_t n = static_cast<std::size_t>(out_rows) * out_cols;
  for (int c = 0; c < out.channels; ++c) {
    T* dstc = out.channel(c);
    for (int ky = 0; ky < w.kernel; ++ky) {
      const int roff = ky * w.dilation - w.pad;
      int rlo, rhi;
      detail::valid_range(roff, w.stride, out.rows, out_rows, rlo, rhi);
      for (int kx = 0; kx < w.kernel; ++kx) {
        const int coff = kx * w.dilation - w.pad;
        int clo, chi;
        detail::valid_range(coff, w.stride, out.cols, out_cols, clo, chi);
        const T* src = cols + ((static_cast<std::size_t>(c) * w.kernel + ky) * w.kernel + kx) * n;
        for (int ro = rlo; ro < rhi; ++ro) {
          T* drow = dstc + static_cast<std::size_t>(ro * w.stride + roff) * out.cols;
          const T* srow = src + static_cast<std::size_t>(ro) * out_cols;
          for (int co = clo; co < chi; ++co) drow[co * w.stride + coff] += srow[co];
        }
      }
    }
  }
}

}  // namespace graspml::nn
