#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "graspml/nn/tensor.hpp"

namespace graspml::nn {

/// Deterministic uniform draws on [-bound, bound]; independent of the standard library's
/// distribution implementations.
class UniformInit {
 public:
  explicit UniformInit(std::uint64_t seed) : engine_(seed) {}
  double operator()(double bound) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return (2.0 * u - 1.0) * bound;
  }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
using GradBlocks = std::span<Buffer<T>>;

/// Dense 2-D convolution (stride 1, "same" padding, optional dilation).
template <typename T>
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  Window window;
  Buffer<T> weight;  // out x (in * k * k)
  Buffer<T> bias;    // out

  struct Cache {
    RowMatrix<T> cols;
    int rows = 0;
    int cols_n = 0;
  };

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int dilation = 1)
      : in_channels(in), out_channels(out), window{kernel, 1, dilation * (kernel - 1) / 2, dilation},
        weight(static_cast<std::size_t>(out) * in * kernel * kernel), bias(out) {}

  int fan_in() const { return in_channels * window.kernel * window.kernel; }
  static constexpr std::size_t kBlocks = 2;

  void init(UniformInit& rng, double gain) {
    const double bound = std::sqrt(gain / fan_in());
    for (auto& w : weight) w = static_cast<T>(rng(bound));
    std::fill(bias.begin(), bias.end(), T{});
  }

  Tensor3<T> forward(const Tensor3<T>& in, Cache* cache) const {
    if (in.channels != in_channels) throw std::invalid_argument("Conv2d: channel mismatch");
    const int ho = window.out_extent(in.rows);
    const int wo = window.out_extent(in.cols);
    RowMatrix<T> local;
    RowMatrix<T>& cols = cache ? cache->cols : local;
    cols.resize(fan_in(), static_cast<Eigen::Index>(ho) * wo);
    im2col(in, window, ho, wo, cols.data());
    Tensor3<T> out(out_channels, ho, wo);
    MatrixMap<T> o(out.data.data(), out_channels, static_cast<Eigen::Index>(ho) * wo);
    ConstMatrixMap<T> w(weight.data(), out_channels, fan_in());
    o.noalias() = w * cols;
    for (int c = 0; c < out_channels; ++c) o.row(c).array() += bias[c];
    if (cache) {
      cache->rows = in.rows;
      cache->cols_n = in.cols;
    }
    return out;
  }

  /// Accumulates parameter gradients into grads[0..1]; returns the input gradient when requested.
  Tensor3<T> backward(const Tensor3<T>& dout, const Cache& cache, GradBlocks<T> grads, bool need_input) const {
    const Eigen::Index n = static_cast<Eigen::Index>(dout.plane());
    ConstMatrixMap<T> d(dout.data.data(), out_channels, n);
    MatrixMap<T> gw(grads[0].data(), out_channels, fan_in());
    gw.noalias() += d * cache.cols.transpose();
    for (int c = 0; c < out_channels; ++c) grads[1][c] += d.row(c).sum();
    if (!need_input) return {};
    ConstMatrixMap<T> w(weight.data(), out_channels, fan_in());
    RowMatrix<T> dcols = w.transpose() * d;
    Tensor3<T> din(in_channels, cache.rows, cache.cols_n);
    col2im(dcols.data(), window, dout.rows, dout.cols, din);
    return din;
  }
};

/// Transposed convolution with kernel k, stride 2 and padding (k - 1) / 2 that exactly
/// doubles the spatial extent.
template <typename T>
struct TransposedConv2d {
  int in_channels = 0;
  int out_channels = 0;
  Window window;
  Buffer<T> weight;  // in x (out * k * k)
  Buffer<T> bias;    // out

  struct Cache {
    Tensor3<T> input;
  };

  TransposedConv2d() = default;
  TransposedConv2d(int in, int out, int kernel)
      : in_channels(in), out_channels(out), window{kernel, 2, (kernel - 1) / 2, 1},
        weight(static_cast<std::size_t>(in) * out * kernel * kernel), bias(out) {}

  int taps() const { return out_channels * window.kernel * window.kernel; }
  static constexpr std::size_t kBlocks = 2;

  void init(UniformInit& rng, double gain) {
    const double bound = std::sqrt(gain / (in_channels * window.kernel * window.kernel / 4.0));
    for (auto& w : weight) w = static_cast<T>(rng(bound));
    std::fill(bias.begin(), bias.end(), T{});
  }

  Tensor3<T> forward(const Tensor3<T>& in, Cache* cache) const {
    if (in.channels != in_channels) throw std::invalid_argument("TransposedConv2d: channel mismatch");
    const Eigen::Index n = static_cast<Eigen::Index>(in.plane());
    ConstMatrixMap<T> x(in.data.data(), in_channels, n);
    ConstMatrixMap<T> w(weight.data(), in_channels, taps());
    RowMatrix<T> cols = w.transpose() * x;
    Tensor3<T> out(out_channels, 2 * in.rows, 2 * in.cols);
    col2im(cols.data(), window, in.rows, in.cols, out);
    for (int c = 0; c < out_channels; ++c) {
      T* p = out.channel(c);
      for (std::size_t i = 0; i < out.plane(); ++i) p[i] += bias[c];
    }
    if (cache) cache->input = in;
    return out;
  }

  Tensor3<T> backward(const Tensor3<T>& dout, const Cache& cache, GradBlocks<T> grads, bool need_input) const {
    const Tensor3<T>& in = cache.input;
    const Eigen::Index n = static_cast<Eigen::Index>(in.plane());
    RowMatrix<T> dcols(taps(), n);
    im2col(dout, window, in.rows, in.cols, dcols.data());
    ConstMatrixMap<T> x(in.data.data(), in_channels, n);
    MatrixMap<T> gw(grads[0].data(), in_channels, taps());
    gw.noalias() += x * dcols.transpose();
    for (int c = 0; c < out_channels; ++c) {
      const T* p = dout.channel(c);
      T s{};
      for (std::size_t i = 0; i < dout.plane(); ++i) s += p[i];
      grads[1][c] += s;
    }
    if (!need_input) return {};
    Tensor3<T> din(in_channels, in.rows, in.cols);
    MatrixMap<T> dx(din.data.data(), in_channels, n);
    ConstMatrixMap<T> w(weight.data(), in_channels, taps());
    dx.noalias() = w * dcols;
    return din;
  }
};

template <typename T>
Tensor3<T> relu_forward(Tensor3<T> x, std::vector<std::uint8_t>* active) {
  if (active) active->resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x.data[i] > T{};
    if (!on) x.data[i] = T{};
    if (active) (*active)[i] = on;
  }
  return x;
}

template <typename T>
Tensor3<T> relu_backward(Tensor3<T> d, const std::vector<std::uint8_t>& active) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!active[i]) d.data[i] = T{};
  }
  return d;
}

/// 2x2 max pooling with stride 2.
template <typename T>
Tensor3<T> maxpool_forward(const Tensor3<T>& in, std::vector<std::uint32_t>* argmax) {
  Tensor3<T> out(in.channels, in.rows / 2, in.cols / 2);
  if (argmax) argmax->resize(out.size());
  std::size_t o = 0;
  for (int c = 0; c < in.channels; ++c) {
    for (int r = 0; r < out.rows; ++r) {
      for (int x = 0; x < out.cols; ++x, ++o) {
        std::uint32_t best = static_cast<std::uint32_t>((static_cast<std::size_t>(c) * in.rows + 2 * r) * in.cols + 2 * x);
        for (int dr = 0; dr < 2; ++dr) {
          for (int dx = 0; dx < 2; ++dx) {
            const auto idx =
                static_cast<std::uint32_t>((static_cast<std::size_t>(c) * in.rows + 2 * r + dr) * in.cols + 2 * x + dx);
            if (in.data[idx] > in.data[best]) best = idx;
          }
        }
        out.data[o] = in.data[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

template <typename T>
Tensor3<T> maxpool_backward(const Tensor3<T>& dout, const std::vector<std::uint32_t>& argmax, int in_rows,
                            int in_cols) {
  Tensor3<T> din(dout.channels, in_rows, in_cols);
  for (std::size_t o = 0; o < dout.size(); ++o) din.data[argmax[o]] += dout.data[o];
  return din;
}

template <typename T>
T logistic(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

/// Spatial attention: a mask from the channel-wise max and mean maps, passed through a
/// k x k convolution and a logistic squashing, scales every channel.
template <typename T>
struct SpatialAttention {
  Conv2d<T> conv;

  struct Cache {
    Tensor3<T> input;
    std::vector<std::uint32_t> argmax_channel;
    typename Conv2d<T>::Cache conv;
    Buffer<T> mask;
  };

  static constexpr std::size_t kBlocks = 2;

  SpatialAttention() = default;
  explicit SpatialAttention(int kernel) : conv(2, 1, kernel) {}

  Tensor3<T> forward(const Tensor3<T>& in, Cache* cache) const {
    if (in.channels < 1) throw std::invalid_argument("SpatialAttention: empty feature map");
    const std::size_t n = in.plane();
    Tensor3<T> pooled(2, in.rows, in.cols);
    std::vector<std::uint32_t> arg(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      T mx = in.data[i];
      T sum = in.data[i];
      for (int c = 1; c < in.channels; ++c) {
        const T v = in.data[c * n + i];
        sum += v;
        if (v > mx) {
          mx = v;
          arg[i] = static_cast<std::uint32_t>(c);
        }
      }
      pooled.data[i] = mx;
      pooled.data[n + i] = sum / static_cast<T>(in.channels);
    }
    const Tensor3<T> z = conv.forward(pooled, cache ? &cache->conv : nullptr);
    Buffer<T> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = logistic(z.data[i]);
    Tensor3<T> out = in;
    for (int c = 0; c < in.channels; ++c) {
      T* p = out.channel(c);
      for (std::size_t i = 0; i < n; ++i) p[i] *= mask[i];
    }
    if (cache) {
      cache->input = in;
      cache->argmax_channel = std::move(arg);
      cache->mask = std::move(mask);
    }
    return out;
  }

  Tensor3<T> backward(const Tensor3<T>& dout, const Cache& cache, GradBlocks<T> grads, bool need_input) const {
    const Tensor3<T>& in = cache.input;
    const std::size_t n = in.plane();
    Tensor3<T> dz(1, in.rows, in.cols);
    for (std::size_t i = 0; i < n; ++i) {
      T dm{};
      for (int c = 0; c < in.channels; ++c) dm += dout.data[c * n + i] * in.data[c * n + i];
      const T m = cache.mask[i];
      dz.data[i] = dm * m * (T(1) - m);
    }
    const Tensor3<T> dpooled = conv.backward(dz, cache.conv, grads, need_input);
    if (!need_input) return {};
    Tensor3<T> din(in.channels, in.rows, in.cols);
    const T inv_c = T(1) / static_cast<T>(in.channels);
    for (int c = 0; c < in.channels; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        T g = dout.data[c * n + i] * cache.mask[i] + dpooled.data[n + i] * inv_c;
        if (cache.argmax_channel[i] == static_cast<std::uint32_t>(c)) g += dpooled.data[i];
        din.data[c * n + i] = g;
      }
    }
    return din;
  }
};

}  // namespace graspml::nn
