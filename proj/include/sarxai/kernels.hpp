#pragma once

// Numeric kernels: convolution, pooling, dense, upsampling. Every kernel is a
// pure function of its arguments and performs reductions in a fixed order, so
// results are bitwise reproducible for identical inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sarxai/error.hpp"
#include "sarxai/tensor.hpp"

namespace sarxai {

struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t in_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  Shape weight_shape() const {
    return {out_channels, in_channels, kernel_h, kernel_w};
  }

  // floor((in + 2*padding - kernel) / stride) + 1, required to be >= 1.
  std::size_t output_extent(std::size_t in, std::size_t kernel) const {
    if (stride == 0) throw ShapeError("conv: stride must be positive");
    if (in + 2 * padding < kernel) {
      throw ShapeError("conv: kernel extent " + std::to_string(kernel) +
                       " exceeds padded input extent " +
                       std::to_string(in + 2 * padding));
    }
    return (in + 2 * padding - kernel) / stride + 1;
  }

  void validate() const {
    if (out_channels == 0 || in_channels == 0 || kernel_h == 0 ||
        kernel_w == 0 || stride == 0) {
      throw ConfigError("conv spec: channels, kernel and stride must be positive");
    }
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

namespace detail {

#ifdef __AVX__
inline constexpr std::size_t kVectorBytes = 32;
#else
inline constexpr std::size_t kVectorBytes = 16;
#endif

// C[rows x n] += A * B[inner x n] with A(r, q) = a[r * row_stride + q * inner_stride].
// A 4 x 8 block of C stays in registers across the whole reduction, so
// every C element still sums its terms in index order.
template <typename T>
void gemm_strided(std::size_t rows, std::size_t n, std::size_t inner, const T* a,
                  std::size_t row_stride, std::size_t inner_stride, const T* b, T* c) {
  using V [[gnu::vector_size(kVectorBytes)]] = T;
  constexpr std::size_t L = kVectorBytes / sizeof(T), R = 4, W = 2 * L;
  std::size_t r0 = 0;
  for (; r0 + R <= rows; r0 += R) {
    std::size_t j0 = 0;
    for (; j0 + W <= n; j0 += W) {
      V acc[R][2];
      for (std::size_t r = 0; r < R; ++r) std::memcpy(&acc[r], c + (r0 + r) * n + j0, sizeof(acc[r]));
      const T* a0 = a + r0 * row_stride;
      for (std::size_t q = 0; q < inner; ++q) {
        V b0, b1;
        std::memcpy(&b0, b + q * n + j0, sizeof(V));
        std::memcpy(&b1, b + q * n + j0 + L, sizeof(V));
        const T* aq = a0 + q * inner_stride;
        for (std::size_t r = 0; r < R; ++r) {
          const T av = aq[r * row_stride];
          acc[r][0] += av * b0;
          acc[r][1] += av * b1;
        }
      }
      for (std::size_t r = 0; r < R; ++r) std::memcpy(c + (r0 + r) * n + j0, &acc[r], sizeof(acc[r]));
    }
    for (; j0 < n; ++j0) {
      for (std::size_t r = 0; r < R; ++r) {
        T acc = c[(r0 + r) * n + j0];
        for (std::size_t q = 0; q < inner; ++q) {
          acc += a[(r0 + r) * row_stride + q * inner_stride] * b[q * n + j0];
        }
        c[(r0 + r) * n + j0] = acc;
      }
    }
  }
  for (; r0 < rows; ++r0) {
    T* crow = c + r0 * n;
    for (std::size_t q = 0; q < inner; ++q) {
      const T av = a[r0 * row_stride + q * inner_stride];
      const T* brow = b + q * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M x N] += A[M x K] * B[K x N], all row-major.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  gemm_strided(m, n, k, a, k, 1, b, c);
}

// C[K x N] += A[M x K]^T * B[M x N].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  gemm_strided(k, n, m, a, 1, k, b, c);
}

// Output columns [lo, hi) whose kernel tap kj lands inside the input row.
inline std::pair<std::size_t, std::size_t> valid_columns(std::size_t out_w, std::size_t width,
                                                         const ConvSpec& spec, std::size_t kj) {
  const std::size_t s = spec.stride;
  const std::size_t lo = kj >= spec.padding ? 0 : (spec.padding - kj + s - 1) / s;
  const std::size_t end = width + spec.padding;
  const std::size_t hi = end <= kj ? 0 : std::min(out_w, (end - kj + s - 1) / s);
  return {std::min(lo, out_w), std::max(std::min(lo, out_w), hi)};
}

template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height,
            std::size_t width, const ConvSpec& spec, std::size_t out_h,
            std::size_t out_w, T* cols) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel_w; ++kj) {
        T* row = cols + ((c * spec.kernel_h + ki) * spec.kernel_w + kj) * plane;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const long ih = static_cast<long>(oh * spec.stride + ki) -
                          static_cast<long>(spec.padding);
          T* dst = row + oh * out_w;
          if (ih < 0 || ih >= static_cast<long>(height)) {
            std::fill(dst, dst + out_w, T{0});
            continue;
          }
          const T* src = image + (c * height + static_cast<std::size_t>(ih)) * width;
          const auto [lo, hi] = valid_columns(out_w, width, spec, kj);
          std::fill(dst, dst + lo, T{0});
          for (std::size_t ow = lo; ow < hi; ++ow) {
            dst[ow] = src[ow * spec.stride + kj - spec.padding];
          }
          std::fill(dst + hi, dst + out_w, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t height,
            std::size_t width, const ConvSpec& spec, std::size_t out_h,
            std::size_t out_w, T* image) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel_w; ++kj) {
        const T* row =
            cols + ((c * spec.kernel_h + ki) * spec.kernel_w + kj) * plane;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const long ih = static_cast<long>(oh * spec.stride + ki) -
                          static_cast<long>(spec.padding);
          if (ih < 0 || ih >= static_cast<long>(height)) continue;
          T* dst = image + (c * height + static_cast<std::size_t>(ih)) * width;
          const T* src = row + oh * out_w;
          const auto [lo, hi] = valid_columns(out_w, width, spec, kj);
          for (std::size_t ow = lo; ow < hi; ++ow) {
            dst[ow * spec.stride + kj - spec.padding] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_shapes(const BasicTensor<T>& input,
                       const BasicTensor<T>& weights, const ConvSpec& spec,
                       const char* what) {
  spec.validate();
  require_rank(input, 4, what);
  require_rank(weights, 4, what);
  if (weights.shape() != spec.weight_shape()) {
    throw ShapeError(std::string(what) + ": weight shape " +
                     shape_to_string(weights.shape()) +
                     " does not match conv spec " +
                     shape_to_string(spec.weight_shape()));
  }
  if (input.dim(1) != spec.in_channels) {
    throw ShapeError(std::string(what) + ": input channel axis (1) has " +
                     std::to_string(input.dim(1)) + " but the kernel expects " +
                     std::to_string(spec.in_channels));
  }
}

}  // namespace detail

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input,
                              const BasicTensor<T>& weights,
                              std::span<const T> bias, const ConvSpec& spec) {
  detail::check_conv_shapes(input, weights, spec, "conv2d_forward");
  if (bias.size() != spec.out_channels) {
    throw ShapeError("conv2d_forward: bias axis has " +
                     std::to_string(bias.size()) + " entries, expected " +
                     std::to_string(spec.out_channels));
  }
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = spec.output_extent(h, spec.kernel_h);
  const std::size_t ow = spec.output_extent(w, spec.kernel_w);
  const std::size_t k = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const std::size_t plane = oh * ow;

  BasicTensor<T> out({n, spec.out_channels, oh, ow});
  std::vector<T> cols(k * plane);
  for (std::size_t b = 0; b < n; ++b) {
    detail::im2col(input.data().data() + b * spec.in_channels * h * w,
                   spec.in_channels, h, w, spec, oh, ow, cols.data());
    T* dst = out.data().data() + b * spec.out_channels * plane;
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      std::fill(dst + co * plane, dst + (co + 1) * plane, bias[co]);
    }
    detail::gemm_nn(spec.out_channels, plane, k, weights.data().data(),
                    cols.data(), dst);
  }
  return out;
}

template <typename T>
struct ConvGrads {
  BasicTensor<T> grad_input;
  BasicTensor<T> grad_weights;
  std::vector<T> grad_bias;
};

template <typename T>
void check_upstream(const BasicTensor<T>& input, const ConvSpec& spec,
                    const BasicTensor<T>& upstream, const char* what) {
  const Shape expected = {input.dim(0), spec.out_channels,
                          spec.output_extent(input.dim(2), spec.kernel_h),
                          spec.output_extent(input.dim(3), spec.kernel_w)};
  require_shape(upstream, expected, what);
}

// Gradient with respect to the input only (transposed convolution).
template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& input,
                                     const BasicTensor<T>& weights,
                                     const ConvSpec& spec,
                                     const BasicTensor<T>& upstream) {
  detail::check_conv_shapes(input, weights, spec, "conv2d_backward");
  check_upstream(input, spec, upstream, "conv2d_backward upstream_grad");
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = upstream.dim(2), ow = upstream.dim(3);
  const std::size_t k = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const std::size_t plane = oh * ow;

  BasicTensor<T> grad(input.shape());
  std::vector<T> dcols(k * plane);
  for (std::size_t b = 0; b < n; ++b) {
    std::fill(dcols.begin(), dcols.end(), T{0});
    detail::gemm_tn(spec.out_channels, plane, k, weights.data().data(),
                    upstream.data().data() + b * spec.out_channels * plane,
                    dcols.data());
    detail::col2im(dcols.data(), spec.in_channels, h, w, spec, oh, ow,
                   grad.data().data() + b * spec.in_channels * h * w);
  }
  return grad;
}

// Accumulates weight and bias gradients into the given buffers.
template <typename T>
void conv2d_accumulate_param_grads(const BasicTensor<T>& input,
                                   const ConvSpec& spec,
                                   const BasicTensor<T>& upstream,
                                   BasicTensor<T>& grad_weights,
                                   std::span<T> grad_bias) {
  check_upstream(input, spec, upstream, "conv2d_backward upstream_grad");
  require_shape(grad_weights, spec.weight_shape(), "conv2d_backward grad_weights");
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = upstream.dim(2), ow = upstream.dim(3);
  const std::size_t k = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const std::size_t plane = oh * ow;

  std::vector<T> cols(k * plane);
  std::vector<T> cols_t(plane * k);
  for (std::size_t b = 0; b < n; ++b) {
    detail::im2col(input.data().data() + b * spec.in_channels * h * w,
                   spec.in_channels, h, w, spec, oh, ow, cols.data());
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t p = 0; p < plane; ++p) cols_t[p * k + r] = cols[r * plane + p];
    }
    const T* up = upstream.data().data() + b * spec.out_channels * plane;
    detail::gemm_nn(spec.out_channels, k, plane, up, cols_t.data(),
                    grad_weights.data().data());
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      T acc{0};
      for (std::size_t p = 0; p < plane; ++p) acc += up[co * plane + p];
      grad_bias[co] += acc;
    }
  }
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weights,
                             const ConvSpec& spec,
                             const BasicTensor<T>& upstream) {
  ConvGrads<T> g;
  g.grad_input = conv2d_backward_input(input, weights, spec, upstream);
  g.grad_weights = BasicTensor<T>(spec.weight_shape());
  g.grad_bias.assign(spec.out_channels, T{0});
  conv2d_accumulate_param_grads(input, spec, upstream, g.grad_weights,
                                std::span<T>(g.grad_bias));
  return g;
}

// Flat input offsets of the selected maxima, plus the input shape they index.
struct PoolIndex {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::size_t> argmax;
};

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  PoolIndex index;
};

// Ties resolve to the first maximum in row-major scan order of the window.
template <typename T>
PoolResult<T> maxpool2d(const BasicTensor<T>& input, std::size_t window,
                        std::size_t stride) {
  require_rank(input, 4, "maxpool2d");
  if (window == 0 || stride == 0) {
    throw ShapeError("maxpool2d: window and stride must be positive");
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  if (window > h || window > w) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) +
                     " exceeds spatial axes " + shape_to_string(input.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  PoolResult<T> r;
  r.output = BasicTensor<T>({n, c, oh, ow});
  r.index.input_shape = input.shape();
  r.index.output_shape = r.output.shape();
  r.index.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * h * w;
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j, ++o) {
          std::size_t best = base + (i * stride) * w + j * stride;
          T best_v = input[best];
          for (std::size_t di = 0; di < window; ++di) {
            for (std::size_t dj = 0; dj < window; ++dj) {
              const std::size_t idx = base + (i * stride + di) * w + j * stride + dj;
              if (input[idx] > best_v) {
                best_v = input[idx];
                best = idx;
              }
            }
          }
          r.output[o] = best_v;
          r.index.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const PoolIndex& index,
                                  const BasicTensor<T>& upstream) {
  require_shape(upstream, index.output_shape, "maxpool2d_backward upstream_grad");
  BasicTensor<T> grad(index.input_shape);
  for (std::size_t o = 0; o < upstream.size(); ++o) {
    grad[index.argmax[o]] += upstream[o];
  }
  return grad;
}

// [N,C,H,W] -> [N,C]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
  require_rank(input, 4, "global_avg_pool");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  BasicTensor<T> out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    T acc{0};
    for (std::size_t p = 0; p < plane; ++p) acc += input[i * plane + p];
    out[i] = acc / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape,
                                        const BasicTensor<T>& upstream) {
  require_shape(upstream, Shape{input_shape.at(0), input_shape.at(1)},
                "global_avg_pool_backward upstream_grad");
  const std::size_t plane = input_shape[2] * input_shape[3];
  BasicTensor<T> grad(input_shape);
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    const T g = upstream[i] / static_cast<T>(plane);
    std::fill(grad.data().begin() + static_cast<std::ptrdiff_t>(i * plane),
              grad.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * plane), g);
  }
  return grad;
}

// [N,in] x W[out,in]^T + b -> [N,out]
template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weights,
                             std::span<const T> bias) {
  require_rank(input, 2, "dense_forward");
  require_rank(weights, 2, "dense_forward weights");
  if (input.dim(1) != weights.dim(1)) {
    throw ShapeError("dense_forward: feature axis (1) has " +
                     std::to_string(input.dim(1)) + " but weights expect " +
                     std::to_string(weights.dim(1)));
  }
  if (bias.size() != weights.dim(0)) {
    throw ShapeError("dense_forward: bias has " + std::to_string(bias.size()) +
                     " entries, expected " + std::to_string(weights.dim(0)));
  }
  const std::size_t n = input.dim(0), in = input.dim(1), out_f = weights.dim(0);
  BasicTensor<T> out({n, out_f});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < out_f; ++o) {
      T acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) {
        acc += weights[o * in + i] * input[b * in + i];
      }
      out[b * out_f + o] = acc;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> dense_backward_input(const BasicTensor<T>& weights,
                                    const BasicTensor<T>& upstream) {
  require_rank(upstream, 2, "dense_backward upstream_grad");
  if (upstream.dim(1) != weights.dim(0)) {
    throw ShapeError("dense_backward: upstream feature axis (1) has " +
                     std::to_string(upstream.dim(1)) + ", expected " +
                     std::to_string(weights.dim(0)));
  }
  const std::size_t n = upstream.dim(0), in = weights.dim(1), out_f = weights.dim(0);
  BasicTensor<T> grad({n, in});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < out_f; ++o) {
      const T g = upstream[b * out_f + o];
      if (g == T{0}) continue;
      for (std::size_t i = 0; i < in; ++i) grad[b * in + i] += g * weights[o * in + i];
    }
  }
  return grad;
}

template <typename T>
void dense_accumulate_param_grads(const BasicTensor<T>& input,
                                  const BasicTensor<T>& upstream,
                                  BasicTensor<T>& grad_weights,
                                  std::span<T> grad_bias) {
  const std::size_t n = input.dim(0), in = input.dim(1), out_f = upstream.dim(1);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < out_f; ++o) {
      const T g = upstream[b * out_f + o];
      grad_bias[o] += g;
      for (std::size_t i = 0; i < in; ++i) grad_weights[o * in + i] += g * input[b * in + i];
    }
  }
}

// [C,h,w] -> [C,out_h,out_w], half-pixel (align_corners = false) sampling
// with edge clamping.
template <typename T>
BasicTensor<T> bilinear_upsample(const BasicTensor<T>& input, std::size_t out_h,
                                 std::size_t out_w) {
  require_rank(input, 3, "bilinear_upsample");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (out_h < h || out_w < w) {
    throw ShapeError("bilinear_upsample: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " is smaller than source " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  auto source_coord = [](std::size_t dst, std::size_t in, std::size_t out,
                         std::size_t& i0, std::size_t& i1, T& frac) {
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    i0 = std::min(static_cast<std::size_t>(src), in - 1);
    i1 = std::min(i0 + 1, in - 1);
    frac = static_cast<T>(src - static_cast<double>(i0));
  };
  BasicTensor<T> out({c, out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    T fy;
    source_coord(y, h, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      T fx;
      source_coord(x, w, out_w, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = input.data().data() + ch * h * w;
        const T a = plane[y0 * w + x0], b = plane[y0 * w + x1];
        const T d = plane[y1 * w + x0], e = plane[y1 * w + x1];
        const T top = a + fx * (b - a);
        const T bottom = d + fx * (e - d);
        out[(ch * out_h + y) * out_w + x] = top + fy * (bottom - top);
      }
    }
  }
  return out;
}

}  // namespace sarxai
