#include "occlunet/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "occlunet/util/parallel.hpp"

namespace occlunet::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Samples per weight-gradient partial sum. Fixed, so the reduction order does
// not depend on the number of worker threads.
constexpr int kGradChunk = 4;

struct ConvGeometry {
  int channels;
  int height;
  int width;
  int k;
  int stride;
  int pad;
  int out_h;
  int out_w;

  int rows() const { return channels * k * k; }
  int cols() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(int channels, int height, int width, int k, int stride) {
  const int pad = (k - 1) / 2;
  const int out_h = (height + 2 * pad - k) / stride + 1;
  const int out_w = (width + 2 * pad - k) / stride + 1;
  return {channels, height, width, k, stride, pad, out_h, out_w};
}

// Output columns [lo, hi) whose input column ow*stride - pad + kw is in range.
std::pair<int, int> valid_columns(const ConvGeometry& g, int kw) {
  const int shift = kw - g.pad;
  int lo = shift >= 0 ? 0 : (-shift + g.stride - 1) / g.stride;
  int hi = (g.width - 1 - shift) / g.stride + 1;
  lo = std::min(lo, g.out_w);
  hi = std::clamp(hi, lo, g.out_w);
  return {lo, hi};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (int c = 0; c < g.channels; ++c) {
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        T* row = col + static_cast<std::size_t>((c * g.k + kh) * g.k + kw) * g.cols();
        const auto [lo, hi] = valid_columns(g, kw);
        const int shift = kw - g.pad;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + kh;
          T* dst = row + static_cast<std::size_t>(oh) * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src + lo + shift, src + hi + shift, dst + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride + shift];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back onto the (zeroed) image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* x) {
  for (int c = 0; c < g.channels; ++c) {
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        const T* row = col + static_cast<std::size_t>((c * g.k + kh) * g.k + kw) * g.cols();
        const auto [lo, hi] = valid_columns(g, kw);
        const int shift = kw - g.pad;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.height) continue;
          const T* src = row + static_cast<std::size_t>(oh) * g.out_w;
          T* dst = x + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
          if (g.stride == 1) {
            for (int ow = lo; ow < hi; ++ow) dst[ow + shift] += src[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow * g.stride + shift] += src[ow];
          }
        }
      }
    }
  }
}

// Sum of term(0..n-1) over fixed lanes in T, combined in double. The order
// depends only on the index, never on buffer alignment, so repeated runs agree
// bit for bit.
template <typename T, typename F>
double lane_sum(std::size_t n, F term) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += term(i + j);
  }
  for (std::size_t j = 0; i < n; ++i, ++j) acc[j] += term(i);
  double total = 0;
  for (T a : acc) total += static_cast<double>(a);
  return total;
}

// Per-thread scratch buffer for column matrices.
template <typename T, int Slot = 0>
T* scratch(std::size_t count) {
  thread_local std::vector<T> buffer;
  if (buffer.size() < count) buffer.resize(count);
  return buffer.data();
}

template <typename T>
void check_kernel(const ConvParams<T>& p) {
  const auto& s = p.kernel.shape();
  if (s.h != s.w) throw ShapeError("conv kernel must be square, got " + s.str());
  if (s.h % 2 == 0) throw ConfigError("conv kernel size must be odd, got " + std::to_string(s.h));
}

std::size_t chunk_count(int batch) { return static_cast<std::size_t>((batch + kGradChunk - 1) / kGradChunk); }

template <typename T>
void reduce_partials(std::vector<ConvParams<T>>& partials, ConvParams<T>& grads) {
  for (auto& part : partials) {
    grads.kernel += part.kernel;
    for (std::size_t i = 0; i < grads.bias.size(); ++i) grads.bias[i] += part.bias[i];
  }
}

template <typename T>
void check_grad_buffer(const ConvParams<T>& params, const ConvParams<T>& grads) {
  if (grads.kernel.shape() != params.kernel.shape() || grads.bias.size() != params.bias.size()) {
    throw ShapeError("conv gradient buffer does not match parameters");
  }
}

template <typename T>
T pow_neg(T s, double beta) {
  if (beta == 0.5) return T(1) / std::sqrt(s);
  return static_cast<T>(std::pow(static_cast<double>(s), -beta));
}

}  // namespace

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params, int stride) {
  check_kernel(params);
  if (stride != 1 && stride != 2) throw ConfigError("conv2d stride must be 1 or 2");
  const auto& in = input.shape();
  const auto& ks = params.kernel.shape();
  if (in.c != ks.c) {
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " maps, kernel expects " +
                     std::to_string(ks.c));
  }
  if (params.bias.size() != static_cast<std::size_t>(ks.n)) throw ShapeError("conv2d: bias length");
  const auto g = conv_geometry(in.c, in.h, in.w, ks.h, stride);
  Tensor<T> out(Shape{in.n, ks.n, g.out_h, g.out_w});
  ConstMatMap<T> w(params.kernel.raw(), ks.n, g.rows());

  util::parallel_for(static_cast<std::size_t>(in.n), [&](std::size_t n) {
    T* col = scratch<T>(static_cast<std::size_t>(g.rows()) * g.cols());
    im2col(input.sample(static_cast<int>(n)).data(), g, col);
    MatMap<T> y(out.sample(static_cast<int>(n)).data(), ks.n, g.cols());
    y.noalias() = w * ConstMatMap<T>(col, g.rows(), g.cols());
    for (int o = 0; o < ks.n; ++o) y.row(o).array() += params.bias[o];
  });
  return out;
}

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params, int stride,
                          const Tensor<T>& grad_out, ConvParams<T>& grads, bool want_input_grad) {
  check_kernel(params);
  check_grad_buffer(params, grads);
  const auto& in = input.shape();
  const auto& ks = params.kernel.shape();
  const auto g = conv_geometry(in.c, in.h, in.w, ks.h, stride);
  if (grad_out.shape() != Shape{in.n, ks.n, g.out_h, g.out_w}) {
    throw ShapeError("conv2d_backward: grad_out shape " + grad_out.shape().str());
  }
  Tensor<T> grad_in;
  if (want_input_grad) grad_in = Tensor<T>(in);
  ConstMatMap<T> w(params.kernel.raw(), ks.n, g.rows());

  std::vector<ConvParams<T>> partials(chunk_count(in.n), grads.zeros_like());
  util::parallel_for(partials.size(), [&](std::size_t chunk) {
    auto& part = partials[chunk];
    MatMap<T> dw(part.kernel.raw(), ks.n, g.rows());
    T* col = scratch<T>(static_cast<std::size_t>(g.rows()) * g.cols());
    const int end = std::min<int>(in.n, static_cast<int>(chunk + 1) * kGradChunk);
    for (int n = static_cast<int>(chunk) * kGradChunk; n < end; ++n) {
      ConstMatMap<T> dy(grad_out.sample(n).data(), ks.n, g.cols());
      im2col(input.sample(n).data(), g, col);
      MatMap<T> cm(col, g.rows(), g.cols());
      dw.noalias() += dy * cm.transpose();
      for (int o = 0; o < ks.n; ++o) {
        const T* row = dy.data() + static_cast<std::size_t>(o) * g.cols();
        part.bias[o] += static_cast<T>(lane_sum<T>(g.cols(), [row](std::size_t i) { return row[i]; }));
      }
      if (want_input_grad) {
        cm.noalias() = w.transpose() * dy;
        col2im(col, g, grad_in.sample(n).data());
      }
    }
  });
  reduce_partials(partials, grads);
  return grad_in;
}

template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const ConvParams<T>& params) {
  check_kernel(params);
  const auto& in = input.shape();
  const auto& ks = params.kernel.shape();
  if (in.h == 0 || in.w == 0) throw ShapeError("transposed_conv2d: empty spatial extent");
  if (in.c != ks.n) {
    throw ShapeError("transposed_conv2d: input has " + std::to_string(in.c) +
                     " maps, kernel expects " + std::to_string(ks.n));
  }
  if (params.bias.size() != static_cast<std::size_t>(ks.c)) {
    throw ShapeError("transposed_conv2d: bias length");
  }
  const auto g = conv_geometry(ks.c, 2 * in.h, 2 * in.w, ks.h, 2);
  Tensor<T> out(Shape{in.n, ks.c, g.height, g.width});
  ConstMatMap<T> w(params.kernel.raw(), ks.n, g.rows());

  util::parallel_for(static_cast<std::size_t>(in.n), [&](std::size_t n) {
    T* col = scratch<T>(static_cast<std::size_t>(g.rows()) * g.cols());
    MatMap<T> cm(col, g.rows(), g.cols());
    cm.noalias() = w.transpose() * ConstMatMap<T>(input.sample(static_cast<int>(n)).data(), ks.n, g.cols());
    T* dst = out.sample(static_cast<int>(n)).data();
    col2im(col, g, dst);
    for (int c = 0; c < ks.c; ++c) {
      T* plane = dst + static_cast<std::size_t>(c) * g.height * g.width;
      for (int i = 0; i < g.height * g.width; ++i) plane[i] += params.bias[c];
    }
  });
  return out;
}

template <typename T>
Tensor<T> transposed_conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                                     const Tensor<T>& grad_out, ConvParams<T>& grads) {
  check_kernel(params);
  check_grad_buffer(params, grads);
  const auto& in = input.shape();
  const auto& ks = params.kernel.shape();
  const auto g = conv_geometry(ks.c, 2 * in.h, 2 * in.w, ks.h, 2);
  if (grad_out.shape() != Shape{in.n, ks.c, g.height, g.width}) {
    throw ShapeError("transposed_conv2d_backward: grad_out shape " + grad_out.shape().str());
  }
  Tensor<T> grad_in(in);
  ConstMatMap<T> w(params.kernel.raw(), ks.n, g.rows());

  std::vector<ConvParams<T>> partials(chunk_count(in.n), grads.zeros_like());
  util::parallel_for(partials.size(), [&](std::size_t chunk) {
    auto& part = partials[chunk];
    MatMap<T> dw(part.kernel.raw(), ks.n, g.rows());
    T* col = scratch<T>(static_cast<std::size_t>(g.rows()) * g.cols());
    const int end = std::min<int>(in.n, static_cast<int>(chunk + 1) * kGradChunk);
    for (int n = static_cast<int>(chunk) * kGradChunk; n < end; ++n) {
      const T* go = grad_out.sample(n).data();
      im2col(go, g, col);
      ConstMatMap<T> cm(col, g.rows(), g.cols());
      ConstMatMap<T> y(input.sample(n).data(), ks.n, g.cols());
      dw.noalias() += y * cm.transpose();
      MatMap<T>(grad_in.sample(n).data(), ks.n, g.cols()).noalias() = w * cm;
      for (int c = 0; c < ks.c; ++c) {
        const T* plane = go + static_cast<std::size_t>(c) * g.height * g.width;
        T s = 0;
        for (int i = 0; i < g.height * g.width; ++i) s += plane[i];
        part.bias[c] += s;
      }
    }
  });
  reduce_partials(partials, grads);
  return grad_in;
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& input, std::vector<std::uint32_t>* argmax) {
  const auto& s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ShapeError("maxpool2x2: odd spatial size " + s.str());
  Tensor<T> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  if (argmax) argmax->assign(out.size(), 0);
  const std::size_t per_sample = out.shape().sample();
  for (int n = 0; n < s.n; ++n) {
    const T* x = input.sample(n).data();
    T* y = out.sample(n).data();
    for (int c = 0; c < s.c; ++c) {
      for (int oh = 0; oh < s.h / 2; ++oh) {
        for (int ow = 0; ow < s.w / 2; ++ow) {
          std::uint32_t best = static_cast<std::uint32_t>((c * s.h + 2 * oh) * s.w + 2 * ow);
          for (int dh = 0; dh < 2; ++dh) {
            for (int dw = 0; dw < 2; ++dw) {
              const auto idx = static_cast<std::uint32_t>((c * s.h + 2 * oh + dh) * s.w + 2 * ow + dw);
              if (x[idx] > x[best]) best = idx;
            }
          }
          const std::size_t o = (static_cast<std::size_t>(c) * (s.h / 2) + oh) * (s.w / 2) + ow;
          y[o] = x[best];
          if (argmax) (*argmax)[n * per_sample + o] = best;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, std::span<const std::uint32_t> argmax,
                           const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool_backward: argmax size");
  Tensor<T> grad_in(input_shape);
  const std::size_t per_sample = grad_out.shape().sample();
  for (int n = 0; n < grad_out.shape().n; ++n) {
    T* dst = grad_in.sample(n).data();
    const T* g = grad_out.sample(n).data();
    for (std::size_t o = 0; o < per_sample; ++o) dst[argmax[n * per_sample + o]] += g[o];
  }
  return grad_in;
}

template <typename T>
Tensor<T> global_maxpool(const Tensor<T>& input, std::vector<std::uint32_t>* argmax) {
  const auto& s = input.shape();
  if (s.h == 0 || s.w == 0) throw ShapeError("global_maxpool: empty spatial extent");
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  if (argmax) argmax->assign(out.size(), 0);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const T* x = input.sample(n).data();
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = c * plane;
      std::size_t best = base;
      for (std::size_t i = base + 1; i < base + plane; ++i) {
        if (x[i] > x[best]) best = i;
      }
      out.at(n, c, 0, 0) = x[best];
      if (argmax) (*argmax)[static_cast<std::size_t>(n) * s.c + c] = static_cast<std::uint32_t>(best);
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_maxpool_backward(const Tensor<T>& grad_out, std::span<const std::uint32_t> argmax,
                                  const Shape& input_shape) {
  return maxpool_backward(grad_out, argmax, input_shape);
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
BatchNormParams<T> BatchNormParams<T>::create(int maps, int time_steps) {
  BatchNormParams p;
  p.gamma.assign(maps, T(1));
  p.beta.assign(maps, T(0));
  p.running_mean.assign(time_steps, std::vector<T>(maps, T(0)));
  p.running_var.assign(time_steps, std::vector<T>(maps, T(1)));
  p.initialized.assign(time_steps, 0);
  return p;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormParams<T>& params, BnMode mode, int time_step,
                    BatchNormCache<T>* cache) {
  const auto& s = input.shape();
  if (s.c != params.maps()) throw ShapeError("batchnorm: map count mismatch");
  if (time_step < 0 || time_step >= params.time_steps()) {
    throw ShapeError("batchnorm: time step " + std::to_string(time_step) + " out of range");
  }
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  std::vector<T> mean(s.c), inv_std(s.c);

  if (mode == BnMode::train) {
    if (s.n < 2) throw ShapeError("batchnorm: train mode needs batch size >= 2");
    for (int c = 0; c < s.c; ++c) {
      double sum = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* x = input.sample(n).data() + c * plane;
        sum += lane_sum<T>(plane, [x](std::size_t i) { return x[i]; });
      }
      const double mu = sum / count;
      double sq = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* x = input.sample(n).data() + c * plane;
        const T m = static_cast<T>(mu);
        sq += lane_sum<T>(plane, [x, m](std::size_t i) { return (x[i] - m) * (x[i] - m); });
      }
      const double var = sq / count;
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(params.epsilon)));
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      auto& rm = params.running_mean[time_step][c];
      auto& rv = params.running_var[time_step][c];
      if (!params.initialized[time_step]) {
        rm = static_cast<T>(mu);
        rv = static_cast<T>(unbiased);
      } else {
        rm = params.momentum * rm + (T(1) - params.momentum) * static_cast<T>(mu);
        rv = params.momentum * rv + (T(1) - params.momentum) * static_cast<T>(unbiased);
      }
    }
    params.initialized[time_step] = 1;
  } else {
    if (!params.initialized[time_step]) {
      throw Error("batchnorm: uninitialized statistics for time step " + std::to_string(time_step));
    }
    for (int c = 0; c < s.c; ++c) {
      mean[c] = params.running_mean[time_step][c];
      inv_std[c] = T(1) / std::sqrt(params.running_var[time_step][c] + params.epsilon);
    }
  }

  Tensor<T> out(s);
  Tensor<T> normalized;
  if (cache) normalized = Tensor<T>(s);
  for (int n = 0; n < s.n; ++n) {
    const T* x = input.sample(n).data();
    T* y = out.sample(n).data();
    T* xh = cache ? normalized.sample(n).data() : nullptr;
    for (int c = 0; c < s.c; ++c) {
      const T mu = mean[c], is = inv_std[c], g = params.gamma[c], b = params.beta[c];
      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
        const T v = (x[i] - mu) * is;
        if (xh) xh[i] = v;
        y[i] = g * v + b;
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->normalized = std::move(normalized);
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                             const BatchNormParams<T>& params, std::span<T> grad_gamma,
                             std::span<T> grad_beta) {
  const auto& s = grad_out.shape();
  if (cache.normalized.shape() != s) throw ShapeError("batchnorm_backward: cache shape mismatch");
  if (grad_gamma.size() != static_cast<std::size_t>(s.c) || grad_beta.size() != static_cast<std::size_t>(s.c)) {
    throw ShapeError("batchnorm_backward: gradient buffer size");
  }
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  Tensor<T> grad_in(s);
  for (int c = 0; c < s.c; ++c) {
    double sum_g = 0, sum_gx = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* g = grad_out.sample(n).data() + c * plane;
      const T* xh = cache.normalized.sample(n).data() + c * plane;
      sum_g += lane_sum<T>(plane, [g](std::size_t i) { return g[i]; });
      sum_gx += lane_sum<T>(plane, [g, xh](std::size_t i) { return g[i] * xh[i]; });
    }
    grad_gamma[c] += static_cast<T>(sum_gx);
    grad_beta[c] += static_cast<T>(sum_g);
    const T scale = params.gamma[c] * cache.inv_std[c];
    const T mean_g = static_cast<T>(sum_g / count);
    const T mean_gx = static_cast<T>(sum_gx / count);
    for (int n = 0; n < s.n; ++n) {
      const T* g = grad_out.sample(n).data() + c * plane;
      const T* xh = cache.normalized.sample(n).data() + c * plane;
      T* dx = grad_in.sample(n).data() + c * plane;
      if (cache.mode == BnMode::train) {
        for (std::size_t i = 0; i < plane; ++i) dx[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
      } else {
        for (std::size_t i = 0; i < plane; ++i) dx[i] = scale * g[i];
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Pointwise and normalization

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (input.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

namespace {

// scale[k] = c + alpha * sum over the clamped channel window of sq.
template <typename T>
void lrn_denominator(const T* a, int maps, std::size_t plane, const LrnParams& p, T* scale) {
  const int half = p.n / 2;
  const std::size_t total = static_cast<std::size_t>(maps) * plane;
  T* sq = scratch<T, 3>(total);
  for (std::size_t i = 0; i < total; ++i) sq[i] = a[i] * a[i];
  for (int k = 0; k < maps; ++k) {
    T* dst = scale + k * plane;
    std::fill(dst, dst + plane, T(0));
    const int lo = std::max(0, k - half);
    const int hi = std::min(maps - 1, k + half);
    for (int j = lo; j <= hi; ++j) {
      const T* src = sq + j * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(p.c) + static_cast<T>(p.alpha) * dst[i];
  }
}

}  // namespace

template <typename T>
Tensor<T> lrn(const Tensor<T>& input, const LrnParams& params) {
  const auto& s = input.shape();
  Tensor<T> out(s);
  const std::size_t plane = s.plane();
  util::parallel_for(static_cast<std::size_t>(s.n), [&](std::size_t n) {
    const std::size_t count = s.sample();
    T* scale = scratch<T, 1>(count);
    const T* a = input.sample(static_cast<int>(n)).data();
    lrn_denominator(a, s.c, plane, params, scale);
    T* y = out.sample(static_cast<int>(n)).data();
    if (params.beta == 0.5) {
      for (std::size_t i = 0; i < count; ++i) y[i] = a[i] / std::sqrt(scale[i]);
    } else {
      for (std::size_t i = 0; i < count; ++i) y[i] = a[i] * pow_neg(scale[i], params.beta);
    }
  });
  return out;
}

template <typename T>
Tensor<T> lrn_backward(const Tensor<T>& input, const LrnParams& params, const Tensor<T>& grad_out) {
  const auto& s = input.shape();
  if (grad_out.shape() != s) throw ShapeError("lrn_backward: shape mismatch");
  Tensor<T> grad_in(s);
  const std::size_t plane = s.plane();
  const int half = params.n / 2;
  const T coeff = static_cast<T>(2.0 * params.alpha * params.beta);
  util::parallel_for(static_cast<std::size_t>(s.n), [&](std::size_t n) {
    const T* a = input.sample(static_cast<int>(n)).data();
    const T* g = grad_out.sample(static_cast<int>(n)).data();
    T* dx = grad_in.sample(static_cast<int>(n)).data();
    const std::size_t count = s.sample();
    T* scale = scratch<T, 1>(count);
    T* q = scratch<T, 2>(count);
    lrn_denominator(a, s.c, plane, params, scale);
    if (params.beta == 0.5) {
      for (std::size_t i = 0; i < count; ++i) {
        const T sb = T(1) / std::sqrt(scale[i]);
        dx[i] = g[i] * sb;
        q[i] = g[i] * a[i] * sb / scale[i];
      }
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        const T sb = pow_neg(scale[i], params.beta);
        dx[i] = g[i] * sb;
        q[i] = g[i] * a[i] * sb / scale[i];
      }
    }
    // The window relation is symmetric, so the sum over outputs k whose
    // window contains j runs over the same clamped window around j.
    for (int j = 0; j < s.c; ++j) {
      const int lo = std::max(0, j - half);
      const int hi = std::min(s.c - 1, j + half);
      T* d = dx + j * plane;
      const T* aj = a + j * plane;
      for (int k = lo; k <= hi; ++k) {
        const T* qk = q + k * plane;
        for (std::size_t i = 0; i < plane; ++i) d[i] -= coeff * aj[i] * qk[i];
      }
    }
  });
  return grad_in;
}

// ---------------------------------------------------------------------------
// Readout

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const DenseParams<T>& params) {
  const int features = params.features();
  if (input.shape().sample() != static_cast<std::size_t>(features)) {
    throw ShapeError("fully_connected: expected " + std::to_string(features) + " features, got " +
                     std::to_string(input.shape().sample()));
  }
  if (params.bias.size() != static_cast<std::size_t>(params.outputs())) {
    throw ShapeError("fully_connected: bias length");
  }
  const int n = input.shape().n;
  Tensor<T> out(Shape{n, params.outputs(), 1, 1});
  for (int s = 0; s < n; ++s) {
    const T* x = input.sample(s).data();
    for (int o = 0; o < params.outputs(); ++o) {
      const T* w = params.weights.raw() + static_cast<std::size_t>(o) * features;
      T acc = params.bias[o];
      for (int f = 0; f < features; ++f) acc += w[f] * x[f];
      out.at(s, o, 0, 0) = acc;
    }
  }
  return out;
}

template <typename T>
Tensor<T> fully_connected_backward(const Tensor<T>& input, const DenseParams<T>& params,
                                   const Tensor<T>& grad_out, DenseParams<T>& grads) {
  const int features = params.features();
  const int n = input.shape().n;
  if (grad_out.shape() != Shape{n, params.outputs(), 1, 1}) {
    throw ShapeError("fully_connected_backward: grad_out shape");
  }
  Tensor<T> grad_in(input.shape());
  for (int s = 0; s < n; ++s) {
    const T* x = input.sample(s).data();
    T* dx = grad_in.sample(s).data();
    for (int o = 0; o < params.outputs(); ++o) {
      const T g = grad_out.at(s, o, 0, 0);
      const T* w = params.weights.raw() + static_cast<std::size_t>(o) * features;
      T* dw = grads.weights.raw() + static_cast<std::size_t>(o) * features;
      for (int f = 0; f < features; ++f) {
        dw[f] += g * x[f];
        dx[f] += g * w[f];
      }
      grads.bias[o] += g;
    }
  }
  return grad_in;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const auto& s = logits.shape();
  Tensor<T> out(s);
  const auto k = s.sample();
  for (int n = 0; n < s.n; ++n) {
    const T* x = logits.sample(n).data();
    T* y = out.sample(n).data();
    const T mx = *std::max_element(x, x + k);
    T sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (std::size_t i = 0; i < k; ++i) y[i] /= sum;
  }
  return out;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
  if (probs.shape() != grad_probs.shape()) throw ShapeError("softmax_backward: shape mismatch");
  Tensor<T> out(probs.shape());
  const auto k = probs.shape().sample();
  for (int n = 0; n < probs.shape().n; ++n) {
    const T* p = probs.sample(n).data();
    const T* g = grad_probs.sample(n).data();
    T* d = out.sample(n).data();
    T dot = 0;
    for (std::size_t i = 0; i < k; ++i) dot += p[i] * g[i];
    for (std::size_t i = 0; i < k; ++i) d[i] = p[i] * (g[i] - dot);
  }
  return out;
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, int classes) {
  Tensor<T> out(Shape{static_cast<int>(labels.size()), classes, 1, 1});
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || labels[n] >= classes) {
      throw ValidationError("one_hot: label " + std::to_string(labels[n]) + " out of range");
    }
    out.at(static_cast<int>(n), labels[n], 0, 0) = T(1);
  }
  return out;
}

template <typename T>
double cross_entropy_time_loss(std::span<const Tensor<T>> probs, const Tensor<T>& targets,
                               std::vector<Tensor<T>>* grads) {
  const auto& ts = targets.shape();
  for (int n = 0; n < ts.n; ++n) {
    int ones = 0;
    for (T v : targets.sample(n)) {
      if (v == T(1)) {
        ++ones;
      } else if (v != T(0)) {
        throw ValidationError("cross_entropy_time_loss: target is not one-hot");
      }
    }
    if (ones != 1) throw ValidationError("cross_entropy_time_loss: target is not one-hot");
  }
  if (grads) grads->clear();
  double total = 0;
  for (const auto& p : probs) {
    if (p.shape() != ts) throw ShapeError("cross_entropy_time_loss: output/target shape mismatch");
    Tensor<T> g;
    if (grads) g = Tensor<T>(ts);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double y = targets[i];
      const double q = p[i];
      if (y == 1.0) {
        total -= std::log(std::max(q, kLogClamp));
        if (grads && q > kLogClamp) g[i] = static_cast<T>(-1.0 / q);
      } else {
        total -= std::log(std::max(1.0 - q, kLogClamp));
        if (grads && 1.0 - q > kLogClamp) g[i] = static_cast<T>(1.0 / (1.0 - q));
      }
    }
    if (grads) grads->push_back(std::move(g));
  }
  return total;
}

#define OCCLUNET_INSTANTIATE_OPS(T)                                                                  \
  template bool all_finite<T>(const Tensor<T>&);                                                     \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&, int);                         \
  template Tensor<T> conv2d_backward<T>(const Tensor<T>&, const ConvParams<T>&, int,                 \
                                        const Tensor<T>&, ConvParams<T>&, bool);                     \
  template Tensor<T> transposed_conv2d<T>(const Tensor<T>&, const ConvParams<T>&);                   \
  template Tensor<T> transposed_conv2d_backward<T>(const Tensor<T>&, const ConvParams<T>&,           \
                                                   const Tensor<T>&, ConvParams<T>&);                \
  template Tensor<T> maxpool2x2<T>(const Tensor<T>&, std::vector<std::uint32_t>*);                   \
  template Tensor<T> maxpool_backward<T>(const Tensor<T>&, std::span<const std::uint32_t>,           \
                                         const Shape&);                                              \
  template Tensor<T> global_maxpool<T>(const Tensor<T>&, std::vector<std::uint32_t>*);               \
  template Tensor<T> global_maxpool_backward<T>(const Tensor<T>&, std::span<const std::uint32_t>,    \
                                                const Shape&);                                       \
  template struct BatchNormParams<T>;                                                                \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, BatchNormParams<T>&, BnMode, int,                \
                                  BatchNormCache<T>*);                                               \
  template Tensor<T> batchnorm_backward<T>(const Tensor<T>&, const BatchNormCache<T>&,               \
                                           const BatchNormParams<T>&, std::span<T>, std::span<T>);   \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                      \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> lrn<T>(const Tensor<T>&, const LrnParams&);                                     \
  template Tensor<T> lrn_backward<T>(const Tensor<T>&, const LrnParams&, const Tensor<T>&);          \
  template Tensor<T> fully_connected<T>(const Tensor<T>&, const DenseParams<T>&);                    \
  template Tensor<T> fully_connected_backward<T>(const Tensor<T>&, const DenseParams<T>&,            \
                                                 const Tensor<T>&, DenseParams<T>&);                 \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                   \
  template Tensor<T> softmax_backward<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> one_hot<T>(std::span<const int>, int);                                          \
  template double cross_entropy_time_loss<T>(std::span<const Tensor<T>>, const Tensor<T>&,           \
                                             std::vector<Tensor<T>>*);

OCCLUNET_INSTANTIATE_OPS(float)
OCCLUNET_INSTANTIATE_OPS(double)

#undef OCCLUNET_INSTANTIATE_OPS

}  // namespace occlunet::nn
