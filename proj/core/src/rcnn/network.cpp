#include "occlunet/rcnn/network.hpp"

#include <algorithm>
#include <cmath>

#include "occlunet/digits/pcg32.hpp"
#include "occlunet/util/errors.hpp"

namespace occlunet::rcnn {
namespace {

using nn::BnMode;
using nn::ConvParams;
using nn::Shape;
using nn::Tensor;

const nn::LrnParams kLrn{};

template <typename T>
ConvParams<T> make_conv(int out_maps, int in_maps, int k, digits::Pcg32& rng) {
  ConvParams<T> p{Tensor<T>(Shape{out_maps, in_maps, k, k}), std::vector<T>(out_maps, T(0))};
  const double limit = init_limit(p.kernel.shape());
  for (auto& w : p.kernel.data()) w = static_cast<T>(limit * (2.0 * rng.uniform() - 1.0));
  return p;
}

template <typename T>
void add_bias(Tensor<T>& z, std::span<const T> bias) {
  const auto& s = z.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    T* x = z.sample(n).data();
    for (int c = 0; c < s.c; ++c) {
      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) x[i] += bias[c];
    }
  }
}

template <typename T>
void accumulate_bias_grad(const Tensor<T>& dz, std::vector<T>& grad_bias) {
  const auto& s = dz.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const T* x = dz.sample(n).data();
    for (int c = 0; c < s.c; ++c) {
      T sum = 0;
      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) sum += x[i];
      grad_bias[c] += sum;
    }
  }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.empty()) {
    dst = src;
  } else {
    dst += src;
  }
}

// BN -> ReLU -> LRN on the summed drive z.
template <typename T>
void hidden_nonlinearity(Tensor<T> z, nn::BatchNormParams<T>& bn, BnMode mode, int t, LayerCache<T>& cache,
                         bool keep_cache) {
  auto bn_out = nn::batchnorm(z, bn, mode, t, keep_cache ? &cache.bn : nullptr);
  auto relu_out = nn::relu(bn_out);
  cache.h = nn::lrn(relu_out, kLrn);
  if (keep_cache) {
    cache.bn_out = std::move(bn_out);
    cache.relu_out = std::move(relu_out);
  }
}

template <typename T>
Tensor<T> hidden_backward(const LayerCache<T>& cache, const nn::BatchNormParams<T>& bn, const Tensor<T>& dh,
                          nn::BatchNormParams<T>& bn_grads) {
  auto d = nn::lrn_backward(cache.relu_out, kLrn, dh);
  d = nn::relu_backward(cache.bn_out, d);
  return nn::batchnorm_backward(d, cache.bn, bn, std::span<T>(bn_grads.gamma), std::span<T>(bn_grads.beta));
}

template <typename T>
void check_params(const NetParams<T>& params, const ArchSpec& arch) {
  const auto& l1 = params.layers[0];
  const auto& l2 = params.layers[1];
  if (l1.lateral.has_value() != arch.lateral || l2.lateral.has_value() != arch.lateral ||
      l1.topdown.has_value() != arch.topdown || l2.topdown.has_value()) {
    throw ConfigError("parameters do not match architecture " + arch.name());
  }
  if (l1.bottom_up.kernel.shape() != Shape{arch.feature_maps, arch.input_channels, arch.kernel_size, arch.kernel_size}) {
    throw ConfigError("parameters do not match architecture " + arch.name());
  }
  if (l1.bn.time_steps() != arch.time_steps) throw ConfigError("batch-norm statistics have the wrong number of steps");
}

}  // namespace

double init_limit(const nn::Shape& s) {
  const double receptive = static_cast<double>(s.h) * s.w;
  const double fan_in = s.c * receptive;
  const double fan_out = s.n * receptive;
  return std::sqrt(6.0 / (fan_in + fan_out));
}

template <typename T>
std::vector<std::span<T>> NetParams<T>::blocks() {
  std::vector<std::span<T>> out;
  auto conv = [&](ConvParams<T>& p) {
    out.emplace_back(p.kernel.data());
    out.emplace_back(p.bias);
  };
  for (auto& l : layers) {
    conv(l.bottom_up);
    if (l.lateral) conv(*l.lateral);
    if (l.topdown) conv(*l.topdown);
    out.emplace_back(l.bn.gamma);
    out.emplace_back(l.bn.beta);
  }
  out.emplace_back(readout.weights.data());
  out.emplace_back(readout.bias);
  return out;
}

template <typename T>
std::vector<std::span<const T>> NetParams<T>::blocks() const {
  auto mutable_blocks = const_cast<NetParams*>(this)->blocks();
  return {mutable_blocks.begin(), mutable_blocks.end()};
}

template <typename T>
NetParams<T> NetParams<T>::zeros_like() const {
  NetParams out = *this;
  for (auto b : out.blocks()) std::fill(b.begin(), b.end(), T(0));
  return out;
}

template <typename T>
std::vector<Tensor<T>> UnrollState<T>::all_probs() const {
  std::vector<Tensor<T>> out;
  for (const auto& s : steps) out.push_back(s.probs);
  return out;
}

template <typename T>
std::vector<int> UnrollState<T>::predictions() const {
  const auto& p = steps.back().probs;
  std::vector<int> out(p.shape().n);
  for (int n = 0; n < p.shape().n; ++n) {
    auto row = p.sample(n);
    out[n] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

template <typename T>
NetParams<T> build(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  digits::Pcg32 rng(seed, 0x6f63636c756e6574ULL);
  const int m = arch.feature_maps, k = arch.kernel_size;
  NetParams<T> p;
  auto& l1 = p.layers[0];
  auto& l2 = p.layers[1];
  l1.bottom_up = make_conv<T>(m, arch.input_channels, k, rng);
  if (arch.lateral) l1.lateral = make_conv<T>(m, m, k, rng);
  // Adjoint layout: (layer-2 maps, layer-1 maps, k, k).
  if (arch.topdown) l1.topdown = make_conv<T>(m, m, k, rng);
  l1.bn = nn::BatchNormParams<T>::create(m, arch.time_steps);
  l2.bottom_up = make_conv<T>(m, m, k, rng);
  if (arch.lateral) l2.lateral = make_conv<T>(m, m, k, rng);
  l2.bn = nn::BatchNormParams<T>::create(m, arch.time_steps);

  p.readout.weights = Tensor<T>(Shape{arch.classes, m, 1, 1});
  p.readout.bias.assign(arch.classes, T(0));
  // Zero readout: the untrained network predicts the uniform distribution.
  return p;
}

template <typename T>
UnrollState<T> forward(NetParams<T>& params, const ArchSpec& arch, const Tensor<T>& input, BnMode mode,
                       bool keep_cache) {
  check_params(params, arch);
  const auto& in = input.shape();
  if (in.c != arch.input_channels || in.h != arch.input_size || in.w != arch.input_size) {
    throw ShapeError("network input " + in.str() + " does not match architecture " + arch.name());
  }
  auto& l1 = params.layers[0];
  auto& l2 = params.layers[1];

  UnrollState<T> state;
  state.cached = keep_cache;
  if (keep_cache) state.input = input;
  state.bottom_up_1 = nn::conv2d(input, l1.bottom_up, 1);
  state.steps.resize(arch.time_steps);

  for (int t = 0; t < arch.time_steps; ++t) {
    auto& s = state.steps[t];
    const StepCache<T>* prev = t > 0 ? &state.steps[t - 1] : nullptr;

    Tensor<T> z1 = state.bottom_up_1;
    if (l1.lateral) {
      if (prev) {
        z1 += nn::conv2d(prev->layers[0].h, *l1.lateral, 1);
      } else {
        add_bias<T>(z1, l1.lateral->bias);
      }
    }
    if (l1.topdown) {
      if (prev) {
        z1 += nn::transposed_conv2d(prev->layers[1].h, *l1.topdown);
      } else {
        add_bias<T>(z1, l1.topdown->bias);
      }
    }
    hidden_nonlinearity(std::move(z1), l1.bn, mode, t, s.layers[0], keep_cache);

    s.pooled = nn::maxpool2x2(s.layers[0].h, keep_cache ? &s.pool_argmax : nullptr);
    Tensor<T> z2 = nn::conv2d(s.pooled, l2.bottom_up, 1);
    if (l2.lateral) {
      if (prev) {
        z2 += nn::conv2d(prev->layers[1].h, *l2.lateral, 1);
      } else {
        add_bias<T>(z2, l2.lateral->bias);
      }
    }
    hidden_nonlinearity(std::move(z2), l2.bn, mode, t, s.layers[1], keep_cache);

    s.activation = nn::global_maxpool(s.layers[1].h, keep_cache ? &s.activation_argmax : nullptr);
    s.probs = nn::softmax(nn::fully_connected(s.activation, params.readout));

    if (!keep_cache) {
      s.pooled = Tensor<T>();
      // h of step t-1 is no longer needed once step t is done.
      if (prev) {
        state.steps[t - 1].layers[0].h = Tensor<T>();
        state.steps[t - 1].layers[1].h = Tensor<T>();
      }
    }
  }
  if (!keep_cache) state.bottom_up_1 = Tensor<T>();
  return state;
}

template <typename T>
void backward(const NetParams<T>& params, const ArchSpec& arch, const UnrollState<T>& state,
              std::span<const Tensor<T>> grad_probs, NetParams<T>& grads) {
  if (!state.cached) throw Error("backward: forward pass was run without caches");
  if (static_cast<int>(grad_probs.size()) != state.time_steps()) {
    throw ShapeError("backward: one output gradient per time step required");
  }
  const auto& l1 = params.layers[0];
  const auto& l2 = params.layers[1];
  auto& g1 = grads.layers[0];
  auto& g2 = grads.layers[1];

  Tensor<T> dh1_carry, dh2_carry;
  Tensor<T> dz1_bottom(state.bottom_up_1.shape());

  for (int t = state.time_steps() - 1; t >= 0; --t) {
    const auto& s = state.steps[t];
    const StepCache<T>* prev = t > 0 ? &state.steps[t - 1] : nullptr;

    auto dlogits = nn::softmax_backward(s.probs, grad_probs[t]);
    auto da = nn::fully_connected_backward(s.activation, params.readout, dlogits, grads.readout);
    auto dh2 = nn::global_maxpool_backward(da, s.activation_argmax, s.layers[1].h.shape());
    if (!dh2_carry.empty()) dh2 += dh2_carry;

    Tensor<T> next_dh1, next_dh2;

    auto dz2 = hidden_backward(s.layers[1], l2.bn, dh2, g2.bn);
    auto dpooled = nn::conv2d_backward(s.pooled, l2.bottom_up, 1, dz2, g2.bottom_up);
    if (l2.lateral) {
      if (prev) {
        next_dh2 = nn::conv2d_backward(prev->layers[1].h, *l2.lateral, 1, dz2, *g2.lateral);
      } else {
        accumulate_bias_grad(dz2, g2.lateral->bias);
      }
    }

    auto dh1 = nn::maxpool_backward(dpooled, s.pool_argmax, s.layers[0].h.shape());
    if (!dh1_carry.empty()) dh1 += dh1_carry;
    auto dz1 = hidden_backward(s.layers[0], l1.bn, dh1, g1.bn);
    dz1_bottom += dz1;
    if (l1.lateral) {
      if (prev) {
        next_dh1 = nn::conv2d_backward(prev->layers[0].h, *l1.lateral, 1, dz1, *g1.lateral);
      } else {
        accumulate_bias_grad(dz1, g1.lateral->bias);
      }
    }
    if (l1.topdown) {
      if (prev) {
        add_into(next_dh2, nn::transposed_conv2d_backward(prev->layers[1].h, *l1.topdown, dz1, *g1.topdown));
      } else {
        accumulate_bias_grad(dz1, g1.topdown->bias);
      }
    }
    dh1_carry = std::move(next_dh1);
    dh2_carry = std::move(next_dh2);
  }
  nn::conv2d_backward(state.input, l1.bottom_up, 1, dz1_bottom, g1.bottom_up, false);
  (void)arch;
}

template <typename T>
double recurrent_weight_sum(const NetParams<T>& params) {
  double sum = 0;
  for (const auto& l : params.layers) {
    if (l.lateral) {
      for (T w : l.lateral->kernel.data()) sum += w;
    }
    if (l.topdown) {
      for (T w : l.topdown->kernel.data()) sum += w;
    }
  }
  return sum;
}

template <typename U, typename T>
NetParams<U> cast_params(const NetParams<T>& params) {
  auto conv = [](const ConvParams<T>& p) {
    return ConvParams<U>{p.kernel.template cast<U>(), std::vector<U>(p.bias.begin(), p.bias.end())};
  };
  auto vec = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
  NetParams<U> out;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& src = params.layers[i];
    auto& dst = out.layers[i];
    dst.bottom_up = conv(src.bottom_up);
    if (src.lateral) dst.lateral = conv(*src.lateral);
    if (src.topdown) dst.topdown = conv(*src.topdown);
    dst.bn.gamma = vec(src.bn.gamma);
    dst.bn.beta = vec(src.bn.beta);
    for (const auto& m : src.bn.running_mean) dst.bn.running_mean.push_back(vec(m));
    for (const auto& v : src.bn.running_var) dst.bn.running_var.push_back(vec(v));
    dst.bn.initialized = src.bn.initialized;
    dst.bn.epsilon = static_cast<U>(src.bn.epsilon);
    dst.bn.momentum = static_cast<U>(src.bn.momentum);
  }
  out.readout.weights = params.readout.weights.template cast<U>();
  out.readout.bias = vec(params.readout.bias);
  return out;
}

#define OCCLUNET_INSTANTIATE_NETWORK(T)                                                              \
  template struct NetParams<T>;                                                                      \
  template struct UnrollState<T>;                                                                    \
  template NetParams<T> build<T>(const ArchSpec&, std::uint64_t);                                    \
  template UnrollState<T> forward<T>(NetParams<T>&, const ArchSpec&, const Tensor<T>&, BnMode, bool); \
  template void backward<T>(const NetParams<T>&, const ArchSpec&, const UnrollState<T>&,             \
                            std::span<const Tensor<T>>, NetParams<T>&);                              \
  template double recurrent_weight_sum<T>(const NetParams<T>&);

OCCLUNET_INSTANTIATE_NETWORK(float)
OCCLUNET_INSTANTIATE_NETWORK(double)

template NetParams<double> cast_params<double, float>(const NetParams<float>&);
template NetParams<float> cast_params<float, double>(const NetParams<double>&);

#undef OCCLUNET_INSTANTIATE_NETWORK

}  // namespace occlunet::rcnn
