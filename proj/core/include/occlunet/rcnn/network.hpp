#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "occlunet/nn/ops.hpp"
#include "occlunet/rcnn/arch.hpp"

namespace occlunet::rcnn {

template <typename T>
struct HiddenLayer {
  nn::ConvParams<T> bottom_up;
  std::optional<nn::ConvParams<T>> lateral;
  /// Transposed convolution from the layer above (layer 1 only).
  std::optional<nn::ConvParams<T>> topdown;
  nn::BatchNormParams<T> bn;
};

/// All learnable parameters of a two-hidden-layer network plus the
/// batch-norm running statistics.
template <typename T>
struct NetParams {
  std::array<HiddenLayer<T>, 2> layers;
  nn::DenseParams<T> readout;

  /// Learnable blocks in a fixed order: per layer bottom-up kernel/bias,
  /// lateral kernel/bias, top-down kernel/bias, gamma, beta; then readout
  /// weights/bias. Absent connections are skipped.
  std::vector<std::span<T>> blocks();
  std::vector<std::span<const T>> blocks() const;
  /// Zero-filled copy with the same layout, for gradient accumulation.
  NetParams zeros_like() const;
};

/// Kernels uniform in +-sqrt(6 / (fan_in + fan_out)) with
/// fan = maps * k * k; biases and readout weights 0, gamma 1, beta 0.
template <typename T>
NetParams<T> build(const ArchSpec& arch, std::uint64_t seed);

/// Glorot limit used by build() for a kernel of the given shape.
double init_limit(const nn::Shape& kernel_shape);

template <typename T>
struct LayerCache {
  nn::BatchNormCache<T> bn;
  nn::Tensor<T> bn_out;    // relu input
  nn::Tensor<T> relu_out;  // lrn input
  nn::Tensor<T> h;         // layer output, fed to the next time step
};

template <typename T>
struct StepCache {
  std::array<LayerCache<T>, 2> layers;
  nn::Tensor<T> pooled;  // maxpool(h1), bottom-up input of layer 2
  std::vector<std::uint32_t> pool_argmax;
  nn::Tensor<T> activation;  // global max over h2, (n, maps, 1, 1)
  std::vector<std::uint32_t> activation_argmax;
  nn::Tensor<T> probs;  // softmax readout, (n, classes, 1, 1)
};

/// Result of unrolling the network over arch.time_steps steps.
template <typename T>
struct UnrollState {
  nn::Tensor<T> input;
  nn::Tensor<T> bottom_up_1;  // conv_B of the input; identical at every step
  std::vector<StepCache<T>> steps;
  bool cached = false;

  int time_steps() const { return static_cast<int>(steps.size()); }
  const nn::Tensor<T>& probs(int t) const { return steps[t].probs; }
  const nn::Tensor<T>& activation(int t) const { return steps[t].activation; }
  std::vector<nn::Tensor<T>> all_probs() const;
  /// argmax of the final step's output per sample.
  std::vector<int> predictions() const;
};

/// Unrolls the network. The input is presented at every step; lateral and
/// top-down inputs are zero at t = 0. With keep_cache = false only what is
/// needed for readout is retained (no backward possible).
template <typename T>
UnrollState<T> forward(NetParams<T>& params, const ArchSpec& arch, const nn::Tensor<T>& input,
                       nn::BnMode mode, bool keep_cache = true);

/// Backpropagation through time. `grad_probs[t]` is dLoss/dprobs at step t;
/// gradients are accumulated into `grads` (see NetParams::zeros_like).
template <typename T>
void backward(const NetParams<T>& params, const ArchSpec& arch, const UnrollState<T>& state,
              std::span<const nn::Tensor<T>> grad_probs, NetParams<T>& grads);

/// Sum of all lateral and top-down kernel weights (informational).
template <typename T>
double recurrent_weight_sum(const NetParams<T>& params);

template <typename U, typename T>
NetParams<U> cast_params(const NetParams<T>& params);

}  // namespace occlunet::rcnn
