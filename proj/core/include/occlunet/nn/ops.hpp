#pragma once

// Differentiable operators used by the recurrent convolutional networks.
//
// Every forward function has a matching *_backward that maps the gradient of
// a scalar loss with respect to the output onto gradients with respect to the
// inputs and parameters. Parameter gradients are accumulated (+=) into the
// caller's buffers so weights shared across unrolled time steps can be
// reduced in place.

#include <cstdint>
#include <span>
#include <vector>

#include "occlunet/nn/tensor.hpp"

namespace occlunet::nn {

/// Convolution kernel and per-output-map bias.
///
/// For conv2d the kernel is laid out (out_maps, in_maps, k, k). For
/// transposed_conv2d the same layout describes the forward convolution whose
/// adjoint is taken: (input maps of the transposed op, output maps, k, k), and
/// the bias has one entry per transposed output map.
template <typename T>
struct ConvParams {
  Tensor<T> kernel;
  std::vector<T> bias;

  int kernel_size() const { return kernel.shape().h; }
  std::size_t parameter_count() const { return kernel.size() + bias.size(); }
  /// Zero-filled parameters of the same shape, used as a gradient buffer.
  ConvParams zeros_like() const { return {Tensor<T>(kernel.shape()), std::vector<T>(bias.size(), T(0))}; }
};

/// SAME convolution with zero padding (k-1)/2 and stride 1 or 2.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params, int stride);

/// Returns the input gradient (empty when want_input_grad is false).
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params, int stride,
                          const Tensor<T>& grad_out, ConvParams<T>& grads,
                          bool want_input_grad = true);

/// Adjoint of the stride-2 SAME conv2d, plus bias. Doubles the spatial size.
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const ConvParams<T>& params);

template <typename T>
Tensor<T> transposed_conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                                     const Tensor<T>& grad_out, ConvParams<T>& grads);

/// 2x2 max pooling, stride 2. `argmax` receives, per output element, the
/// flat index of the winning input element within its sample. Ties go to
/// the first element in row-major order.
template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& input, std::vector<std::uint32_t>* argmax = nullptr);

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, std::span<const std::uint32_t> argmax,
                           const Shape& input_shape);

/// Spatial maximum per feature map; output shape (n, c, 1, 1).
template <typename T>
Tensor<T> global_maxpool(const Tensor<T>& input, std::vector<std::uint32_t>* argmax = nullptr);

template <typename T>
Tensor<T> global_maxpool_backward(const Tensor<T>& grad_out, std::span<const std::uint32_t> argmax,
                                  const Shape& input_shape);

enum class BnMode { train, eval };

/// Learnable affine (gamma, beta) shared over time plus running statistics
/// tracked separately for every unrolled time step.
template <typename T>
struct BatchNormParams {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<std::vector<T>> running_mean;  // [time_step][map]
  std::vector<std::vector<T>> running_var;   // [time_step][map]
  std::vector<std::uint8_t> initialized;     // per time step
  T epsilon = T(1e-5);
  T momentum = T(0.99);

  static BatchNormParams create(int maps, int time_steps);
  int maps() const { return static_cast<int>(gamma.size()); }
  int time_steps() const { return static_cast<int>(running_mean.size()); }
};

template <typename T>
struct BatchNormCache {
  BnMode mode = BnMode::train;
  std::vector<T> mean;
  std::vector<T> inv_std;
  Tensor<T> normalized;  // (z - mean) * inv_std
};

/// Train mode normalizes with batch statistics over (batch, row, column)
/// and updates the running statistics of `time_step`; eval mode uses the
/// stored statistics and throws if none were recorded.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormParams<T>& params, BnMode mode, int time_step,
                    BatchNormCache<T>* cache = nullptr);

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                             const BatchNormParams<T>& params, std::span<T> grad_gamma,
                             std::span<T> grad_beta);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Gradient passes where input > 0; zero at exactly 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

/// Cross-map local response normalization:
/// out_k = a_k * (c + alpha * sum_{k' in window(k)} a_k'^2)^(-beta),
/// window(k) = [max(0, k - n/2), min(maps - 1, k + n/2)].
struct LrnParams {
  int n = 5;
  double c = 1.0;
  double alpha = 1e-4;
  double beta = 0.5;
};

template <typename T>
Tensor<T> lrn(const Tensor<T>& input, const LrnParams& params = {});

template <typename T>
Tensor<T> lrn_backward(const Tensor<T>& input, const LrnParams& params, const Tensor<T>& grad_out);

/// Dense readout; weights shaped (outputs, features, 1, 1).
template <typename T>
struct DenseParams {
  Tensor<T> weights;
  std::vector<T> bias;

  int outputs() const { return weights.shape().n; }
  int features() const { return weights.shape().c; }
  DenseParams zeros_like() const { return {Tensor<T>(weights.shape()), std::vector<T>(bias.size(), T(0))}; }
};

/// `input` has one feature vector per sample (any shape with c*h*w = features).
/// Returns logits shaped (n, outputs, 1, 1).
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const DenseParams<T>& params);

template <typename T>
Tensor<T> fully_connected_backward(const Tensor<T>& input, const DenseParams<T>& params,
                                   const Tensor<T>& grad_out, DenseParams<T>& grads);

/// Row-wise softmax over the channel axis of (n, classes, 1, 1).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs);

/// One-hot targets shaped (n, classes, 1, 1).
template <typename T>
Tensor<T> one_hot(std::span<const int> labels, int classes);

/// Floor applied to the argument of every log in the loss.
inline constexpr double kLogClamp = 1e-7;

/// Cross-entropy summed over classes and time steps:
/// J = -sum_t sum_i [ y_i log p_i^t + (1 - y_i) log(1 - p_i^t) ],
/// summed over the batch. When `grads` is non-null it receives dJ/dp per
/// time step. Throws ValidationError for targets that are not one-hot.
template <typename T>
double cross_entropy_time_loss(std::span<const Tensor<T>> probs, const Tensor<T>& targets,
                               std::vector<Tensor<T>>* grads = nullptr);

}  // namespace occlunet::nn
