#pragma once

#include <string>
#include <vector>

namespace occlunet::rcnn {

/// The six compared architectures: bottom-up only (B), its wider (B-F) and
/// larger-kernel (B-K) controls, and the recurrent BT, BL and BLT models.
enum class ModelKind { b, b_f, b_k, bt, bl, blt };

std::string model_name(ModelKind kind);
/// Accepts "b", "b-f", "bf", "b-k", "bk", "bt", "bl", "blt" (case-insensitive).
ModelKind parse_model(const std::string& name);
const std::vector<ModelKind>& all_models();

struct ArchSpec {
  bool lateral = false;
  bool topdown = false;
  int kernel_size = 3;
  int feature_maps = 32;
  int input_channels = 1;
  int time_steps = 1;
  int hidden_layers = 2;
  int input_size = 32;
  int classes = 10;

  /// The standard configuration of `kind` for 1- or 2-channel input.
  static ArchSpec preset(ModelKind kind, int input_channels);

  bool recurrent() const { return lateral || topdown; }
  void validate() const;
  /// Short name, e.g. "BLT" or "B-K"; generic specs are described by flags.
  std::string name() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

enum class CountMode {
  /// Convolution kernels and biases plus the readout; batch-norm scale and
  /// shift excluded.
  weights,
  /// Everything learnable, including batch-norm scale and shift.
  full,
};

long long count_params(const ArchSpec& arch, CountMode mode = CountMode::weights);

}  // namespace occlunet::rcnn
