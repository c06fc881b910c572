#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "occlunet/rcnn/arch.hpp"
#include "occlunet/util/keyvalue.hpp"

namespace occlunet::train {

/// How repeated runs differ from one another.
enum class RepetitionMode {
  weights,  // same dataset, weight/shuffle seed = seed + repetition
  data,     // additionally regenerate the dataset with seed + repetition
};

std::string repetition_mode_name(RepetitionMode mode);
RepetitionMode parse_repetition_mode(const std::string& name);

/// One training configuration. Stored as key=value text:
///
///   model        b | b-f | b-k | bt | bl | blt
///   channels     1 (mono) or 2 (stereo); must match the dataset
///   time_steps   unroll length (default: 4 for recurrent models, 1 otherwise)
///   data         dataset directory holding train.sdig/test.sdig/manifest.txt
///   epochs       passes over the training split
///   batch_size   mini-batch size, >= 2
///   eta          Adam learning rate
///   seed         base seed for weights and shuffling
///   repetitions  number of repeated runs (grid only)
///   repetition_mode  weights | data
///   eval_batch   mini-batch size used for evaluation
///   bn_recalibration_batches  training batches averaged into the batch-norm
///                running statistics after the last epoch (0: keep the EMA)
struct TrainConfig {
  rcnn::ModelKind model = rcnn::ModelKind::b;
  int channels = 1;
  int time_steps = 0;  // 0: model default
  std::filesystem::path data;
  int epochs = 5;
  int batch_size = 100;
  double eta = 0.003;
  std::uint64_t seed = 1;
  int repetitions = 1;
  RepetitionMode repetition_mode = RepetitionMode::weights;
  int eval_batch = 250;
  int bn_recalibration_batches = 20;

  rcnn::ArchSpec arch() const;
  void validate() const;

  util::KeyValue to_keyvalue() const;
  /// Missing keys keep their defaults; unknown keys throw ConfigError.
  static TrainConfig from_keyvalue(const util::KeyValue& kv, TrainConfig base);
  static TrainConfig from_keyvalue(const util::KeyValue& kv);

  /// Named bundles: "desk", "full-all-mono", "full-all-stereo",
  /// "full-occ2-mono" ... "full-occ4-stereo".
  static TrainConfig preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

/// Dataset generation parameters that accompany a preset (used by the CLI to
/// build the matching data when none is given).
struct DataPreset {
  std::string occluders;
  int channels;
  int train_count;
  int test_count;
};
DataPreset data_preset(const std::string& preset_name);

}  // namespace occlunet::train
