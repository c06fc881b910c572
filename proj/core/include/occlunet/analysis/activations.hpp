#pragma once

#include <span>
#include <vector>

#include "occlunet/digits/dataset.hpp"
#include "occlunet/digits/glyph_atlas.hpp"
#include "occlunet/digits/scene.hpp"
#include "occlunet/nn/tensor.hpp"
#include "occlunet/rcnn/network.hpp"

namespace occlunet::analysis {

/// Final-hidden-layer readout features and softmax output of one stimulus at
/// every unrolled time step.
struct ActivationRecord {
  int id = 0;
  int label = 0;
  int time_steps = 0;
  int features = 0;
  int classes = 0;
  std::vector<float> activations;  // time_steps x features
  std::vector<float> probs;        // time_steps x classes
  digits::SceneSpec scene;

  std::span<const float> activation(int t) const {
    return std::span<const float>(activations).subspan(static_cast<std::size_t>(t) * features, features);
  }
  std::span<const float> softmax(int t) const {
    return std::span<const float>(probs).subspan(static_cast<std::size_t>(t) * classes, classes);
  }
};

/// Eval-mode forward over `images` (n, channels, rows, columns) in batches.
/// `labels` and `scenes` may be empty; otherwise one per image.
std::vector<ActivationRecord> extract_activations(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch,
                                                  const nn::Tensor<float>& images, std::span<const int> labels = {},
                                                  std::span<const digits::SceneSpec> scenes = {},
                                                  int batch_size = 250);

/// Records for samples `indices` of a dataset split (all samples if empty).
std::vector<ActivationRecord> extract_activations(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch,
                                                  const digits::Dataset& data, std::span<const int> indices = {},
                                                  int batch_size = 250);

/// ||a - target|| / ||a - occluder||; NaN when the denominator is zero.
double relative_distance(std::span<const float> a, std::span<const float> target, std::span<const float> occluder);

struct RelativeDistanceRecord {
  int id = 0;
  int occluder = 0;  // 0-based occluder index within the scene
  int t = 0;
  double r = 0;
  bool valid = true;  // false when the stimulus coincides with the occluder reference
};

/// Reference time step used for the un-occluded renders.
enum class ReferenceTime { matching, first };

/// r for every occluder reference and time step of one stimulus.
std::vector<RelativeDistanceRecord> relative_distances(const ActivationRecord& stimulus,
                                                       const ActivationRecord& target_ref,
                                                       std::span<const ActivationRecord> occluder_refs,
                                                       ReferenceTime ref_time = ReferenceTime::matching);

/// Network-resolution render of the target alone.
std::vector<std::uint8_t> render_target_only(const digits::SceneSpec& scene, const digits::CameraRig& rig,
                                             const digits::GlyphAtlas& atlas);
/// Network-resolution render of occluder `k` alone at its original place.
std::vector<std::uint8_t> render_occluder_only(const digits::SceneSpec& scene, int k, const digits::CameraRig& rig,
                                               const digits::GlyphAtlas& atlas);

/// Renders the references of every sample in `data`, extracts activations
/// for stimuli and references, and returns all relative distances.
std::vector<RelativeDistanceRecord> discounting_analysis(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch,
                                                         const digits::Dataset& data,
                                                         ReferenceTime ref_time = ReferenceTime::matching,
                                                         int batch_size = 250);

/// Mean of valid r per (occluder, t); entry [k][t], NaN if no valid record.
std::vector<std::vector<double>> mean_relative_distance(std::span<const RelativeDistanceRecord> records, int occluders,
                                                        int time_steps);

}  // namespace occlunet::analysis
