#include "occlunet/analysis/activations.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "occlunet/util/errors.hpp"

namespace occlunet::analysis {

std::vector<ActivationRecord> extract_activations(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch,
                                                  const nn::Tensor<float>& images, std::span<const int> labels,
                                                  std::span<const digits::SceneSpec> scenes, int batch_size) {
  const auto& s = images.shape();
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(s.n)) throw ShapeError("one label per image required");
  if (!scenes.empty() && scenes.size() != static_cast<std::size_t>(s.n)) throw ShapeError("one scene per image required");
  if (s.c != arch.input_channels) {
    throw ConfigError("stimuli have " + std::to_string(s.c) + " channels, " + arch.name() + " expects " +
                      std::to_string(arch.input_channels));
  }
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<ActivationRecord> out(s.n);
  for (int begin = 0; begin < s.n; begin += batch_size) {
    const int end = std::min(s.n, begin + batch_size);
    nn::Tensor<float> batch(nn::Shape{end - begin, s.c, s.h, s.w});
    std::copy(images.raw() + begin * s.sample(), images.raw() + end * s.sample(), batch.raw());
    const auto state = rcnn::forward(params, arch, batch, nn::BnMode::eval, false);
    for (int i = 0; i < end - begin; ++i) {
      auto& rec = out[begin + i];
      rec.id = begin + i;
      rec.label = labels.empty() ? -1 : labels[begin + i];
      if (!scenes.empty()) rec.scene = scenes[begin + i];
      rec.time_steps = arch.time_steps;
      rec.features = arch.feature_maps;
      rec.classes = arch.classes;
      for (int t = 0; t < arch.time_steps; ++t) {
        const auto a = state.activation(t).sample(i);
        const auto p = state.probs(t).sample(i);
        rec.activations.insert(rec.activations.end(), a.begin(), a.end());
        rec.probs.insert(rec.probs.end(), p.begin(), p.end());
      }
    }
  }
  return out;
}

std::vector<ActivationRecord> extract_activations(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch,
                                                  const digits::Dataset& data, std::span<const int> indices,
                                                  int batch_size) {
  std::vector<int> all;
  if (indices.empty()) {
    all.resize(data.size());
    std::iota(all.begin(), all.end(), 0);
    indices = all;
  }
  std::vector<digits::SceneSpec> scenes;
  for (int i : indices) scenes.push_back(data.scene(i));
  auto out = extract_activations(params, arch, data.to_tensor(indices), data.labels(indices), scenes, batch_size);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = indices[i];
  return out;
}

double relative_distance(std::span<const float> a, std::span<const float> target, std::span<const float> occluder) {
  if (a.size() != target.size() || a.size() != occluder.size()) throw ShapeError("activation vectors differ in length");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dt = static_cast<double>(a[i]) - target[i];
    const double doc = static_cast<double>(a[i]) - occluder[i];
    num += dt * dt;
    den += doc * doc;
  }
  if (den == 0) return std::nan("");
  return std::sqrt(num) / std::sqrt(den);
}

std::vector<RelativeDistanceRecord> relative_distances(const ActivationRecord& stimulus,
                                                       const ActivationRecord& target_ref,
                                                       std::span<const ActivationRecord> occluder_refs,
                                                       ReferenceTime ref_time) {
  if (target_ref.time_steps != stimulus.time_steps) throw ShapeError("reference has a different unroll length");
  std::vector<RelativeDistanceRecord> out;
  for (std::size_t k = 0; k < occluder_refs.size(); ++k) {
    if (occluder_refs[k].time_steps != stimulus.time_steps) throw ShapeError("reference has a different unroll length");
    for (int t = 0; t < stimulus.time_steps; ++t) {
      const int rt = ref_time == ReferenceTime::matching ? t : 0;
      RelativeDistanceRecord rec;
      rec.id = stimulus.id;
      rec.occluder = static_cast<int>(k);
      rec.t = t;
      rec.r = relative_distance(stimulus.activation(t), target_ref.activation(rt), occluder_refs[k].activation(rt));
      rec.valid = !std::isnan(rec.r);
      out.push_back(rec);
    }
  }
  return out;
}

std::vector<std::uint8_t> render_target_only(const digits::SceneSpec& scene, const digits::CameraRig& rig,
                                             const digits::GlyphAtlas& atlas) {
  const auto all = digits::scene_digits(scene, rig);
  return digits::render_digits(std::span(all).first(1), rig, atlas);
}

std::vector<std::uint8_t> render_occluder_only(const digits::SceneSpec& scene, int k, const digits::CameraRig& rig,
                                               const digits::GlyphAtlas& atlas) {
  if (k < 0 || k >= static_cast<int>(scene.occluders.size())) throw ValidationError("no occluder " + std::to_string(k));
  const auto all = digits::scene_digits(scene, rig);
  return digits::render_digits(std::span(all).subspan(1 + k, 1), rig, atlas);
}

std::vector<RelativeDistanceRecord> discounting_analysis(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch,
                                                         const digits::Dataset& data, ReferenceTime ref_time,
                                                         int batch_size) {
  const auto& rig = data.manifest().spec.rig;
  const auto& atlas = digits::GlyphAtlas::embedded();
  const auto stimuli = extract_activations(params, arch, data, {}, batch_size);

  // References: target-only per sample, then every occluder-only render.
  std::vector<std::uint8_t> pixels;
  std::vector<std::size_t> first_occluder_ref(data.size());
  std::size_t refs = 0;
  for (int i = 0; i < data.size(); ++i) {
    const auto img = render_target_only(data.scene(i), rig, atlas);
    pixels.insert(pixels.end(), img.begin(), img.end());
    ++refs;
  }
  for (int i = 0; i < data.size(); ++i) {
    first_occluder_ref[i] = refs;
    for (int k = 0; k < static_cast<int>(data.scene(i).occluders.size()); ++k) {
      const auto img = render_occluder_only(data.scene(i), k, rig, atlas);
      pixels.insert(pixels.end(), img.begin(), img.end());
      ++refs;
    }
  }
  nn::Tensor<float> ref_images(nn::Shape{static_cast<int>(refs), data.channels(), data.height(), data.width()});
  for (std::size_t i = 0; i < pixels.size(); ++i) ref_images[i] = static_cast<float>(pixels[i]) / 255.0f;
  const auto ref_records = extract_activations(params, arch, ref_images, {}, {}, batch_size);

  std::vector<RelativeDistanceRecord> out;
  for (int i = 0; i < data.size(); ++i) {
    const auto occ = std::span(ref_records).subspan(first_occluder_ref[i], data.scene(i).occluders.size());
    auto recs = relative_distances(stimuli[i], ref_records[i], occ, ref_time);
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

std::vector<std::vector<double>> mean_relative_distance(std::span<const RelativeDistanceRecord> records, int occluders,
                                                        int time_steps) {
  std::vector<std::vector<double>> sum(occluders, std::vector<double>(time_steps, 0.0));
  std::vector<std::vector<int>> n(occluders, std::vector<int>(time_steps, 0));
  for (const auto& r : records) {
    if (!r.valid || r.occluder >= occluders || r.t >= time_steps) continue;
    sum[r.occluder][r.t] += r.r;
    ++n[r.occluder][r.t];
  }
  for (int k = 0; k < occluders; ++k) {
    for (int t = 0; t < time_steps; ++t) sum[k][t] = n[k][t] ? sum[k][t] / n[k][t] : std::nan("");
  }
  return sum;
}

}  // namespace occlunet::analysis
