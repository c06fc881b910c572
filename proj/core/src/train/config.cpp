#include "occlunet/train/config.hpp"

#include <set>

#include "occlunet/util/errors.hpp"

namespace occlunet::train {

std::string repetition_mode_name(RepetitionMode mode) {
  return mode == RepetitionMode::weights ? "weights" : "data";
}

RepetitionMode parse_repetition_mode(const std::string& name) {
  if (name == "weights") return RepetitionMode::weights;
  if (name == "data") return RepetitionMode::data;
  throw ConfigError("unknown repetition mode '" + name + "' (expected weights or data)");
}

rcnn::ArchSpec TrainConfig::arch() const {
  auto a = rcnn::ArchSpec::preset(model, channels);
  if (time_steps > 0) a.time_steps = time_steps;
  return a;
}

void TrainConfig::validate() const {
  if (channels != 1 && channels != 2) throw ConfigError("channels must be 1 or 2");
  if (time_steps < 0) throw ConfigError("time_steps must be >= 0");
  arch().validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch normalization)");
  if (!(eta > 0)) throw ConfigError("eta must be positive");
  if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
  if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
  if (bn_recalibration_batches < 0) throw ConfigError("bn_recalibration_batches must be >= 0");
}

util::KeyValue TrainConfig::to_keyvalue() const {
  util::KeyValue kv;
  kv.set("model", rcnn::model_name(model));
  kv.set("channels", channels);
  kv.set("time_steps", arch().time_steps);
  kv.set("data", data.string());
  kv.set("epochs", epochs);
  kv.set("batch_size", batch_size);
  kv.set("eta", eta);
  kv.set("seed", std::to_string(seed));
  kv.set("repetitions", repetitions);
  kv.set("repetition_mode", repetition_mode_name(repetition_mode));
  kv.set("eval_batch", eval_batch);
  kv.set("bn_recalibration_batches", bn_recalibration_batches);
  return kv;
}

TrainConfig TrainConfig::from_keyvalue(const util::KeyValue& kv, TrainConfig c) {
  static const std::set<std::string> known = {"model",       "channels", "time_steps", "data",
                                              "epochs",      "batch_size", "eta",      "seed",
                                              "repetitions", "repetition_mode", "eval_batch",
                                              "bn_recalibration_batches"};
  for (const auto& [key, value] : kv.entries()) {
    if (!known.count(key)) throw ConfigError("unknown training config key '" + key + "'");
  }
  if (auto v = kv.find("model")) c.model = rcnn::parse_model(*v);
  if (kv.contains("channels")) c.channels = static_cast<int>(kv.get_int("channels"));
  if (kv.contains("time_steps")) c.time_steps = static_cast<int>(kv.get_int("time_steps"));
  if (auto v = kv.find("data")) c.data = *v;
  if (kv.contains("epochs")) c.epochs = static_cast<int>(kv.get_int("epochs"));
  if (kv.contains("batch_size")) c.batch_size = static_cast<int>(kv.get_int("batch_size"));
  if (kv.contains("eta")) c.eta = kv.get_double("eta");
  if (auto v = kv.find("seed")) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("seed: not an unsigned integer: '" + *v + "'");
    }
  }
  if (kv.contains("repetitions")) c.repetitions = static_cast<int>(kv.get_int("repetitions"));
  if (auto v = kv.find("repetition_mode")) c.repetition_mode = parse_repetition_mode(*v);
  if (kv.contains("eval_batch")) c.eval_batch = static_cast<int>(kv.get_int("eval_batch"));
  if (kv.contains("bn_recalibration_batches")) {
    c.bn_recalibration_batches = static_cast<int>(kv.get_int("bn_recalibration_batches"));
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_keyvalue(const util::KeyValue& kv) { return from_keyvalue(kv, TrainConfig{}); }

std::vector<std::string> TrainConfig::preset_names() {
  std::vector<std::string> names = {"desk", "desk-stereo", "full-all-mono", "full-all-stereo"};
  for (const char* occ : {"2", "3", "4"}) {
    for (const char* view : {"mono", "stereo"}) names.push_back(std::string("full-occ") + occ + "-" + view);
  }
  return names;
}

DataPreset data_preset(const std::string& name) {
  if (name == "desk") return {"3", 1, 10000, 2000};
  if (name == "desk-stereo") return {"3", 2, 10000, 2000};
  if (name.rfind("full-", 0) == 0) {
    const bool stereo = name.size() > 7 && name.substr(name.size() - 7) == "-stereo";
    const bool mono = name.size() > 5 && name.substr(name.size() - 5) == "-mono";
    if (stereo || mono) {
      const std::string body = name.substr(5, name.size() - 5 - (stereo ? 7 : 5));
      const int channels = stereo ? 2 : 1;
      if (body == "all") return {"all", channels, 100000, 10000};
      if (body == "occ2" || body == "occ3" || body == "occ4") return {body.substr(3), channels, 100000, 10000};
    }
  }
  throw ConfigError("unknown preset '" + name + "'");
}

TrainConfig TrainConfig::preset(const std::string& name) {
  const auto d = data_preset(name);
  TrainConfig c;
  c.channels = d.channels;
  if (name == "desk" || name == "desk-stereo") {
    c.epochs = 5;
    c.batch_size = 100;
    c.repetitions = 3;
  } else if (d.occluders == "all") {
    c.epochs = 25;
    c.batch_size = 400;
    c.repetitions = 5;
  } else {
    c.epochs = 100;
    c.batch_size = 100;
    c.repetitions = 5;
  }
  return c;
}

}  // namespace occlunet::train
