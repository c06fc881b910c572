#include "occlunet/rcnn/arch.hpp"

#include <algorithm>
#include <cctype>

#include "occlunet/util/errors.hpp"

namespace occlunet::rcnn {

std::string model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::b: return "B";
    case ModelKind::b_f: return "B-F";
    case ModelKind::b_k: return "B-K";
    case ModelKind::bt: return "BT";
    case ModelKind::bl: return "BL";
    case ModelKind::blt: return "BLT";
  }
  return "?";
}

ModelKind parse_model(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (c != '-' && c != '_') s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (s == "b") return ModelKind::b;
  if (s == "bf") return ModelKind::b_f;
  if (s == "bk") return ModelKind::b_k;
  if (s == "bt") return ModelKind::bt;
  if (s == "bl") return ModelKind::bl;
  if (s == "blt") return ModelKind::blt;
  throw ConfigError("unknown architecture '" + name + "'");
}

const std::vector<ModelKind>& all_models() {
  static const std::vector<ModelKind> kAll = {ModelKind::b,  ModelKind::b_f, ModelKind::b_k,
                                              ModelKind::bt, ModelKind::bl,  ModelKind::blt};
  return kAll;
}

ArchSpec ArchSpec::preset(ModelKind kind, int input_channels) {
  ArchSpec a;
  a.input_channels = input_channels;
  switch (kind) {
    case ModelKind::b: break;
    case ModelKind::b_f: a.feature_maps = 64; break;
    case ModelKind::b_k: a.kernel_size = 5; break;
    case ModelKind::bt: a.topdown = true; break;
    case ModelKind::bl: a.lateral = true; break;
    case ModelKind::blt: a.lateral = a.topdown = true; break;
  }
  if (a.recurrent()) a.time_steps = 4;
  a.validate();
  return a;
}

void ArchSpec::validate() const {
  if (kernel_size != 3 && kernel_size != 5) throw ConfigError("kernel size must be 3 or 5");
  if (feature_maps <= 0) throw ConfigError("feature map count must be positive");
  if (input_channels <= 0) throw ConfigError("input channel count must be positive");
  if (hidden_layers != 2) throw ConfigError("exactly two hidden layers are supported");
  if (time_steps < 1) throw ConfigError("time steps must be >= 1");
  if (recurrent() && time_steps < 2) throw ConfigError("recurrent connections need at least two time steps");
  if (input_size < 2 || input_size % 2 != 0) throw ConfigError("input size must be even");
  if (classes < 2) throw ConfigError("need at least two classes");
}

std::string ArchSpec::name() const {
  const bool standard = hidden_layers == 2 && classes == 10 && input_size == 32;
  if (standard && !recurrent() && time_steps == 1) {
    if (kernel_size == 3 && feature_maps == 32) return "B";
    if (kernel_size == 3 && feature_maps == 64) return "B-F";
    if (kernel_size == 5 && feature_maps == 32) return "B-K";
  }
  if (standard && recurrent() && kernel_size == 3 && feature_maps == 32 && time_steps == 4) {
    return std::string("B") + (lateral ? "L" : "") + (topdown ? "T" : "");
  }
  return std::string("B") + (lateral ? "L" : "") + (topdown ? "T" : "") + "[k" + std::to_string(kernel_size) +
         ",m" + std::to_string(feature_maps) + ",t" + std::to_string(time_steps) + "]";
}

long long count_params(const ArchSpec& arch, CountMode mode) {
  arch.validate();
  const long long k2 = static_cast<long long>(arch.kernel_size) * arch.kernel_size;
  const long long m = arch.feature_maps;
  const long long recurrent_conv = k2 * m * m + m;
  long long total = 0;
  total += k2 * arch.input_channels * m + m;  // layer 1 bottom-up
  total += k2 * m * m + m;                    // layer 2 bottom-up
  if (arch.lateral) total += 2 * recurrent_conv;
  if (arch.topdown) total += recurrent_conv;
  total += m * arch.classes + arch.classes;  // readout
  if (mode == CountMode::full) total += 2 * m * arch.hidden_layers;
  return total;
}

}  // namespace occlunet::rcnn
