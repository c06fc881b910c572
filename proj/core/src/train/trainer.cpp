#include "occlunet/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "occlunet/digits/pcg32.hpp"
#include "occlunet/nn/adam.hpp"
#include "occlunet/util/errors.hpp"

namespace occlunet::train {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kShuffleStream = 0x7368756666ULL;

// Activation tensors are a few MB each and are freed every step; keeping them
// on the heap instead of fresh mmap regions avoids repeated page faults.
void keep_large_allocations_on_heap() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void check_dataset(const rcnn::ArchSpec& arch, const digits::Dataset& data, const char* what) {
  if (data.size() == 0) throw ConfigError(std::string(what) + " set is empty");
  if (data.channels() != arch.input_channels || data.height() != arch.input_size || data.width() != arch.input_size) {
    throw ConfigError(std::string(what) + " set has " + std::to_string(data.channels()) + "x" +
                      std::to_string(data.height()) + "x" + std::to_string(data.width()) + " images but " +
                      arch.name() + " expects " + std::to_string(arch.input_channels) + "x" +
                      std::to_string(arch.input_size) + "x" + std::to_string(arch.input_size));
  }
}

void write_loss_csv(const fs::path& path, const RunResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e, r.epoch_loss[e]);
    out << buf;
  }
}

}  // namespace

void summarize(EvalResult& result) {
  if (result.records.empty()) throw ValidationError("no evaluation records");
  const auto correct = std::count_if(result.records.begin(), result.records.end(),
                                     [](const TrialRecord& r) { return r.correct; });
  result.accuracy = static_cast<double>(correct) / static_cast<double>(result.records.size());
  result.error = 1.0 - result.accuracy;
}

int recalibrate_batchnorm(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch, const digits::Dataset& data,
                          int batches, int batch_size) {
  keep_large_allocations_on_heap();
  check_dataset(arch, data, "recalibration");
  if (batch_size < 2) throw ConfigError("recalibration batch size must be >= 2");
  std::vector<float> saved;
  for (const auto& layer : params.layers) saved.push_back(layer.bn.momentum);

  // Momentum (k - 1) / k turns the EMA update into a running mean.
  int used = 0;
  std::vector<int> idx;
  for (int begin = 0; used < batches && begin + 2 <= data.size(); begin += batch_size) {
    const int end = std::min(data.size(), begin + batch_size);
    ++used;
    for (auto& layer : params.layers) layer.bn.momentum = static_cast<float>(used - 1) / static_cast<float>(used);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    rcnn::forward(params, arch, data.to_tensor(idx), nn::BnMode::train, false);
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) params.layers[l].bn.momentum = saved[l];
  return used;
}

EvalResult evaluate(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch, const digits::Dataset& data,
                    int batch_size) {
  keep_large_allocations_on_heap();
  check_dataset(arch, data, "evaluation");
  if (batch_size < 1) throw ConfigError("evaluation batch size must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  EvalResult out;
  out.time_steps = arch.time_steps;
  out.classes = arch.classes;
  out.test_sha256 = data.split() == digits::SplitKind::test ? data.manifest().test_sha256 : data.manifest().train_sha256;
  out.records.resize(data.size());

  std::vector<int> idx;
  for (int begin = 0; begin < data.size(); begin += batch_size) {
    const int end = std::min(data.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto state = rcnn::forward(params, arch, data.to_tensor(idx), nn::BnMode::eval, false);
    for (int i = 0; i < end - begin; ++i) {
      auto& rec = out.records[begin + i];
      rec.index = begin + i;
      rec.label = data.label(begin + i);
      rec.probs.reserve(static_cast<std::size_t>(arch.time_steps) * arch.classes);
      for (int t = 0; t < arch.time_steps; ++t) {
        const auto row = state.probs(t).sample(i);
        rec.probs.insert(rec.probs.end(), row.begin(), row.end());
        rec.predictions.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
      }
      rec.correct = rec.predictions.back() == rec.label;
    }
  }
  summarize(out);
  out.seconds = seconds_since(start);
  return out;
}

TrainOutput train(const TrainConfig& config, const digits::Dataset& train_set, const digits::Dataset* test_set,
                  const fs::path& out_dir, const TrainHooks& hooks) {
  keep_large_allocations_on_heap();
  config.validate();
  const auto arch = config.arch();
  check_dataset(arch, train_set, "training");
  if (test_set) check_dataset(arch, *test_set, "test");
  if (train_set.size() < 2) throw ConfigError("training set needs at least 2 samples");
  if (!out_dir.empty()) fs::create_directories(out_dir);

  TrainOutput out;
  auto& ck = out.checkpoint;
  ck.arch = arch;
  ck.params = rcnn::build<float>(arch, config.seed);
  ck.adam.eta = config.eta;
  auto& result = out.result;

  const auto start = std::chrono::steady_clock::now();
  const int n = train_set.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  digits::Pcg32 shuffle_rng(config.seed, kShuffleStream);
  // A trailing batch of one sample cannot be batch-normalized; it is dropped.
  const int full = n / config.batch_size;
  const int rest = n % config.batch_size;
  const int batches = full + (rest >= 2 ? 1 : 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.bounded(static_cast<std::uint32_t>(i + 1))]);
    double epoch_sum = 0;
    std::size_t epoch_samples = 0;
    for (int b = 0; b < batches; ++b) {
      const int begin = b * config.batch_size;
      const int size = std::min(config.batch_size, n - begin);
      const std::span<const int> idx(order.data() + begin, size);
      const auto labels = train_set.labels(idx);
      const auto targets = nn::one_hot<float>(labels, arch.classes);

      auto state = rcnn::forward(ck.params, arch, train_set.to_tensor(idx), nn::BnMode::train);
      const auto probs = state.all_probs();
      std::vector<nn::Tensor<float>> grad_probs;
      const double loss = nn::cross_entropy_time_loss<float>(probs, targets, &grad_probs);
      if (!std::isfinite(loss)) {
        if (!out_dir.empty()) rcnn::save_checkpoint(out_dir / "diverged.ocnk", ck);
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      // Gradient of the batch-mean loss.
      const float inv = 1.0f / static_cast<float>(size);
      for (auto& g : grad_probs) {
        for (auto& v : g.data()) v *= inv;
      }
      auto grads = ck.params.zeros_like();
      rcnn::backward<float>(ck.params, arch, state, grad_probs, grads);
      const auto grad_blocks = std::as_const(grads).blocks();
      nn::adam_step(ck.params.blocks(), grad_blocks, ck.adam);

      const double per_sample_step = loss / (static_cast<double>(size) * arch.time_steps);
      result.batch_loss.push_back(per_sample_step);
      epoch_sum += loss;
      epoch_samples += static_cast<std::size_t>(size);
      if (hooks.on_batch) hooks.on_batch(epoch, b, batches, per_sample_step);
    }
    const double epoch_loss = epoch_sum / (static_cast<double>(epoch_samples) * arch.time_steps);
    result.epoch_loss.push_back(epoch_loss);
    ck.epochs_completed = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_loss);
  }
  if (config.bn_recalibration_batches > 0) {
    recalibrate_batchnorm(ck.params, arch, train_set, config.bn_recalibration_batches, config.batch_size);
  }
  result.train_seconds = seconds_since(start);

  if (test_set) result.eval = evaluate(ck.params, arch, *test_set, config.eval_batch);

  if (!out_dir.empty()) {
    rcnn::save_checkpoint(out_dir / "checkpoint.ocnk", ck);
    write_loss_csv(out_dir / "loss.csv", result);
    if (test_set) {
      util::KeyValue extra;
      extra.set("model", arch.name());
      extra.set("train_seconds", result.train_seconds);
      extra.set("final_epoch_loss", result.epoch_loss.back());
      write_eval(out_dir, result.eval, extra);
    }
  }
  return out;
}

void write_records_csv(const fs::path& path, const EvalResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "index,label,correct";
  for (int t = 0; t < r.time_steps; ++t) out << ",pred_t" << t;
  for (int t = 0; t < r.time_steps; ++t) {
    for (int c = 0; c < r.classes; ++c) out << ",p_t" << t << "_c" << c;
  }
  out << '\n';
  char buf[32];
  for (const auto& rec : r.records) {
    out << rec.index << ',' << rec.label << ',' << (rec.correct ? 1 : 0);
    for (int p : rec.predictions) out << ',' << p;
    for (float p : rec.probs) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(p));
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

EvalResult read_records_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CorruptionError(path.string() + ": empty records file");
  EvalResult r;
  {
    std::stringstream ss(line);
    std::string col;
    int preds = 0, probs = 0;
    while (std::getline(ss, col, ',')) {
      if (col.rfind("pred_t", 0) == 0) ++preds;
      if (col.rfind("p_t", 0) == 0) ++probs;
    }
    if (preds == 0 || probs % preds != 0) throw CorruptionError(path.string() + ": malformed header");
    r.time_steps = preds;
    r.classes = probs / preds;
  }
  const std::size_t columns = 3 + static_cast<std::size_t>(r.time_steps) * (1 + r.classes);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != columns) throw CorruptionError(path.string() + ": malformed row");
    TrialRecord rec;
    try {
      rec.index = std::stoi(f[0]);
      rec.label = std::stoi(f[1]);
      rec.correct = f[2] == "1";
      for (int t = 0; t < r.time_steps; ++t) rec.predictions.push_back(std::stoi(f[3 + t]));
      for (std::size_t i = 3 + r.time_steps; i < columns; ++i) {
        // strtod rather than stof: saturated outputs can be subnormal floats.
        char* end = nullptr;
        const double v = std::strtod(f[i].c_str(), &end);
        if (end == f[i].c_str() || *end != '\0') throw CorruptionError("bad number");
        rec.probs.push_back(static_cast<float>(v));
      }
    } catch (const std::exception&) {
      throw CorruptionError(path.string() + ": malformed row");
    }
    if (rec.correct != (rec.predictions.back() == rec.label)) {
      throw CorruptionError(path.string() + ": correctness disagrees with prediction for sample " + f[0]);
    }
    r.records.push_back(std::move(rec));
  }
  summarize(r);
  return r;
}

void write_eval(const fs::path& dir, const EvalResult& result, const util::KeyValue& extra) {
  fs::create_directories(dir);
  write_records_csv(dir / "records.csv", result);
  util::KeyValue kv = extra;
  kv.set("error", result.error);
  kv.set("accuracy", result.accuracy);
  kv.set("samples", static_cast<long long>(result.records.size()));
  kv.set("time_steps", result.time_steps);
  kv.set("test_sha256", result.test_sha256);
  kv.set("eval_seconds", result.seconds);
  kv.write(dir / "result.txt");
}

EvalResult read_eval(const fs::path& dir) {
  const auto records = dir / "records.csv";
  if (!fs::exists(records)) throw IoError("missing " + records.string());
  auto r = read_records_csv(records);
  if (fs::exists(dir / "result.txt")) {
    const auto kv = util::KeyValue::read(dir / "result.txt");
    if (auto sha = kv.find("test_sha256")) r.test_sha256 = *sha;
  }
  return r;
}

}  // namespace occlunet::train
