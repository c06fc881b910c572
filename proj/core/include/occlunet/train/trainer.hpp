#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "occlunet/digits/dataset.hpp"
#include "occlunet/rcnn/checkpoint.hpp"
#include "occlunet/train/config.hpp"

namespace occlunet::train {

/// Outcome for one test sample.
struct TrialRecord {
  int index = 0;
  int label = 0;
  std::vector<int> predictions;  // argmax per time step
  std::vector<float> probs;      // time_steps x classes, row-major
  bool correct = false;          // prediction at the final step == label

  float prob(int t, int cls, int classes) const { return probs[static_cast<std::size_t>(t) * classes + cls]; }
};

struct EvalResult {
  int time_steps = 0;
  int classes = 10;
  std::vector<TrialRecord> records;
  double error = 0;     // 1 - accuracy
  double accuracy = 0;
  std::string test_sha256;
  double seconds = 0;
};

struct RunResult {
  std::vector<double> epoch_loss;  // mean loss per sample and time step
  std::vector<double> batch_loss;
  EvalResult eval;
  double train_seconds = 0;
};

struct TrainOutput {
  rcnn::Checkpoint checkpoint;
  RunResult result;
};

struct TrainHooks {
  std::function<void(int epoch, int batch, int batches, double loss)> on_batch;
  std::function<void(int epoch, double loss)> on_epoch;
};

/// Trains a network from scratch with Adam on shuffled mini-batches and, if
/// `test_set` is given, evaluates it. When `out_dir` is non-empty the run
/// writes checkpoint.ocnk, loss.csv, records.csv and result.txt there.
/// A non-finite loss aborts with DivergenceError after saving diverged.ocnk.
TrainOutput train(const TrainConfig& config, const digits::Dataset& train_set, const digits::Dataset* test_set,
                  const std::filesystem::path& out_dir = {}, const TrainHooks& hooks = {});

/// Replaces the batch-norm running statistics with the plain average over
/// the first `batches` mini-batches of `data` (stored order), computed with
/// the final weights. Returns the number of batches used.
int recalibrate_batchnorm(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch, const digits::Dataset& data,
                          int batches, int batch_size);

/// Eval-mode forward pass over the whole split.
EvalResult evaluate(rcnn::NetParams<float>& params, const rcnn::ArchSpec& arch, const digits::Dataset& data,
                    int batch_size = 250);

/// Error and accuracy recomputed from per-sample correctness.
void summarize(EvalResult& result);

void write_records_csv(const std::filesystem::path& path, const EvalResult& result);
EvalResult read_records_csv(const std::filesystem::path& path);

/// records.csv plus result.txt (error, accuracy, dataset checksum).
void write_eval(const std::filesystem::path& dir, const EvalResult& result, const util::KeyValue& extra = {});
EvalResult read_eval(const std::filesystem::path& dir);

}  // namespace occlunet::train
