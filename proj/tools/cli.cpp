#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include "occlunet/analysis/activations.hpp"
#include "occlunet/analysis/reports.hpp"
#include "occlunet/analysis/tsne.hpp"
#include "occlunet/digits/dataset.hpp"
#include "occlunet/digits/glyph_atlas.hpp"
#include "occlunet/rcnn/arch.hpp"
#include "occlunet/rcnn/checkpoint.hpp"
#include "occlunet/stats/pairwise.hpp"
#include "occlunet/train/config.hpp"
#include "occlunet/train/grid.hpp"
#include "occlunet/train/trainer.hpp"
#include "occlunet/util/errors.hpp"
#include "occlunet/util/keyvalue.hpp"
#include "occlunet/util/parallel.hpp"
#include "occlunet/util/sha256.hpp"

namespace occlunet::cli {
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Context {
  std::vector<std::string> args;
  std::ostream& out;
  std::ostream& err;
  int threads = 0;
};

void require_input(const fs::path& p, const char* what) {
  if (p.empty() || !fs::exists(p)) throw IoError(std::string("missing input ") + what + ": " + p.string());
}

fs::path resolve_out(const std::string& given, const std::string& command) {
  if (!given.empty()) return given;
  if (const char* root = std::getenv("OCCLUNET_OUT"); root && *root) return fs::path(root) / command;
  throw ConfigError("--out is required (or set OCCLUNET_OUT)");
}

std::string shell_quote(const std::string& s) {
  if (!s.empty() && s.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_=./,:+") ==
                        std::string::npos) {
    return s;
  }
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

// metadata.txt: command line, resolved configuration and a checksum of every
// file the command wrote under `dir`.
void write_metadata(const Context& ctx, const fs::path& dir, const std::string& command, const util::KeyValue& config) {
  util::KeyValue kv;
  for (const auto& [k, v] : config.entries()) kv.set("config." + k, v);
  kv.set("command", command);
  std::string argv = "occlunet";
  for (const auto& a : ctx.args) argv += " " + shell_quote(a);
  kv.set("argv", argv);
  kv.set("cwd", fs::current_path().string());
  kv.set("version", std::string(kVersion));
  kv.set("threads", util::num_threads());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "metadata.txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    kv.set("artifact." + fs::relative(f, dir).generic_string(), util::to_hex(util::sha256_file(f)));
  }
  kv.write(dir / "metadata.txt");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

nn::Tensor<float> to_tensor(const std::vector<std::vector<std::uint8_t>>& images, int channels, int size) {
  nn::Tensor<float> t(nn::Shape{static_cast<int>(images.size()), channels, size, size});
  for (std::size_t i = 0; i < images.size(); ++i) {
    float* dst = t.sample(static_cast<int>(i)).data();
    for (std::size_t k = 0; k < images[i].size(); ++k) dst[k] = static_cast<float>(images[i][k]) / 255.0f;
  }
  return t;
}

// Options shared by train and grid, applied on top of preset and config file.
struct TrainFlags {
  std::string preset;
  std::string config_file;
  std::string model;
  int time_steps = -1;
  int epochs = -1;
  int batch_size = -1;
  double eta = -1;
  long long seed = -1;
  int eval_batch = -1;
  int bn_recalibration = -1;
  int repetitions = -1;
  std::string repetition_mode;

  void add(CLI::App* app, bool grid) {
    app->add_option("--preset", preset, "Named configuration bundle")
        ->check(CLI::IsMember(train::TrainConfig::preset_names()));
    app->add_option("--config", config_file, "key=value configuration file");
    if (!grid) app->add_option("--model,--arch", model, "b | b-f | b-k | bt | bl | blt");
    app->add_option("--time-steps", time_steps, "Unroll length (default: model default)");
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--eta", eta, "Adam learning rate");
    app->add_option("--seed", seed);
    app->add_option("--eval-batch", eval_batch);
    app->add_option("--bn-recalibration", bn_recalibration,
                    "Training batches averaged into batch-norm statistics after training (0: off)");
    if (grid) {
      app->add_option("--repetitions", repetitions);
      app->add_option("--repetition-mode", repetition_mode, "weights | data");
    }
  }

  train::TrainConfig resolve() const {
    train::TrainConfig c = preset.empty() ? train::TrainConfig{} : train::TrainConfig::preset(preset);
    if (!config_file.empty()) {
      require_input(config_file, "config");
      c = train::TrainConfig::from_keyvalue(util::KeyValue::read(config_file), c);
    }
    if (!model.empty()) c.model = rcnn::parse_model(model);
    if (time_steps >= 0) c.time_steps = time_steps;
    if (epochs >= 0) c.epochs = epochs;
    if (batch_size >= 0) c.batch_size = batch_size;
    if (eta >= 0) c.eta = eta;
    if (seed >= 0) c.seed = static_cast<std::uint64_t>(seed);
    if (eval_batch >= 0) c.eval_batch = eval_batch;
    if (bn_recalibration >= 0) c.bn_recalibration_batches = bn_recalibration;
    if (repetitions >= 0) c.repetitions = repetitions;
    if (!repetition_mode.empty()) c.repetition_mode = train::parse_repetition_mode(repetition_mode);
    return c;
  }
};

// ---------------------------------------------------------------------------

void add_params(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("params", "Print learnable parameter counts");
  auto model = std::make_shared<std::string>("all");
  auto channels = std::make_shared<int>(0);
  auto mode = std::make_shared<std::string>("weights");
  auto out = std::make_shared<std::string>();
  cmd->add_option("--arch,--model", *model, "Model name or 'all'");
  cmd->add_option("--channels", *channels, "1 or 2 (default: both)")->check(CLI::IsMember({0, 1, 2}));
  cmd->add_option("--mode", *mode, "weights (batch-norm excluded) or full")->check(CLI::IsMember({"weights", "full"}));
  cmd->add_option("--out", *out, "Also write params.csv and metadata here");
  cmd->callback([&, model, channels, mode, out] {
    action = [&, model, channels, mode, out] {
      std::vector<rcnn::ModelKind> kinds;
      if (*model == "all") {
        kinds = rcnn::all_models();
      } else {
        kinds = {rcnn::parse_model(*model)};
      }
      std::vector<int> chans = *channels ? std::vector<int>{*channels} : std::vector<int>{1, 2};
      const auto cm = *mode == "full" ? rcnn::CountMode::full : rcnn::CountMode::weights;
      if (kinds.size() == 1 && chans.size() == 1) {
        ctx.out << rcnn::count_params(rcnn::ArchSpec::preset(kinds[0], chans[0]), cm) << "\n";
      }
      std::string csv = "model,channels,mode,params\n";
      for (auto k : kinds) {
        for (int c : chans) {
          csv += rcnn::model_name(k) + "," + std::to_string(c) + "," + *mode + "," +
                 std::to_string(rcnn::count_params(rcnn::ArchSpec::preset(k, c), cm)) + "\n";
        }
      }
      if (kinds.size() != 1 || chans.size() != 1) ctx.out << csv;
      if (!out->empty()) {
        const fs::path dir = *out;
        analysis::write_file(dir / "params.csv", csv);
        util::KeyValue kv;
        kv.set("model", *model);
        kv.set("channels", *channels);
        kv.set("mode", *mode);
        write_metadata(ctx, dir, "params", kv);
      }
    };
  });
}

void add_gen_data(CLI::App& app, Context& ctx, std::function<void()>& action) {
  struct Opts {
    std::string out, preset, occluders, side = "both";
    int channels = -1, train = -1, test = -1;
    long long seed = 1;
    bool parallel_rig = false;
    double canvas_width = -1, x_range = -1;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("gen-data", "Generate a stereo-digits dataset");
  cmd->add_option("--out", o->out, "Output directory");
  cmd->add_option("--preset", o->preset, "Take counts, occluders and channels from a preset")
      ->check(CLI::IsMember(train::TrainConfig::preset_names()));
  cmd->add_option("--occluders", o->occluders, "2 | 3 | 4 | all");
  cmd->add_option("--channels", o->channels, "1 (mono) or 2 (stereo)");
  cmd->add_option("--train", o->train, "Training images");
  cmd->add_option("--test", o->test, "Test images");
  cmd->add_option("--seed", o->seed);
  cmd->add_option("--side", o->side, "both | left (occluders only left of the target)")
      ->check(CLI::IsMember({"both", "left"}));
  cmd->add_flag("--parallel-rig", o->parallel_rig, "Parallel optical axes instead of a converged rig");
  cmd->add_option("--canvas-width", o->canvas_width, "Canvas width in cm at the target depth");
  cmd->add_option("--x-range", o->x_range, "Central image fraction for occluder centers");
  cmd->callback([&, o] {
    action = [&, o] {
      digits::DatasetSpec spec;
      spec.occluders = "3";
      spec.train_count = 10000;
      spec.test_count = 2000;
      if (!o->preset.empty()) {
        const auto p = train::data_preset(o->preset);
        spec.occluders = p.occluders;
        spec.rig.channels = p.channels;
        spec.train_count = p.train_count;
        spec.test_count = p.test_count;
      }
      if (!o->occluders.empty()) spec.occluders = o->occluders;
      if (o->channels >= 0) spec.rig.channels = o->channels;
      if (o->train >= 0) spec.train_count = o->train;
      if (o->test >= 0) spec.test_count = o->test;
      if (o->seed < 0) throw ConfigError("--seed must be non-negative");
      spec.seed = static_cast<std::uint64_t>(o->seed);
      spec.side = o->side == "left" ? digits::OcclusionSide::left : digits::OcclusionSide::both;
      spec.rig.converged = !o->parallel_rig;
      if (o->canvas_width > 0) spec.rig.canvas_world_width = o->canvas_width;
      if (o->x_range > 0) spec.rig.x_range_fraction = o->x_range;
      spec.validate();
      const auto dir = resolve_out(o->out, "gen-data");
      const auto m = digits::generate_dataset(spec, dir);
      write_metadata(ctx, dir, "gen-data", m.to_keyvalue());
      ctx.out << "train_sha256=" << m.train_sha256 << "\n" << "test_sha256=" << m.test_sha256 << "\n";
    };
  });
}

void add_train(CLI::App& app, Context& ctx, std::function<void()>& action) {
  struct Opts {
    std::string data, out;
    bool no_eval = false;
    TrainFlags flags;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("train", "Train one network");
  cmd->add_option("--data", o->data, "Dataset directory")->required();
  cmd->add_option("--out", o->out, "Run directory");
  cmd->add_flag("--no-eval", o->no_eval, "Skip the test-set evaluation");
  o->flags.add(cmd, false);
  cmd->callback([&, o] {
    action = [&, o] {
      require_input(fs::path(o->data) / "manifest.txt", "dataset");
      auto cfg = o->flags.resolve();
      cfg.data = o->data;
      const auto train_set = digits::read_dataset(o->data, digits::SplitKind::train);
      cfg.channels = train_set.channels();
      cfg.validate();
      std::optional<digits::Dataset> test_set;
      if (!o->no_eval) test_set = digits::read_dataset(o->data, digits::SplitKind::test);
      const auto dir = resolve_out(o->out, "train");
      fs::create_directories(dir);
      cfg.to_keyvalue().write(dir / "config.txt");
      train::TrainHooks hooks;
      hooks.on_epoch = [&](int epoch, double loss) {
        ctx.err << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << loss << "\n";
      };
      const auto r = train::train(cfg, train_set, test_set ? &*test_set : nullptr, dir, hooks);
      auto kv = cfg.to_keyvalue();
      kv.set("train_sha256", train_set.manifest().train_sha256);
      kv.set("test_sha256", train_set.manifest().test_sha256);
      write_metadata(ctx, dir, "train", kv);
      if (test_set) ctx.out << "error=" << util::format_double(r.result.eval.error) << "\n";
    };
  });
}

void add_eval(CLI::App& app, Context& ctx, std::function<void()>& action) {
  struct Opts {
    std::string checkpoint, data, out, split = "test";
    int batch = 250;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  cmd->add_option("--checkpoint", o->checkpoint, "checkpoint.ocnk")->required();
  cmd->add_option("--data", o->data, "Dataset directory")->required();
  cmd->add_option("--split", o->split)->check(CLI::IsMember({"train", "test"}));
  cmd->add_option("--out", o->out, "Output directory");
  cmd->add_option("--batch", o->batch, "Evaluation batch size");
  cmd->callback([&, o] {
    action = [&, o] {
      require_input(o->checkpoint, "checkpoint");
      require_input(fs::path(o->data) / "manifest.txt", "dataset");
      auto ck = rcnn::load_checkpoint(o->checkpoint);
      const auto split = o->split == "train" ? digits::SplitKind::train : digits::SplitKind::test;
      const auto data = digits::read_dataset(o->data, split);
      auto result = train::evaluate(ck.params, ck.arch, data, o->batch);
      const auto dir = resolve_out(o->out, "eval");
      util::KeyValue extra;
      extra.set("model", ck.arch.name());
      train::write_eval(dir, result, extra);
      util::KeyValue kv;
      kv.set("checkpoint", o->checkpoint);
      kv.set("checkpoint_sha256", util::to_hex(util::sha256_file(o->checkpoint)));
      kv.set("data", o->data);
      kv.set("split", o->split);
      write_metadata(ctx, dir, "eval", kv);
      ctx.out << "error=" << util::format_double(result.error) << "\n";
    };
  });
}

void add_grid(CLI::App& app, Context& ctx, std::function<void()>& action) {
  struct Opts {
    std::vector<std::string> data;
    std::string models = "b,b-f,b-k,bt,bl,blt", out;
    bool no_reuse = false;
    TrainFlags flags;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("grid", "Train models x datasets x repetitions and tabulate errors");
  cmd->add_option("--data", o->data, "Dataset directories")->required();
  cmd->add_option("--models", o->models, "Comma-separated model names");
  cmd->add_option("--out", o->out, "Grid directory");
  cmd->add_flag("--no-reuse", o->no_reuse, "Retrain runs that already finished");
  o->flags.add(cmd, true);
  cmd->callback([&, o] {
    action = [&, o] {
      train::GridConfig g;
      for (const auto& m : split_list(o->models)) g.models.push_back(rcnn::parse_model(m));
      if (g.models.empty()) throw ConfigError("--models is empty");
      for (const auto& d : o->data) {
        require_input(fs::path(d) / "manifest.txt", "dataset");
        g.datasets.emplace_back(d);
      }
      g.base = o->flags.resolve();
      g.out_dir = resolve_out(o->out, "grid");
      g.reuse = !o->no_reuse;
      const auto r = train::run_experiment_grid(g, [&](const std::string& s) { ctx.err << s << "\n"; });
      auto kv = g.base.to_keyvalue();
      kv.set("models", o->models);
      for (std::size_t i = 0; i < o->data.size(); ++i) kv.set("dataset." + std::to_string(i), o->data[i]);
      write_metadata(ctx, g.out_dir, "grid", kv);
      ctx.out << train::grid_table_csv(r);
      const bool failed = std::any_of(r.runs.begin(), r.runs.end(), [](const auto& run) { return !run.ok; });
      if (failed) throw Error("some grid runs failed; see runs.csv");
    };
  });
}

void add_compare(CLI::App& app, Context& ctx, std::function<void()>& action) {
  struct Opts {
    std::vector<std::string> runs;
    std::string out, p_value = "chi2";
    double q = 0.05;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("compare", "Pairwise McNemar tests with FDR control");
  cmd->add_option("--run", o->runs, "Evaluation directory, optionally NAME=DIR")->required();
  cmd->add_option("--out", o->out, "Output directory");
  cmd->add_option("--q", o->q, "False discovery rate")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--p-value", o->p_value, "chi2 | exact")->check(CLI::IsMember({"chi2", "exact"}));
  cmd->callback([&, o] {
    action = [&, o] {
      std::vector<stats::ModelOutcomes> models;
      util::KeyValue kv;
      for (const auto& spec : o->runs) {
        std::string name, dir = spec;
        if (const auto eq = spec.find('='); eq != std::string::npos) {
          name = spec.substr(0, eq);
          dir = spec.substr(eq + 1);
        } else {
          fs::path p(dir);
          if (p.filename().empty()) p = p.parent_path();
          name = p.filename().string();
        }
        require_input(fs::path(dir) / "records.csv", "evaluation records");
        const auto e = train::read_eval(dir);
        stats::ModelOutcomes m;
        m.name = name;
        m.test_sha256 = e.test_sha256;
        for (const auto& r : e.records) {
          m.labels.push_back(r.label);
          m.correct.push_back(r.correct ? 1 : 0);
        }
        kv.set("run." + name, dir);
        models.push_back(std::move(m));
      }
      if (models.size() < 2) throw ConfigError("compare needs at least two --run directories");
      const auto kind = o->p_value == "exact" ? stats::PValueKind::exact : stats::PValueKind::chi2;
      const auto m = stats::pairwise_compare(models, o->q, kind);
      const auto dir = resolve_out(o->out, "compare");
      stats::write_pairwise(dir, m);
      kv.set("q", o->q);
      kv.set("p_value", o->p_value);
      write_metadata(ctx, dir, "compare", kv);
      ctx.out << stats::matrix_csv(m);
    };
  });
}

void add_analyze(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("analyze", "Representation analyses and reports");
  cmd->require_subcommand(1);

  {
    struct Opts {
      std::string run, out, classes;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = cmd->add_subcommand("trajectories", "Mean softmax output over time per target class");
    sub->add_option("--run", o->run, "Evaluation directory with records.csv")->required();
    sub->add_option("--out", o->out, "Output directory");
    sub->add_option("--classes", o->classes, "Comma-separated classes (default: all)");
    sub->callback([&, o] {
      action = [&, o] {
        require_input(fs::path(o->run) / "records.csv", "evaluation records");
        const auto e = train::read_eval(o->run);
        std::vector<int> filter;
        for (const auto& c : split_list(o->classes)) filter.push_back(std::stoi(c));
        const auto traj = analysis::softmax_trajectories(e.records, e.time_steps, e.classes, filter,
                                                         [&](const std::string& w) { ctx.err << w << "\n"; });
        const auto curve = analysis::correct_class_curve(e.records, e.time_steps, e.classes);
        const auto dir = resolve_out(o->out, "trajectories");
        analysis::write_file(dir / "softmax_trajectories.csv", analysis::trajectories_csv(traj));
        analysis::write_file(dir / "softmax_trajectories.svg", analysis::trajectories_svg(traj));
        std::string csv = "t,mean_correct_prob\n";
        for (std::size_t t = 0; t < curve.size(); ++t) csv += std::to_string(t) + "," + util::format_double(curve[t]) + "\n";
        analysis::write_file(dir / "correct_class.csv", csv);
        util::KeyValue kv;
        kv.set("run", o->run);
        kv.set("classes", o->classes);
        write_metadata(ctx, dir, "analyze trajectories", kv);
        ctx.out << csv;
      };
    });
  }

  {
    struct Opts {
      std::string checkpoint, data, out, ref_time = "matching";
      int limit = 0;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = cmd->add_subcommand("discount", "Relative distance of occluded stimuli to target and occluder references");
    sub->add_option("--checkpoint", o->checkpoint)->required();
    sub->add_option("--data", o->data, "Dataset directory (test split is used)")->required();
    sub->add_option("--out", o->out, "Output directory");
    sub->add_option("--ref-time", o->ref_time, "matching | first")->check(CLI::IsMember({"matching", "first"}));
    sub->add_option("--limit", o->limit, "Use only the first N test samples");
    sub->callback([&, o] {
      action = [&, o] {
        require_input(o->checkpoint, "checkpoint");
        require_input(fs::path(o->data) / "manifest.txt", "dataset");
        auto ck = rcnn::load_checkpoint(o->checkpoint);
        auto data = digits::read_dataset(o->data, digits::SplitKind::test);
        if (o->limit > 0 && o->limit < data.size()) {
          const std::size_t per = data.image_size();
          std::vector<std::uint8_t> images(data.images().begin(), data.images().begin() + per * o->limit);
          std::vector<digits::SceneSpec> scenes;
          for (int i = 0; i < o->limit; ++i) scenes.push_back(data.scene(i));
          data = digits::Dataset(data.manifest(), data.split(), data.height(), data.width(), data.channels(),
                                 std::move(images), std::move(scenes));
        }
        const auto ref = o->ref_time == "first" ? analysis::ReferenceTime::first : analysis::ReferenceTime::matching;
        const auto recs = analysis::discounting_analysis(ck.params, ck.arch, data, ref);
        const auto summary = analysis::summarize_distances(recs);
        const auto dir = resolve_out(o->out, "discount");
        analysis::write_file(dir / "distances.csv", analysis::distances_csv(recs));
        analysis::write_file(dir / "violin.csv", analysis::violin_csv(summary));
        analysis::write_file(dir / "violin.svg", analysis::violin_svg(recs));
        util::KeyValue kv;
        kv.set("checkpoint", o->checkpoint);
        kv.set("checkpoint_sha256", util::to_hex(util::sha256_file(o->checkpoint)));
        kv.set("data", o->data);
        kv.set("ref_time", o->ref_time);
        kv.set("limit", o->limit);
        write_metadata(ctx, dir, "analyze discount", kv);
        ctx.out << analysis::violin_csv(summary);
      };
    });
  }

  {
    struct Opts {
      std::string checkpoint, data, out;
      int stimuli = 20;
      analysis::EmbeddingConfig tsne;
    };
    auto o = std::make_shared<Opts>();
    o->tsne.perplexity = 10;
    auto* sub = cmd->add_subcommand("tsne", "Joint t-SNE of occluded and un-occluded time trajectories");
    sub->add_option("--checkpoint", o->checkpoint)->required();
    sub->add_option("--data", o->data, "Dataset directory (test split is used)")->required();
    sub->add_option("--out", o->out, "Output directory");
    sub->add_option("--stimuli", o->stimuli, "Number of test stimuli");
    sub->add_option("--perplexity", o->tsne.perplexity);
    sub->add_option("--iterations", o->tsne.iterations);
    sub->add_option("--seed", o->tsne.seed);
    sub->callback([&, o] {
      action = [&, o] {
        require_input(o->checkpoint, "checkpoint");
        require_input(fs::path(o->data) / "manifest.txt", "dataset");
        auto ck = rcnn::load_checkpoint(o->checkpoint);
        const auto data = digits::read_dataset(o->data, digits::SplitKind::test);
        const int n = std::min(o->stimuli, data.size());
        if (n < 1) throw ConfigError("--stimuli must be positive");
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        const auto occluded = analysis::extract_activations(ck.params, ck.arch, data, idx);
        const auto& rig = data.manifest().spec.rig;
        std::vector<std::vector<std::uint8_t>> renders;
        std::vector<int> labels;
        std::vector<digits::SceneSpec> scenes;
        for (int i : idx) {
          renders.push_back(analysis::render_target_only(data.scene(i), rig, digits::GlyphAtlas::embedded()));
          labels.push_back(data.label(i));
          scenes.push_back(data.scene(i));
        }
        const auto unoccluded = analysis::extract_activations(
            ck.params, ck.arch, to_tensor(renders, data.channels(), data.height()), labels, scenes);
        const auto emb = analysis::tsne_embed(analysis::pooled_activations(unoccluded, occluded), o->tsne);
        const auto ex = analysis::time_trajectory_export(unoccluded, occluded, emb);
        const auto dir = resolve_out(o->out, "tsne");
        analysis::write_file(dir / "trajectory.csv", analysis::trajectory_csv(ex));
        analysis::write_file(dir / "trajectory.svg", analysis::trajectory_svg(ex));
        auto all = unoccluded;
        all.insert(all.end(), occluded.begin(), occluded.end());
        analysis::write_file(dir / "activations.csv", analysis::activations_csv(all));
        auto kv = o->tsne.to_keyvalue();
        kv.set("checkpoint", o->checkpoint);
        kv.set("data", o->data);
        kv.set("stimuli", n);
        kv.set("initial_kl", emb.initial_kl);
        kv.set("final_kl", emb.final_kl);
        write_metadata(ctx, dir, "analyze tsne", kv);
        ctx.out << "initial_kl=" << util::format_double(emb.initial_kl) << "\nfinal_kl="
                << util::format_double(emb.final_kl) << "\n";
      };
    });
  }

  {
    struct Opts {
      std::string grid, out;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = cmd->add_subcommand("report", "Error report (CSV + SVG) from a grid directory");
    sub->add_option("--grid", o->grid, "Grid directory")->required();
    sub->add_option("--out", o->out, "Output directory");
    sub->callback([&, o] {
      action = [&, o] {
        require_input(o->grid, "grid directory");
        const auto cells = train::collect_cells(o->grid);
        const auto dir = resolve_out(o->out, "report");
        train::emit_report(cells, dir);
        util::KeyValue kv;
        kv.set("grid", o->grid);
        write_metadata(ctx, dir, "analyze report", kv);
        ctx.out << train::report_csv(cells);
      };
    });
  }
}

int report_error(std::ostream& err, int code, const char* kind, const std::string& message) {
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    escaped += c == '\n' ? ' ' : c;
  }
  err << "error code=" << code << " kind=" << kind << " message=\"" << escaped << "\"\n";
  return code;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{args, out, err};
  CLI::App app{"occlunet: occluded stereo digits, recurrent conv nets and their analysis", "occlunet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.add_option("--threads", ctx.threads, "Worker threads (default: all cores; 1 is bit-deterministic)")
      ->check(CLI::NonNegativeNumber);
  std::function<void()> action;
  add_gen_data(app, ctx, action);
  add_train(app, ctx, action);
  add_eval(app, ctx, action);
  add_grid(app, ctx, action);
  add_compare(app, ctx, action);
  add_analyze(app, ctx, action);
  add_params(app, ctx, action);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    return report_error(err, kUsage, "usage", e.what());
  }

  try {
    util::set_num_threads(ctx.threads > 0 ? ctx.threads
                                          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
    if (!action) return report_error(err, kUsage, "usage", "no command given");
    action();
    return kOk;
  } catch (const ConfigError& e) {
    return report_error(err, kUsage, "usage", e.what());
  } catch (const IoError& e) {
    return report_error(err, kMissingInput, "missing_input", e.what());
  } catch (const CorruptionError& e) {
    return report_error(err, kCorruptInput, "corrupt_input", e.what());
  } catch (const DivergenceError& e) {
    return report_error(err, kDiverged, "diverged", e.what());
  } catch (const std::exception& e) {
    return report_error(err, kFailure, "failure", e.what());
  }
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace occlunet::cli
