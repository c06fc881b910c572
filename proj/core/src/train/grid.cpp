#include "occlunet/train/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>

#include "occlunet/digits/dataset.hpp"
#include "occlunet/stats/stats.hpp"
#include "occlunet/train/trainer.hpp"
#include "occlunet/util/errors.hpp"
#include "occlunet/util/svg.hpp"

namespace occlunet::train {
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string dataset_name(const fs::path& dir) {
  auto p = dir;
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

// Directory of the dataset used by repetition `rep`, generating it if needed.
fs::path dataset_for_repetition(const fs::path& base, const GridConfig& config, int rep) {
  if (config.base.repetition_mode == RepetitionMode::weights || rep == 0) return base;
  auto spec = digits::DatasetManifest::from_keyvalue(util::KeyValue::read(base / "manifest.txt")).spec;
  spec.seed += static_cast<std::uint64_t>(rep);
  const auto dir = config.out_dir / ".datasets" / (dataset_name(base) + "-seed" + std::to_string(spec.seed));
  if (!fs::exists(dir / "manifest.txt")) digits::generate_dataset(spec, dir);
  return dir;
}

}  // namespace

std::vector<GridCell> aggregate(const std::vector<GridRun>& runs, const std::vector<std::string>& datasets,
                                const std::vector<std::string>& models, int repetitions) {
  std::vector<GridCell> cells;
  for (const auto& d : datasets) {
    for (const auto& m : models) {
      GridCell c;
      c.dataset = d;
      c.model = m;
      c.expected = repetitions;
      for (const auto& r : runs) {
        if (r.dataset == d && r.model == m && r.ok) c.errors.push_back(r.error);
      }
      c.mean = c.errors.empty() ? std::nan("") : stats::mean(c.errors);
      c.se = c.errors.size() < 2 ? std::nan("") : stats::standard_error(c.errors);
      const int n = static_cast<int>(c.errors.size());
      c.status = n == 0 ? "missing" : (n < c.expected ? "partial" : "ok");
      cells.push_back(std::move(c));
    }
  }
  return cells;
}

GridResult run_experiment_grid(const GridConfig& config, const GridLog& log) {
  if (config.models.empty()) throw ConfigError("grid needs at least one model");
  if (config.datasets.empty()) throw ConfigError("grid needs at least one dataset");
  if (config.out_dir.empty()) throw ConfigError("grid needs an output directory");
  fs::create_directories(config.out_dir);

  GridResult result;
  for (auto m : config.models) result.models.push_back(rcnn::model_name(m));
  for (const auto& d : config.datasets) result.datasets.push_back(dataset_name(d));

  for (std::size_t di = 0; di < config.datasets.size(); ++di) {
    for (auto model : config.models) {
      for (int rep = 0; rep < config.base.repetitions; ++rep) {
        GridRun run;
        run.dataset = result.datasets[di];
        run.model = rcnn::model_name(model);
        run.repetition = rep;
        run.seed = config.base.seed + static_cast<std::uint64_t>(rep);
        run.dir = config.out_dir / run.dataset / run.model / ("rep" + std::to_string(rep));
        try {
          const auto data_dir = dataset_for_repetition(config.datasets[di], config, rep);
          const auto manifest = digits::DatasetManifest::from_keyvalue(util::KeyValue::read(data_dir / "manifest.txt"));
          TrainConfig tc = config.base;
          tc.model = model;
          tc.channels = manifest.spec.rig.channels;
          tc.data = data_dir;
          tc.seed = run.seed;
          tc.repetitions = 1;
          auto stored = tc.to_keyvalue();
          stored.set("train_sha256", manifest.train_sha256);
          stored.set("test_sha256", manifest.test_sha256);

          const auto config_path = run.dir / "config.txt";
          const auto result_path = run.dir / "result.txt";
          if (config.reuse && fs::exists(config_path) && fs::exists(result_path) &&
              util::KeyValue::read(config_path).entries() == stored.entries()) {
            run.error = util::KeyValue::read(result_path).get_double("error");
            run.ok = true;
            run.reused = true;
            if (log) log(run.dataset + " " + run.model + " rep" + std::to_string(rep) + ": reused, error " + num(run.error));
          } else {
            fs::create_directories(run.dir);
            fs::remove(result_path);
            stored.write(config_path);
            const auto train_set = digits::read_dataset(data_dir, digits::SplitKind::train);
            const auto test_set = digits::read_dataset(data_dir, digits::SplitKind::test);
            TrainHooks hooks;
            if (log) {
              hooks.on_epoch = [&](int epoch, double loss) {
                log(run.dataset + " " + run.model + " rep" + std::to_string(rep) + " epoch " + std::to_string(epoch) +
                    " loss " + num(loss));
              };
            }
            const auto out = train(tc, train_set, &test_set, run.dir, hooks);
            run.error = out.result.eval.error;
            run.ok = true;
            if (log) log(run.dataset + " " + run.model + " rep" + std::to_string(rep) + ": error " + num(run.error));
          }
        } catch (const std::exception& e) {
          run.ok = false;
          run.message = e.what();
          if (log) log(run.dataset + " " + run.model + " rep" + std::to_string(rep) + ": FAILED " + run.message);
        }
        result.runs.push_back(std::move(run));
      }
    }
  }
  result.cells = aggregate(result.runs, result.datasets, result.models, config.base.repetitions);
  write_text(config.out_dir / "runs.csv", grid_runs_csv(result));
  write_text(config.out_dir / "table.csv", grid_table_csv(result));
  emit_report(result.cells, config.out_dir);
  return result;
}

std::string grid_table_csv(const GridResult& r) {
  std::string out = "model";
  for (const auto& d : r.datasets) out += "," + d + "_mean," + d + "_se," + d + "_status";
  out += "\n";
  for (const auto& m : r.models) {
    out += m;
    for (const auto& d : r.datasets) {
      const auto it = std::find_if(r.cells.begin(), r.cells.end(),
                                   [&](const GridCell& c) { return c.model == m && c.dataset == d; });
      if (it == r.cells.end()) {
        out += ",,,missing";
      } else {
        out += "," + num(it->mean) + "," + num(it->se) + "," + it->status;
      }
    }
    out += "\n";
  }
  return out;
}

std::string grid_runs_csv(const GridResult& r) {
  std::string out = "dataset,model,repetition,seed,status,error,message\n";
  for (const auto& run : r.runs) {
    std::string msg = run.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out += run.dataset + "," + run.model + "," + std::to_string(run.repetition) + "," + std::to_string(run.seed) + "," +
           (run.ok ? "ok" : "error") + "," + (run.ok ? num(run.error) : "") + "," + msg + "\n";
  }
  return out;
}

std::vector<GridCell> collect_cells(const fs::path& grid_dir) {
  if (!fs::is_directory(grid_dir)) throw IoError("not a directory: " + grid_dir.string());
  static const std::regex rep_re("rep([0-9]+)");
  std::map<std::pair<std::string, std::string>, GridCell> cells;
  std::vector<fs::path> dataset_dirs;
  for (const auto& d : fs::directory_iterator(grid_dir)) {
    if (d.is_directory() && d.path().filename().string().front() != '.') dataset_dirs.push_back(d.path());
  }
  std::sort(dataset_dirs.begin(), dataset_dirs.end());
  for (const auto& ddir : dataset_dirs) {
    std::vector<fs::path> model_dirs;
    for (const auto& m : fs::directory_iterator(ddir)) {
      if (m.is_directory()) model_dirs.push_back(m.path());
    }
    std::sort(model_dirs.begin(), model_dirs.end());
    for (const auto& mdir : model_dirs) {
      GridCell c;
      c.dataset = ddir.filename().string();
      c.model = mdir.filename().string();
      std::vector<fs::path> reps;
      for (const auto& r : fs::directory_iterator(mdir)) {
        if (r.is_directory() && std::regex_match(r.path().filename().string(), rep_re)) reps.push_back(r.path());
      }
      if (reps.empty()) continue;
      std::sort(reps.begin(), reps.end());
      c.expected = static_cast<int>(reps.size());
      for (const auto& rdir : reps) {
        if (!fs::exists(rdir / "result.txt")) continue;
        try {
          c.errors.push_back(util::KeyValue::read(rdir / "result.txt").get_double("error"));
        } catch (const Error&) {
          // unreadable result: counted as a gap
        }
      }
      const int n = static_cast<int>(c.errors.size());
      c.mean = n == 0 ? std::nan("") : stats::mean(c.errors);
      c.se = n < 2 ? std::nan("") : stats::standard_error(c.errors);
      c.status = n == 0 ? "missing" : (n < c.expected ? "partial" : "ok");
      cells[{c.dataset, c.model}] = std::move(c);
    }
  }
  std::vector<GridCell> out;
  for (auto& [key, c] : cells) out.push_back(std::move(c));
  return out;
}

std::string report_csv(const std::vector<GridCell>& cells) {
  std::string out = "dataset,model,n,mean_error,se_error,status\n";
  for (const auto& c : cells) {
    out += c.dataset + "," + c.model + "," + std::to_string(c.errors.size()) + "," + num(c.mean) + "," + num(c.se) +
           "," + c.status + "\n";
  }
  return out;
}

std::string report_svg(const std::vector<GridCell>& cells) {
  const double bar = 26, gap = 10, left = 60, top = 30, plot_h = 220;
  const double width = left + std::max<std::size_t>(cells.size(), 1) * (bar + gap) + 20;
  util::Svg svg(width, top + plot_h + 70);
  double ymax = 0;
  for (const auto& c : cells) {
    if (!std::isnan(c.mean)) ymax = std::max(ymax, c.mean + (std::isnan(c.se) ? 0.0 : c.se));
  }
  ymax = ymax > 0 ? std::ceil(ymax * 10.0) / 10.0 : 1.0;
  const auto y_of = [&](double v) { return top + plot_h * (1.0 - v / ymax); };
  svg.line(left, top, left, top + plot_h, "#000000");
  svg.line(left, top + plot_h, width - 10, top + plot_h, "#000000");
  for (int i = 0; i <= 4; ++i) {
    const double v = ymax * i / 4.0;
    svg.text(left - 4, y_of(v) + 3, util::fixed(v, 2), 9, "end");
  }
  svg.text(12, top - 12, "test error", 10);
  std::map<std::string, std::size_t> color;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    if (!color.count(c.model)) color.emplace(c.model, color.size());
    const double x = left + gap + i * (bar + gap);
    if (std::isnan(c.mean)) {
      svg.text(x + bar / 2, top + plot_h - 4, "n/a", 9, "middle");
    } else {
      svg.rect(x, y_of(c.mean), bar, top + plot_h - y_of(c.mean), util::palette(color[c.model]));
      if (!std::isnan(c.se)) {
        const double cx = x + bar / 2;
        svg.line(cx, y_of(c.mean + c.se), cx, y_of(c.mean - c.se), "#000000");
        svg.line(cx - 4, y_of(c.mean + c.se), cx + 4, y_of(c.mean + c.se), "#000000");
        svg.line(cx - 4, y_of(c.mean - c.se), cx + 4, y_of(c.mean - c.se), "#000000");
      }
      // Same strings as report.csv, so the plotted values can be checked against it.
      svg.text(x + bar / 2, y_of(c.mean + (std::isnan(c.se) ? 0.0 : c.se)) - 12, num(c.mean), 6, "middle");
      svg.text(x + bar / 2, y_of(c.mean + (std::isnan(c.se) ? 0.0 : c.se)) - 4, "se " + num(c.se), 6, "middle");
    }
    svg.text(x + bar / 2, top + plot_h + 14, c.model, 9, "middle");
    svg.text(x + bar / 2, top + plot_h + 26, c.dataset, 7, "middle");
    if (c.status != "ok") svg.text(x + bar / 2, top + plot_h + 38, c.status, 7, "middle");
  }
  return svg.str();
}

void emit_report(const std::vector<GridCell>& cells, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text(out_dir / "report.csv", report_csv(cells));
  write_text(out_dir / "report.svg", report_svg(cells));
}

}  // namespace occlunet::train
