#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "graspml/graspml.hpp"

namespace fs = std::filesystem;
using namespace graspml;

namespace {

enum Exit { kOk = 0, kUserError = 1, kRuntimeError = 2 };

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Relative output paths live under $MLGSL_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("MLGSL_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "INI experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.sets, "Override one key, e.g. --set train.epochs=5")->take_all();
  cmd->add_option("--out", a.out, "Output directory (overrides output.dir)");
}

ExperimentConfig load_config(const CommonArgs& a) {
  ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(a.config);
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.out.empty()) cfg.output_dir = a.out;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream o(path, std::ios::binary);
  if (!(o << text)) throw std::runtime_error("cannot write " + path.string());
}

std::string hex(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

/// FNV-1a over sample ids and label lines.
std::uint64_t data_hash(const DataSplit& d) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const std::string& s) {
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto* part : {&d.train, &d.val}) {
    for (const auto& s : *part) {
      feed(s.id + "\n");
      for (const auto& g : s.labels) feed(format_label_line(g) + "\n");
    }
    feed("--\n");
  }
  return h;
}

void write_run_files(const fs::path& out, const ExperimentConfig& cfg, const DataSplit& split) {
  write_text(out / "config.ini", cfg.to_ini());
  std::ostringstream run;
  run << "config_hash = " << hex(cfg.hash()) << "\n"
      << "data_hash = " << hex(data_hash(split)) << "\n"
      << "n_train = " << split.train.size() << "\n"
      << "n_val = " << split.val.size() << "\n";
  write_text(out / "run.txt", run.str());
}

// ---------------------------------------------------------------------------------------
// synth

struct SynthArgs {
  CommonArgs common;
  std::size_t n = 500;
  std::uint64_t seed = 1;
  std::size_t image_size = 300;
  bool clutter = false;
  std::size_t objects = 3;
  bool check = false;
  double val_fraction = 0.2;
};

int cmd_synth(const SynthArgs& a) {
  if (a.n == 0) throw UsageError("synth: --n must be >= 1");
  if (a.val_fraction < 0 || a.val_fraction >= 1) throw UsageError("synth: --val-fraction must be in [0, 1)");
  ExperimentConfig cfg = load_config(a.common);
  cfg.set("data.image_size", std::to_string(a.image_size));
  cfg.data_seed = a.seed;
  cfg.objects = a.objects;
  if (a.clutter && (a.objects < 1 || a.objects > 5)) throw UsageError("synth: --objects must be in [1, 5]");
  if (cfg.image_size < 4 || cfg.image_size % 4) throw UsageError("synth: --image-size must be a multiple of 4");
  const fs::path out = output_path(a.common.out.empty() ? "data/synth" : a.common.out);

  std::vector<Sample> samples;
  std::vector<ClutterScene> scenes;
  if (a.clutter) {
    const auto pool = gen_toy_dataset(std::max<std::size_t>(a.n, 50), derive_seed(a.seed, 1), cfg.toy_options());
    for (std::size_t i = 0; i < a.n; ++i) {
      auto scene = fuse_clutter(pool, a.objects, derive_seed(derive_seed(a.seed, 3), i), cfg.gripper());
      scene.sample.id = "scene" + toy_id(i).substr(3);
      samples.push_back(scene.sample);
      scenes.push_back(std::move(scene));
    }
  } else {
    samples = gen_toy_dataset(a.n, a.seed, cfg.toy_options());
  }

  fs::create_directories(out);
  const std::size_t n_val = static_cast<std::size_t>(std::llround(a.val_fraction * static_cast<double>(a.n)));
  std::vector<ManifestEntry> manifest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    save_sample(out, samples[i]);
    manifest.push_back({samples[i].id, i + n_val < samples.size() ? Split::train : Split::val});
  }
  write_manifest(out / "manifest.txt", manifest);
  if (!scenes.empty()) {
    std::ostringstream prov;
    for (const auto& sc : scenes) {
      prov << sc.sample.id;
      for (const auto& p : sc.provenance) prov << ' ' << p.source_id;
      prov << '\n';
    }
    write_text(out / "provenance.txt", prov.str());
  }

  if (a.check) {
    std::size_t labels = 0, bad = 0;
    for (const auto& s : samples) {
      for (const auto& g : s.labels) {
        ++labels;
        if (collision_check(g, s.depth, cfg.gripper())) ++bad;
      }
    }
    std::cout << "check: " << labels << " labels, " << bad << " in collision\n";
    if (bad) return kRuntimeError;
  }
  std::cout << "wrote " << samples.size() << " samples to " << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------------------
// train

struct Trained {
  TrainResult result;
  DataSplit split;
};

Trained train_into(const ExperimentConfig& cfg, const fs::path& out, bool verbose) {
  cfg.validate();
  DataSplit split = load_split(cfg);
  write_run_files(out, cfg, split);
  std::ofstream csv(out / "history.csv", std::ios::binary);
  csv << history_csv_header() << '\n';
  auto result = train_model(cfg, split.train, split.val, [&](const EpochRecord& r) {
    csv << history_csv_row(r) << '\n' << std::flush;
    if (verbose) {
      std::cout << "epoch " << r.epoch << "  loss " << r.train.total << "  val top1 " << r.val_top1 << "  top5 "
                << r.val_top5 << std::endl;
    }
  });
  fs::create_directories(out / "checkpoints");
  save_checkpoint(out / "checkpoints" / "best.ckpt", result.best, static_cast<const Adam<float>*>(nullptr),
                  cfg.hash());
  save_checkpoint(out / "checkpoints" / "last.ckpt", result.last, &result.optimizer, cfg.hash());
  std::ostringstream summary;
  summary << std::setprecision(9) << "best_epoch = " << result.best_epoch << "\nbest_top1 = " << result.best_top1
          << "\n";
  write_text(out / "summary.txt", summary.str());
  return {std::move(result), std::move(split)};
}

int cmd_train(const CommonArgs& a) {
  const ExperimentConfig cfg = load_config(a);
  const fs::path out = output_path(cfg.output_dir);
  const auto t = train_into(cfg, out, true);
  std::cout << "best epoch " << t.result.best_epoch << " val top1 " << t.result.best_top1 << "\n"
            << "wrote " << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------------------
// eval

struct EvalArgs {
  CommonArgs common;
  std::string checkpoint;
  std::string metric = "standard";
  std::size_t heatmaps = 4;
  std::vector<std::string> ids;
};

int cmd_eval(const EvalArgs& a) {
  const ExperimentConfig cfg = load_config(a.common);
  cfg.validate();
  const fs::path out = output_path(cfg.output_dir);
  const fs::path ckpt = a.checkpoint.empty() ? out / "checkpoints" / "best.ckpt" : fs::path(a.checkpoint);
  const ModelSpec spec = cfg.model_spec();
  const auto ck = load_checkpoint<float>(ckpt, &spec);
  if (ck.config_hash != cfg.hash()) {
    std::cerr << "note: checkpoint was trained under config " << hex(ck.config_hash) << ", evaluating under "
              << hex(cfg.hash()) << "\n";
  }
  const DataSplit split = load_split(cfg);
  const auto predict = model_predictor(ck.model);
  const EvalReport rep = evaluate(predict, split.val, cfg, a.metric == "collision");

  const fs::path dir = out / "eval";
  write_text(dir / "report.csv", EvalReport::csv_header() + "\n" + rep.csv_row() + "\n");
  write_text(dir / "report.txt", rep.key_values());

  std::vector<const Sample*> chosen;
  if (!a.ids.empty()) {
    for (const auto& id : a.ids) {
      const auto it = std::find_if(split.val.begin(), split.val.end(), [&](const Sample& s) { return s.id == id; });
      if (it == split.val.end()) throw UsageError("eval: no validation sample with id '" + id + "'");
      chosen.push_back(&*it);
    }
  } else {
    for (std::size_t i = 0; i < std::min(a.heatmaps, split.val.size()); ++i) chosen.push_back(&split.val[i]);
  }
  for (const Sample* s : chosen) {
    const ConfigMaps maps = predict(*s);
    write_heatmaps(dir / "heatmaps", s->id, s->depth, maps, extract_grasps(maps, 5, cfg.extract_options()));
  }
  std::cout << rep.key_values();
  return kOk;
}

// ---------------------------------------------------------------------------------------
// plot

struct Series {
  std::string name;
  std::vector<double> x, y;
};

Series read_series(const fs::path& csv, const std::string& column) {
  std::ifstream in(csv);
  if (!in) throw UsageError("plot: cannot read " + csv.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string h;
    while (std::getline(ss, h, ',')) header.push_back(h);
  }
  const auto col = std::find(header.begin(), header.end(), column);
  if (col == header.end()) throw UsageError("plot: " + csv.string() + " has no column '" + column + "'");
  const std::size_t ci = static_cast<std::size_t>(col - header.begin());
  Series s;
  s.name = csv.parent_path().filename().string();
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() <= ci || cells[ci].empty()) continue;
    s.x.push_back(std::stod(cells[0]));
    s.y.push_back(std::stod(cells[ci]));
  }
  return s;
}

void write_svg(const fs::path& path, const std::vector<Series>& series, const std::string& ylabel) {
  const double W = 640, H = 400, L = 60, R = 180, T = 20, B = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream o;
  o << std::setprecision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\""
    << " font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4, xv = x0 + (x1 - x0) * i / 4;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">epoch</text>\n";
  o << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 14 " << (T + H - B) / 2
    << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* c = colors[k % std::size(colors)];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i) o << px(series[k].x[i]) << ',' << py(series[k].y[i]) << ' ';
    o << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 14 + 16 * k << "\" fill=\"" << c << "\">" << series[k].name
      << "</text>\n";
  }
  o << "</svg>\n";
  write_text(path, o.str());
}

struct PlotArgs {
  std::vector<std::string> inputs;
  std::string column = "val_top1";
  std::string out = "plot.svg";
};

int cmd_plot(const PlotArgs& a) {
  std::vector<Series> series;
  for (const auto& in : a.inputs) series.push_back(read_series(in, a.column));
  const fs::path out = output_path(a.out);
  write_svg(out, series, a.column);
  std::cout << "wrote " << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------------------
// ablate

struct Axis {
  std::string key;
  std::vector<std::string> values;
};

Axis parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq + 1 == text.size()) throw UsageError("--axis expects key=v1,v2,... got '" + text + "'");
  Axis ax{text.substr(0, eq), {}};
  std::stringstream ss(text.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ',')) ax.values.push_back(v);
  return ax;
}

struct AblateArgs {
  CommonArgs common;
  std::vector<std::string> axes;
  std::string metric = "standard";
};

int cmd_ablate(const AblateArgs& a) {
  if (a.axes.empty()) throw UsageError("ablate: at least one --axis is required");
  const ExperimentConfig base = load_config(a.common);
  std::vector<Axis> axes;
  for (const auto& t : a.axes) axes.push_back(parse_axis(t));
  // Reject bad axes before any training starts.
  for (const auto& ax : axes) {
    for (const auto& v : ax.values) {
      ExperimentConfig probe = base;
      probe.set(ax.key, v);
      probe.validate();
    }
  }
  const fs::path out = output_path(base.output_dir);
  fs::create_directories(out);
  write_text(out / "config.ini", base.to_ini());

  std::size_t cells = 1;
  for (const auto& ax : axes) cells *= ax.values.size();
  std::string header = "cell";
  for (const auto& ax : axes) header += "," + ax.key;
  header += ",status,best_epoch," + EvalReport::csv_header() + ",error";
  std::vector<std::string> rows;
  std::vector<Series> curves;
  std::size_t failed = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    ExperimentConfig cfg = base;
    std::string name, values;
    std::size_t rest = c;
    std::vector<std::string> picked(axes.size());
    for (std::size_t i = axes.size(); i-- > 0;) {
      picked[i] = axes[i].values[rest % axes[i].values.size()];
      rest /= axes[i].values.size();
    }
    for (std::size_t i = 0; i < axes.size(); ++i) {
      cfg.set(axes[i].key, picked[i]);
      name += (i ? "_" : "") + axes[i].key.substr(axes[i].key.find('.') + 1) + "-" + picked[i];
      values += "," + picked[i];
    }
    const fs::path cell_dir = out / "cells" / name;
    cfg.output_dir = cell_dir.string();
    std::cout << "[" << c + 1 << "/" << cells << "] " << name << std::endl;
    std::string row = std::to_string(c) + values;
    try {
      auto t = train_into(cfg, cell_dir, false);
      const bool collision = a.metric == "collision" || cfg.dataset == DatasetKind::clutter;
      const EvalReport rep = evaluate(model_predictor(t.result.best), t.split.val, cfg, collision);
      row += ",ok," + std::to_string(t.result.best_epoch) + "," + rep.csv_row() + ",";
      Series s;
      s.name = name;
      for (const auto& r : t.result.history) {
        s.x.push_back(static_cast<double>(r.epoch));
        s.y.push_back(r.val_top1);
      }
      curves.push_back(std::move(s));
      std::cout << "  top1 " << rep.top1 << "  top5 " << rep.top5 << std::endl;
    } catch (const std::exception& e) {
      ++failed;
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      row += ",failed,,,,,,,," + msg;
      std::cerr << "  failed: " << e.what() << std::endl;
    }
    rows.push_back(row);
    std::string csv = header + "\n";
    for (const auto& r : rows) csv += r + "\n";
    write_text(out / "ablation.csv", csv);
  }
  if (!curves.empty()) write_svg(out / "ablation_val_top1.svg", curves, "val_top1");
  std::cout << "wrote " << (out / "ablation.csv").string() << "\n";
  return failed ? kRuntimeError : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graspml: dense grasp prediction trained from sparse labels"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a procedural dataset on disk");
  add_common(s, synth.common);
  s->add_option("--n", synth.n, "Number of samples");
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--image-size", synth.image_size, "Image side length in pixels");
  s->add_flag("--clutter", synth.clutter, "Fuse several objects per scene and prune colliding labels");
  s->add_option("--objects", synth.objects, "Objects per cluttered scene");
  s->add_option("--val-fraction", synth.val_fraction, "Share of samples marked val in the manifest");
  s->add_flag("--check", synth.check, "Verify every written label is collision-free");

  CommonArgs train;
  auto* t = app.add_subcommand("train", "Train a model and log per-epoch metrics");
  add_common(t, train);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint and write heatmaps");
  add_common(e, ev.common);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file (default <out>/checkpoints/best.ckpt)");
  e->add_option("--metric", ev.metric, "standard or collision")->check(CLI::IsMember({"standard", "collision"}));
  e->add_option("--heatmaps", ev.heatmaps, "Number of validation samples to render");
  e->add_option("--ids", ev.ids, "Render these validation sample ids instead")->delimiter(',');

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train one model per cell of a parameter grid");
  add_common(b, ab.common);
  b->add_option("--axis", ab.axes, "Sweep axis key=v1,v2,... (repeatable)")->take_all();
  b->add_option("--metric", ab.metric, "standard or collision")->check(CLI::IsMember({"standard", "collision"}));

  PlotArgs pl;
  auto* p = app.add_subcommand("plot", "Plot a history.csv column against epoch as SVG");
  p->add_option("inputs", pl.inputs, "history.csv files")->required()->check(CLI::ExistingFile);
  p->add_option("--column", pl.column, "Column to plot");
  p->add_option("--out", pl.out, "Output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUserError;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(ev);
    if (b->parsed()) return cmd_ablate(ab);
    if (p->parsed()) return cmd_plot(pl);
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUserError;
  } catch (const DivergenceError& err) {
    std::cerr << "diverged: " << err.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kRuntimeError;
  }
  return kUserError;
}
