#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspml/checkpoint.hpp"
#include "graspml/config_maps.hpp"
#include "graspml/dataset.hpp"
#include "graspml/eval.hpp"
#include "graspml/losses.hpp"
#include "graspml/model.hpp"
#include "graspml/optimizer.hpp"
#include "graspml/random.hpp"
#include "graspml/toy.hpp"

namespace graspml {

enum class DatasetKind { toy, jacquard_dir, clutter };

inline std::string_view to_string(DatasetKind d) {
  switch (d) {
    case DatasetKind::toy: return "toy";
    case DatasetKind::jacquard_dir: return "jacquard_dir";
    case DatasetKind::clutter: return "clutter";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "toy") return DatasetKind::toy;
  if (s == "jacquard_dir" || s == "jacquard") return DatasetKind::jacquard_dir;
  if (s == "clutter") return DatasetKind::clutter;
  throw std::invalid_argument("unknown dataset kind '" + std::string(s) + "'");
}

/// Everything that determines a run. Keys are "section.name" in the INI file.
struct ExperimentConfig {
  // [data]
  DatasetKind dataset = DatasetKind::toy;
  std::string data_dir;
  std::size_t n_train = 500;
  std::size_t n_val = 100;
  std::size_t image_size = 300;
  std::size_t objects = 3;
  std::uint64_t data_seed = 1;
  bool augment = true;
  double finger_thickness = 10.0;
  double approach_offset = 0.05;
  // [train]
  LossKind loss = LossKind::mlgsl;
  std::size_t labels_per_image = 16;
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  // [model]
  SamPlacement sam = SamPlacement::none;
  std::vector<int> channels{16, 32, 32, 64, 64, 64, 32, 16};
  double depth_scale = 10.0;
  // [eval]
  double iou_threshold = 0.25;
  double angle_threshold = kPi / 6.0;
  double quality_threshold = 0.5;
  double smooth_sigma = 2.0;
  double nms_radius = 10.0;
  std::size_t accuracy_draws = 100;
  // [output]
  std::string output_dir = "runs/default";

  void validate() const {
    if (labels_per_image < 1) throw std::invalid_argument("config: train.labels_per_image must be >= 1");
    if (epochs < 1) throw std::invalid_argument("config: train.epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("config: train.learning_rate must be positive");
    if (n_train < 1) throw std::invalid_argument("config: data.n_train must be >= 1");
    if (n_val < 1) throw std::invalid_argument("config: data.n_val must be >= 1");
    if (image_size < 4 || image_size % 4) throw std::invalid_argument("config: data.image_size must be a multiple of 4");
    if (dataset == DatasetKind::clutter && (objects < 1 || objects > 5)) {
      throw std::invalid_argument("config: data.objects must be in [1, 5]");
    }
    if (dataset == DatasetKind::jacquard_dir && !std::filesystem::is_directory(data_dir)) {
      throw std::invalid_argument("config: data.dir '" + data_dir + "' is not a directory");
    }
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw std::invalid_argument("config: eval.iou_threshold");
    if (!(angle_threshold > 0.0)) throw std::invalid_argument("config: eval.angle_threshold");
    model_spec().validate();
  }

  ModelSpec model_spec() const {
    ModelSpec s;
    s.input_rows = s.input_cols = static_cast<int>(image_size);
    s.channels = channels;
    s.sam = sam;
    s.depth_scale = depth_scale;
    s.width_scale = kMaxGraspWidth * scale();
    return s;
  }

  double scale() const { return static_cast<double>(image_size) / 300.0; }

  /// Gripper in this run's pixel units.
  GripperModel gripper() const {
    GripperModel g;
    g.finger_thickness = finger_thickness;
    g.approach_offset = approach_offset;
    return scaled_gripper(g, scale());
  }

  SuccessCriterion criterion() const { return {iou_threshold, angle_threshold, 0.5}; }

  ExtractOptions extract_options() const { return {smooth_sigma * scale(), nms_radius * scale()}; }

  ToyOptions toy_options() const {
    ToyOptions t;
    t.image_size = image_size;
    t.gripper.finger_thickness = finger_thickness;
    t.gripper.approach_offset = approach_offset;
    return t;
  }

  /// Canonical key/value listing; also the input of `hash()`.
  std::map<std::string, std::string> to_map() const {
    auto num = [](double v) {
      std::ostringstream o;
      o << std::setprecision(17) << v;
      return o.str();
    };
    std::string ch;
    for (std::size_t i = 0; i < channels.size(); ++i) ch += (i ? "," : "") + std::to_string(channels[i]);
    return {{"data.kind", std::string(to_string(dataset))},
            {"data.dir", data_dir},
            {"data.n_train", std::to_string(n_train)},
            {"data.n_val", std::to_string(n_val)},
            {"data.image_size", std::to_string(image_size)},
            {"data.objects", std::to_string(objects)},
            {"data.seed", std::to_string(data_seed)},
            {"data.augment", augment ? "true" : "false"},
            {"data.finger_thickness", num(finger_thickness)},
            {"data.approach_offset", num(approach_offset)},
            {"train.loss", std::string(to_string(loss))},
            {"train.labels_per_image", std::to_string(labels_per_image)},
            {"train.epochs", std::to_string(epochs)},
            {"train.batch_size", std::to_string(batch_size)},
            {"train.learning_rate", num(learning_rate)},
            {"train.seed", std::to_string(seed)},
            {"model.sam", std::string(to_string(sam))},
            {"model.channels", ch},
            {"model.depth_scale", num(depth_scale)},
            {"eval.iou_threshold", num(iou_threshold)},
            {"eval.angle_threshold", num(angle_threshold)},
            {"eval.quality_threshold", num(quality_threshold)},
            {"eval.smooth_sigma", num(smooth_sigma)},
            {"eval.nms_radius", num(nms_radius)},
            {"eval.accuracy_draws", std::to_string(accuracy_draws)},
            {"output.dir", output_dir}};
  }

  /// Sets one "section.name" key from text; throws on unknown keys or bad values.
  void set(const std::string& key, const std::string& value) {
    auto u64 = [&] {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(value, &used);
      if (used != value.size() || value.find('-') != std::string::npos) throw std::invalid_argument(key);
      return static_cast<std::uint64_t>(v);
    };
    auto real = [&] {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(key);
      return v;
    };
    auto boolean = [&] {
      if (value == "true" || value == "1" || value == "yes") return true;
      if (value == "false" || value == "0" || value == "no") return false;
      throw std::invalid_argument(key);
    };
    struct UnknownKey {};
    try {
      if (key == "data.kind") dataset = parse_dataset_kind(value);
      else if (key == "data.dir") data_dir = value;
      else if (key == "data.n_train") n_train = u64();
      else if (key == "data.n_val") n_val = u64();
      else if (key == "data.image_size") image_size = u64();
      else if (key == "data.objects") objects = u64();
      else if (key == "data.seed") data_seed = u64();
      else if (key == "data.augment") augment = boolean();
      else if (key == "data.finger_thickness") finger_thickness = real();
      else if (key == "data.approach_offset") approach_offset = real();
      else if (key == "train.loss") loss = parse_loss_kind(value);
      else if (key == "train.labels_per_image") labels_per_image = u64();
      else if (key == "train.epochs") epochs = u64();
      else if (key == "train.batch_size") batch_size = u64();
      else if (key == "train.learning_rate") learning_rate = real();
      else if (key == "train.seed") seed = u64();
      else if (key == "model.sam") sam = parse_sam_placement(value);
      else if (key == "model.channels") {
        channels.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) channels.push_back(std::stoi(item));
      } else if (key == "model.depth_scale") depth_scale = real();
      else if (key == "eval.iou_threshold") iou_threshold = real();
      else if (key == "eval.angle_threshold") angle_threshold = real();
      else if (key == "eval.quality_threshold") quality_threshold = real();
      else if (key == "eval.smooth_sigma") smooth_sigma = real();
      else if (key == "eval.nms_radius") nms_radius = real();
      else if (key == "eval.accuracy_draws") accuracy_draws = u64();
      else if (key == "output.dir") output_dir = value;
      else throw UnknownKey{};
    } catch (const UnknownKey&) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value '" + value + "' for " + key);
    }
  }

  std::string to_ini() const {
    std::string out, section;
    for (const auto& [k, v] : to_map()) {
      const auto dot = k.find('.');
      const std::string sec = k.substr(0, dot);
      if (sec != section) {
        out += (section.empty() ? "" : "\n") + ("[" + sec + "]\n");
        section = sec;
      }
      out += k.substr(dot + 1) + " = " + v + "\n";
    }
    return out;
  }

  /// FNV-1a over the canonical listing, excluding the output location.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : to_map()) {
      if (k == "output.dir") continue;
      for (char c : k + "=" + v + "\n") {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  static ExperimentConfig from_ini(std::istream& in) {
    boost::property_tree::ptree tree;
    boost::property_tree::ini_parser::read_ini(in, tree);
    ExperimentConfig cfg;
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw std::invalid_argument("config: key '" + section + "' outside a section");
      for (const auto& [name, leaf] : body) cfg.set(section + "." + name, leaf.get_value<std::string>());
    }
    return cfg;
  }

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read config " + path.string());
    try {
      return from_ini(in);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw std::invalid_argument("config: " + std::string(e.what()));
    }
  }
};

// ---------------------------------------------------------------------------------------
// Data

struct DataSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

inline std::vector<Sample> make_clutter_scenes(std::span<const Sample> pool, std::size_t n, std::size_t objects,
                                               std::uint64_t seed, const GripperModel& grip, const std::string& prefix) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto scene = fuse_clutter(pool, objects, derive_seed(seed, i), grip);
    scene.sample.id = prefix + toy_id(i).substr(3);
    out.push_back(std::move(scene.sample));
  }
  return out;
}

/// Builds or loads the train/val samples a config describes. Validation samples keep all
/// of their labels.
inline DataSplit load_split(const ExperimentConfig& cfg) {
  DataSplit d;
  switch (cfg.dataset) {
    case DatasetKind::toy: {
      auto all = gen_toy_dataset(cfg.n_train + cfg.n_val, cfg.data_seed, cfg.toy_options());
      d.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + cfg.n_train));
      d.val.assign(std::make_move_iterator(all.begin() + cfg.n_train), std::make_move_iterator(all.end()));
      break;
    }
    case DatasetKind::clutter: {
      const auto pool_train = gen_toy_dataset(std::max<std::size_t>(cfg.n_train, 50), derive_seed(cfg.data_seed, 1),
                                              cfg.toy_options());
      const auto pool_val = gen_toy_dataset(std::max<std::size_t>(cfg.n_val, 50), derive_seed(cfg.data_seed, 2),
                                            cfg.toy_options());
      d.train = make_clutter_scenes(pool_train, cfg.n_train, cfg.objects, derive_seed(cfg.data_seed, 3),
                                    cfg.gripper(), "scene");
      d.val = make_clutter_scenes(pool_val, cfg.n_val, cfg.objects, derive_seed(cfg.data_seed, 4), cfg.gripper(),
                                  "vscene");
      break;
    }
    case DatasetKind::jacquard_dir: {
      const auto manifest = read_manifest(std::filesystem::path(cfg.data_dir) / "manifest.txt");
      for (const auto& e : manifest) {
        auto s = load_sample(cfg.data_dir, e.id);
        (e.split == Split::train ? d.train : d.val).push_back(std::move(s));
      }
      if (d.train.size() > cfg.n_train) d.train.resize(cfg.n_train);
      if (d.val.size() > cfg.n_val) d.val.resize(cfg.n_val);
      if (d.train.empty() || d.val.empty()) throw std::runtime_error("dataset " + cfg.data_dir + " lacks a split");
      break;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  LossValue train;
  double val_top1 = 0.0;
  double val_top5 = 0.0;
};

inline std::string history_csv_header() { return "epoch,train_loss,pixel_term,angle_term,width_term,val_top1,val_top5"; }

inline std::string history_csv_row(const EpochRecord& r) {
  std::ostringstream o;
  o << std::setprecision(9) << r.epoch << ',' << r.train.total << ',' << r.train.pixel_term << ','
    << r.train.angle_term << ',' << r.train.width_term << ',' << r.val_top1 << ',' << r.val_top5;
  return o.str();
}

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Model<float> best;
  Model<float> last;
  Adam<float> optimizer;
  std::size_t best_epoch = 0;
  double best_top1 = -1.0;
  std::vector<EpochRecord> history;
};

/// Per-sample supervision prepared once: the label subset and, for the dense baseline,
/// its painted target maps.
struct TrainItem {
  const Sample* sample = nullptr;
  std::vector<Grasp> labels;
  std::optional<ConfigMaps> dense;
};

inline std::vector<TrainItem> prepare_items(std::span<const Sample> data, const ExperimentConfig& cfg) {
  std::vector<TrainItem> items;
  for (std::size_t i = 0; i < data.size(); ++i) {
    TrainItem it;
    it.sample = &data[i];
    it.labels = downsample_labels(data[i], cfg.labels_per_image, derive_seed(cfg.data_seed ^ 0x5eedULL, i)).labels;
    if (cfg.loss == LossKind::img_mse) {
      it.dense = encode_labels_dense(it.labels, data[i].image_shape(), 1.0 / 3.0, 0.5, cfg.model_spec().width_scale);
    }
    items.push_back(std::move(it));
  }
  return items;
}

/// Mini-batch training with per-epoch validation; keeps the model with the best
/// validation Top-1 (earliest on ties). `on_epoch` sees every record as it is produced.
inline TrainResult train_model(const ExperimentConfig& cfg, std::span<const Sample> train, std::span<const Sample> val,
                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train.empty() || val.empty()) throw std::invalid_argument("train_model: empty split");
  TrainResult res{Model<float>::build(cfg.model_spec(), cfg.seed), {}, {}, 0, -1.0, {}};
  Model<float>& model = res.best;
  Model<float> current = model;
  Adam<float> adam(current, AdamOptions{cfg.learning_rate});
  const auto items = prepare_items(train, cfg);
  const SuccessCriterion crit = cfg.criterion();
  const ExtractOptions ext = cfg.extract_options();

  std::vector<std::size_t> order(items.size());
  typename Model<float>::Tape tape;
  Gradients<float> grads = current.zero_gradients();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    LossValue sum;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0f);
      for (std::size_t b = start; b < end; ++b) {
        const TrainItem& it = items[order[b]];
        const Sample* s = it.sample;
        std::vector<Grasp> labels = it.labels;
        std::optional<ConfigMaps> dense = it.dense;
        Sample aug;
        if (cfg.augment) {
          Sample sub = *s;
          sub.labels = labels;
          try {
            aug = augment(sub, derive_seed(derive_seed(cfg.seed, epoch), order[b]));
            s = &aug;
            labels = aug.labels;
            if (dense) dense = encode_labels_dense(labels, s->image_shape(), 1.0 / 3.0, 0.5, dense->width_scale);
          } catch (const std::runtime_error&) {
          }
        }
        const ConfigMaps pred = current.forward(s->depth, tape);
        MapGradients dmaps;
        const LossValue lv = evaluate_loss(cfg.loss, pred, labels, dense ? &*dense : nullptr, &dmaps);
        if (!std::isfinite(lv.total)) {
          throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + " on sample " + s->id +
                                " (pixel " + std::to_string(lv.pixel_term) + ", angle " +
                                std::to_string(lv.angle_term) + ", width " + std::to_string(lv.width_term) + ")");
        }
        sum += lv;
        current.backward(tape, dmaps, grads);
      }
      adam.step(current, grads, inv_batch);
    }
    sum *= 1.0 / static_cast<double>(items.size());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = sum;
    const auto tk = top1_top5(model_predictor(current), val, crit, ext);
    rec.val_top1 = tk.top1;
    rec.val_top5 = tk.top5;
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_top1 > res.best_top1) {
      res.best_top1 = rec.val_top1;
      res.best_epoch = epoch;
      model = current;
    }
  }
  res.last = std::move(current);
  res.optimizer = std::move(adam);
  return res;
}

/// Full metric suite for a trained model on a validation split.
template <Predictor P>
EvalReport evaluate(const P& predict, std::span<const Sample> val, const ExperimentConfig& cfg, bool with_collision) {
  EvalReport rep;
  const auto tk = top1_top5(predict, val, cfg.criterion(), cfg.extract_options());
  rep.top1 = tk.top1;
  rep.top5 = tk.top5;
  OracleOptions oopt;
  oopt.gripper = cfg.gripper();
  const auto ar = accuracy_recall(predict, val, default_oracle(oopt, cfg.criterion()), cfg.accuracy_draws,
                                  cfg.quality_threshold, cfg.seed);
  rep.accuracy = ar.accuracy;
  rep.recall = ar.recall;
  if (with_collision) rep.collision_free = collision_free_ratio(predict, val, cfg.gripper(), cfg.extract_options());
  rep.n_samples = val.size();
  return rep;
}

}  // namespace graspml
