#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspml/config_maps.hpp"
#include "graspml/dataset.hpp"
#include "graspml/geometry.hpp"
#include "graspml/oracle.hpp"
#include "graspml/random.hpp"

namespace graspml {

/// Anything callable as `ConfigMaps(const Sample&)`.
template <typename P>
concept Predictor = requires(const P& p, const Sample& s) {
  { p(s) } -> std::convertible_to<ConfigMaps>;
};

template <typename M>
auto model_predictor(const M& model) {
  return [&model](const Sample& s) { return model.forward(s.depth); };
}

struct TopKResult {
  double top1 = 0.0;
  double top5 = 0.0;
  std::vector<bool> hit1;
  std::vector<bool> hit5;
};

inline bool any_success(std::span<const Grasp> candidates, std::span<const Grasp> labels, const SuccessCriterion& crit) {
  for (const auto& g : candidates) {
    if (is_success(g, labels, crit)) return true;
  }
  return false;
}

/// Top-1 and Top-5 success in one pass over the data (Top-1 is the best of the five).
template <Predictor P>
TopKResult top1_top5(const P& predict, std::span<const Sample> data, const SuccessCriterion& crit = {},
                     const ExtractOptions& ext = {}) {
  if (data.empty()) throw std::invalid_argument("top-k success: empty dataset");
  TopKResult r;
  for (const auto& s : data) {
    const auto grasps = extract_grasps(predict(s), 5, ext);
    const std::span<const Grasp> all(grasps);
    r.hit1.push_back(any_success(all.first(std::min<std::size_t>(1, all.size())), s.labels, crit));
    r.hit5.push_back(any_success(all, s.labels, crit));
  }
  const double n = static_cast<double>(data.size());
  r.top1 = 100.0 * static_cast<double>(std::count(r.hit1.begin(), r.hit1.end(), true)) / n;
  r.top5 = 100.0 * static_cast<double>(std::count(r.hit5.begin(), r.hit5.end(), true)) / n;
  return r;
}

template <Predictor P>
double topk_success(const P& predict, std::span<const Sample> data, std::size_t k, const SuccessCriterion& crit = {},
                    const ExtractOptions& ext = {}) {
  if (data.empty()) throw std::invalid_argument("topk_success: empty dataset");
  std::size_t hits = 0;
  for (const auto& s : data) hits += any_success(extract_grasps(predict(s), k, ext), s.labels, crit);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(data.size());
}

struct AccuracyRecall {
  double accuracy = 0.0;
  double recall = 0.0;
  std::size_t skipped_grasps = 0;
  /// Images that contributed to recall (at least one oracle-positive draw).
  std::size_t recall_images = 0;
};

/// Oracle returning 0/1 for a grasp on a sample; may throw to signal failure.
using GraspOracle = std::function<bool(const Sample&, const Grasp&)>;

/// Per image: `n_draws` pixels drawn uniformly, predicted positive iff Q >= threshold,
/// checked against the oracle on the grasp read at that pixel. Averages per image; images
/// without oracle positives do not enter the recall mean.
template <Predictor P>
AccuracyRecall accuracy_recall(const P& predict, std::span<const Sample> data, const GraspOracle& oracle,
                               std::size_t n_draws = 100, double threshold = 0.5, std::uint64_t seed = 0,
                               std::ostream* warn = nullptr) {
  if (data.empty()) throw std::invalid_argument("accuracy_recall: empty dataset");
  AccuracyRecall out;
  double acc_sum = 0.0, rec_sum = 0.0;
  std::size_t acc_images = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const ConfigMaps maps = predict(s);
    Rng rng(derive_seed(seed, i));
    std::size_t tp = 0, tn = 0, fn = 0, judged = 0;
    for (std::size_t d = 0; d < n_draws; ++d) {
      const std::size_t r = rng.below(maps.quality.rows());
      const std::size_t c = rng.below(maps.quality.cols());
      const Grasp g = maps.grasp_at(r, c);
      bool truth = false;
      try {
        truth = oracle(s, g);
      } catch (const std::exception& e) {
        ++out.skipped_grasps;
        if (warn) *warn << "warning: oracle failed on " << s.id << ": " << e.what() << '\n';
        continue;
      }
      ++judged;
      const bool positive = g.quality >= threshold;
      tp += positive && truth;
      tn += !positive && !truth;
      fn += !positive && truth;
    }
    if (judged == 0) continue;
    acc_sum += static_cast<double>(tp + tn) / static_cast<double>(judged);
    ++acc_images;
    if (tp + fn > 0) {
      rec_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
      ++out.recall_images;
    }
  }
  out.accuracy = acc_images ? 100.0 * acc_sum / static_cast<double>(acc_images) : 0.0;
  out.recall = out.recall_images ? 100.0 * rec_sum / static_cast<double>(out.recall_images) : 0.0;
  return out;
}

/// Share of Top-1 grasps whose fingers clear every object in the scene.
template <Predictor P>
double collision_free_ratio(const P& predict, std::span<const Sample> data, const GripperModel& grip = {},
                            const ExtractOptions& ext = {}) {
  if (data.empty()) throw std::invalid_argument("collision_free_ratio: empty dataset");
  std::size_t clear = 0;
  for (const auto& s : data) {
    const auto top = extract_grasps(predict(s), 1, ext);
    if (!top.empty() && !collision_check(top.front(), s.depth, grip)) ++clear;
  }
  return 100.0 * static_cast<double>(clear) / static_cast<double>(data.size());
}

/// Oracle for a dataset: analytic when shape metadata exists, label proximity otherwise.
inline GraspOracle default_oracle(const OracleOptions& opt = {}, const SuccessCriterion& crit = {}) {
  return [opt, crit](const Sample& s, const Grasp& g) {
    return s.shape ? analytic_oracle(s, g, opt) : label_proximity_oracle(s, g, crit);
  };
}

struct EvalReport {
  double top1 = 0.0;
  double top5 = 0.0;
  double accuracy = 0.0;
  double recall = 0.0;
  double collision_free = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_samples = 0;

  static std::string csv_header() { return "top1,top5,accuracy,recall,collision_free,n_samples"; }

  std::string csv_row() const {
    std::ostringstream o;
    o << std::setprecision(10) << top1 << ',' << top5 << ',' << accuracy << ',' << recall << ',';
    if (!std::isnan(collision_free)) o << collision_free;
    o << ',' << n_samples;
    return o.str();
  }

  std::string key_values() const {
    std::ostringstream o;
    o << std::setprecision(10) << "top1=" << top1 << "\ntop5=" << top5 << "\naccuracy=" << accuracy
      << "\nrecall=" << recall << '\n';
    if (!std::isnan(collision_free)) o << "collision_free=" << collision_free << '\n';
    o << "n_samples=" << n_samples << '\n';
    return o.str();
  }
};

}  // namespace graspml
