#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "graspml/model.hpp"

namespace graspml {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive moment estimation; first and second moments are kept per parameter block.
template <typename T>
struct Adam {
  AdamOptions options;
  std::uint64_t step_count = 0;
  Gradients<T> first;
  Gradients<T> second;

  Adam() = default;
  Adam(const Model<T>& model, AdamOptions opt)
      : options(opt), first(model.zero_gradients()), second(model.zero_gradients()) {}

  /// Applies one update with the gradients multiplied by `scale`.
  void step(Model<T>& model, const Gradients<T>& grads, double scale = 1.0) {
    auto blocks = model.blocks();
    if (blocks.size() != grads.size() || first.size() != grads.size()) {
      throw std::invalid_argument("Adam: parameter layout mismatch");
    }
    ++step_count;
    const double b1t = 1.0 - std::pow(options.beta1, static_cast<double>(step_count));
    const double b2t = 1.0 - std::pow(options.beta2, static_cast<double>(step_count));
    const double lr = options.learning_rate * std::sqrt(b2t) / b1t;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      auto& p = blocks[b].values;
      auto& m = first[b];
      auto& v = second[b];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = static_cast<double>(grads[b][i]) * scale;
        const double mi = options.beta1 * m[i] + (1.0 - options.beta1) * g;
        const double vi = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p[i] = static_cast<T>(p[i] - lr * mi / (std::sqrt(vi) + options.epsilon));
      }
    }
  }
};

}  // namespace graspml
