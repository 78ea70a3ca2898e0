#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "graspml/config_maps.hpp"
#include "graspml/grid.hpp"
#include "graspml/nn/layers.hpp"
#include "graspml/nn/tensor.hpp"

namespace graspml {

/// Which feature stages are followed by a spatial attention block.
enum class SamPlacement { none, down, up, all };

inline std::string_view to_string(SamPlacement s) {
  switch (s) {
    case SamPlacement::none: return "none";
    case SamPlacement::down: return "down";
    case SamPlacement::up: return "up";
    case SamPlacement::all: return "all";
  }
  return "?";
}

inline SamPlacement parse_sam_placement(std::string_view s) {
  if (s == "none") return SamPlacement::none;
  if (s == "down") return SamPlacement::down;
  if (s == "up") return SamPlacement::up;
  if (s == "all") return SamPlacement::all;
  throw std::invalid_argument("unknown sam placement '" + std::string(s) + "'");
}

/// Topology of the fully convolutional grasp network.
///
/// Stages: four downsampling convolutions (max pooling after the 2nd and 3rd, so the
/// total stride is 4), two dilated convolutions, two stride-2 transposed convolutions,
/// then a 1x1 convolution into the quality, sin, cos and width heads.
struct ModelSpec {
  int input_rows = 300;
  int input_cols = 300;
  std::array<int, 4> down_kernels{11, 5, 5, 5};
  std::array<int, 2> dilated_kernels{5, 5};
  std::array<int, 2> dilations{2, 4};
  int up_kernel = 3;
  std::vector<int> channels{16, 32, 32, 64, 64, 64, 32, 16};
  SamPlacement sam = SamPlacement::none;
  int sam_kernel = 7;
  double depth_scale = 10.0;
  /// Pixel width represented by a width output of 1.
  double width_scale = 150.0;

  static constexpr std::size_t kStages = 8;
  static constexpr std::array<bool, 4> kPoolAfterDown{false, true, true, false};

  void validate() const {
    if (channels.size() != kStages) throw std::invalid_argument("ModelSpec: channels must list 8 widths");
    for (int c : channels) {
      if (c < 1) throw std::invalid_argument("ModelSpec: channel widths must be positive");
    }
    if (input_rows < 4 || input_cols < 4 || input_rows % 4 || input_cols % 4) {
      throw std::invalid_argument("ModelSpec: input extent must be a positive multiple of 4");
    }
    auto odd = [](int k) { return k >= 1 && k % 2 == 1; };
    for (int k : down_kernels) {
      if (!odd(k)) throw std::invalid_argument("ModelSpec: kernels must be odd");
    }
    for (int k : dilated_kernels) {
      if (!odd(k)) throw std::invalid_argument("ModelSpec: kernels must be odd");
    }
    for (int d : dilations) {
      if (d < 1) throw std::invalid_argument("ModelSpec: dilation must be >= 1");
    }
    if (!odd(up_kernel) || !odd(sam_kernel)) throw std::invalid_argument("ModelSpec: kernels must be odd");
    if (!(depth_scale > 0.0)) throw std::invalid_argument("ModelSpec: depth_scale must be positive");
    if (!(width_scale > 0.0 && width_scale <= 150.0)) throw std::invalid_argument("ModelSpec: width_scale outside (0, 150]");
  }

  bool sam_after(std::size_t stage) const {
    switch (sam) {
      case SamPlacement::none: return false;
      case SamPlacement::down: return stage < 4;
      case SamPlacement::up: return stage >= 6;
      case SamPlacement::all: return true;
    }
    return false;
  }

  std::map<std::string, std::string> to_map() const {
    auto join = [](auto const& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    auto real = [](double v) {
      std::ostringstream o;
      o.precision(17);
      o << v;
      return o.str();
    };
    return {{"input_rows", std::to_string(input_rows)},
            {"input_cols", std::to_string(input_cols)},
            {"down_kernels", join(down_kernels)},
            {"dilated_kernels", join(dilated_kernels)},
            {"dilations", join(dilations)},
            {"up_kernel", std::to_string(up_kernel)},
            {"channels", join(channels)},
            {"sam", std::string(to_string(sam))},
            {"sam_kernel", std::to_string(sam_kernel)},
            {"depth_scale", real(depth_scale)},
            {"width_scale", real(width_scale)}};
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : to_map()) out += k + " = " + v + "\n";
    return out;
  }

  static ModelSpec from_text(std::string_view text) {
    std::map<std::string, std::string> kv;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return from_map(kv);
  }

  static ModelSpec from_map(const std::map<std::string, std::string>& kv) {
    auto ints = [](const std::string& s) {
      std::vector<int> v;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) v.push_back(std::stoi(item));
      return v;
    };
    auto copy_fixed = [&](auto& dst, const std::string& s, const char* key) {
      const auto v = ints(s);
      if (v.size() != dst.size()) throw std::invalid_argument(std::string("ModelSpec: wrong arity for ") + key);
      std::copy(v.begin(), v.end(), dst.begin());
    };
    ModelSpec spec;
    for (const auto& [k, v] : kv) {
      if (k == "input_rows") spec.input_rows = std::stoi(v);
      else if (k == "input_cols") spec.input_cols = std::stoi(v);
      else if (k == "down_kernels") copy_fixed(spec.down_kernels, v, "down_kernels");
      else if (k == "dilated_kernels") copy_fixed(spec.dilated_kernels, v, "dilated_kernels");
      else if (k == "dilations") copy_fixed(spec.dilations, v, "dilations");
      else if (k == "up_kernel") spec.up_kernel = std::stoi(v);
      else if (k == "channels") spec.channels = ints(v);
      else if (k == "sam") spec.sam = parse_sam_placement(v);
      else if (k == "sam_kernel") spec.sam_kernel = std::stoi(v);
      else if (k == "depth_scale") spec.depth_scale = std::stod(v);
      else if (k == "width_scale") spec.width_scale = std::stod(v);
      else throw std::invalid_argument("ModelSpec: unknown key '" + k + "'");
    }
    spec.validate();
    return spec;
  }

  friend bool operator==(const ModelSpec& a, const ModelSpec& b) { return a.to_map() == b.to_map(); }
};

/// Human-readable list of differing spec fields, empty when equal.
inline std::string spec_diff(const ModelSpec& expected, const ModelSpec& actual) {
  const auto a = expected.to_map();
  const auto b = actual.to_map();
  std::string out;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    const std::string other = it == b.end() ? "<missing>" : it->second;
    if (other != v) out += k + ": expected " + v + ", found " + other + "\n";
  }
  return out;
}

/// Per-image normalization: subtract the mean depth, scale, clip to [-1, 1].
template <typename T>
nn::Tensor3<T> normalize_depth(const Grid<double>& depth, double scale) {
  nn::Tensor3<T> x(1, static_cast<int>(depth.rows()), static_cast<int>(depth.cols()));
  const double mean = std::accumulate(depth.begin(), depth.end(), 0.0) / static_cast<double>(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    x.data[i] = static_cast<T>(std::clamp((depth[i] - mean) * scale, -1.0, 1.0));
  }
  return x;
}

template <typename T>
using Gradients = std::vector<nn::Buffer<T>>;

/// Named view of one trainable tensor.
template <typename T>
struct ParamBlock {
  std::string name;
  std::span<T> values;
};

template <typename T>
class Model {
 public:
  using Op = std::variant<nn::Conv2d<T>, nn::TransposedConv2d<T>>;

  struct Stage {
    std::string name;
    Op op;
    bool pool = false;
    std::optional<nn::SpatialAttention<T>> sam;
  };

  /// Intermediate values recorded by a training forward pass.
  struct Tape {
    struct StageRecord {
      std::variant<typename nn::Conv2d<T>::Cache, typename nn::TransposedConv2d<T>::Cache> op;
      std::vector<std::uint8_t> active;
      std::vector<std::uint32_t> argmax;
      int pre_pool_rows = 0;
      int pre_pool_cols = 0;
      typename nn::SpatialAttention<T>::Cache sam;
    };
    std::vector<StageRecord> stages;
    typename nn::Conv2d<T>::Cache head;
    std::array<nn::Buffer<T>, 4> heads;
  };

  Model() = default;

  /// Deterministic fan-in-scaled uniform initialization.
  static Model build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    const auto& c = spec.channels;
    int in = 1;
    for (std::size_t i = 0; i < 4; ++i) {
      m.stages_.push_back({"down" + std::to_string(i + 1), nn::Conv2d<T>(in, c[i], spec.down_kernels[i]),
                           ModelSpec::kPoolAfterDown[i], std::nullopt});
      in = c[i];
    }
    for (std::size_t i = 0; i < 2; ++i) {
      m.stages_.push_back({"dilated" + std::to_string(i + 1),
                           nn::Conv2d<T>(in, c[4 + i], spec.dilated_kernels[i], spec.dilations[i]), false,
                           std::nullopt});
      in = c[4 + i];
    }
    for (std::size_t i = 0; i < 2; ++i) {
      m.stages_.push_back({"up" + std::to_string(i + 1), nn::TransposedConv2d<T>(in, c[6 + i], spec.up_kernel),
                           false, std::nullopt});
      in = c[6 + i];
    }
    for (std::size_t i = 0; i < m.stages_.size(); ++i) {
      if (spec.sam_after(i)) m.stages_[i].sam.emplace(spec.sam_kernel);
    }
    m.head_ = nn::Conv2d<T>(in, 4, 1);

    nn::UniformInit rng(seed);
    for (auto& s : m.stages_) {
      std::visit([&](auto& op) { op.init(rng, 6.0); }, s.op);
      if (s.sam) s.sam->conv.init(rng, 3.0);
    }
    m.head_.init(rng, 3.0);
    return m;
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<Stage>& stages() const { return stages_; }
  std::vector<Stage>& stages() { return stages_; }

  std::vector<ParamBlock<T>> blocks() {
    std::vector<ParamBlock<T>> out;
    for (auto& s : stages_) {
      std::visit(
          [&](auto& op) {
            out.push_back({s.name + ".weight", op.weight});
            out.push_back({s.name + ".bias", op.bias});
          },
          s.op);
      if (s.sam) {
        out.push_back({s.name + ".sam.weight", s.sam->conv.weight});
        out.push_back({s.name + ".sam.bias", s.sam->conv.bias});
      }
    }
    out.push_back({"head.weight", head_.weight});
    out.push_back({"head.bias", head_.bias});
    return out;
  }

  std::vector<ParamBlock<const T>> blocks() const {
    std::vector<ParamBlock<const T>> out;
    for (auto& b : const_cast<Model*>(this)->blocks()) out.push_back({b.name, b.values});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks()) n += b.values.size();
    return n;
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g;
    for (const auto& b : blocks()) g.emplace_back(b.values.size(), T{});
    return g;
  }

  /// Inference; safe to call concurrently.
  ConfigMaps forward(const Grid<double>& depth) const { return run(depth, nullptr); }

  /// Training forward pass recording the tape needed by backward().
  ConfigMaps forward(const Grid<double>& depth, Tape& tape) const { return run(depth, &tape); }

  /// Accumulates parameter gradients for the loss gradient `dmaps` into `grads`.
  void backward(const Tape& tape, const MapGradients& dmaps, Gradients<T>& grads) const {
    const int rows = spec_.input_rows;
    const int cols = spec_.input_cols;
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    nn::Tensor3<T> dhead(4, rows, cols);
    const std::array<const Grid<double>*, 4> g{&dmaps.quality, &dmaps.sin2, &dmaps.cos2, &dmaps.width};
    for (std::size_t h = 0; h < 4; ++h) {
      if (g[h]->size() != n) throw std::invalid_argument("Model::backward: gradient shape mismatch");
      const bool squash01 = h == 0 || h == 3;
      for (std::size_t i = 0; i < n; ++i) {
        const T y = tape.heads[h][i];
        const T slope = squash01 ? y * (T(1) - y) : T(1) - y * y;
        dhead.data[h * n + i] = static_cast<T>((*g[h])[i]) * slope;
      }
    }
    std::size_t block = grads.size() - 2;
    nn::Tensor3<T> d = head_.backward(dhead, tape.head, std::span(grads).subspan(block, 2), true);

    for (std::size_t si = stages_.size(); si-- > 0;) {
      const Stage& s = stages_[si];
      const auto& rec = tape.stages[si];
      if (s.sam) {
        block -= 2;
        d = s.sam->backward(d, rec.sam, std::span(grads).subspan(block, 2), true);
      }
      if (s.pool) d = nn::maxpool_backward(d, rec.argmax, rec.pre_pool_rows, rec.pre_pool_cols);
      d = nn::relu_backward(std::move(d), rec.active);
      block -= 2;
      const bool need_input = si > 0;
      d = std::visit(
          [&](const auto& op) {
            using Cache = typename std::decay_t<decltype(op)>::Cache;
            return op.backward(d, std::get<Cache>(rec.op), std::span(grads).subspan(block, 2), need_input);
          },
          s.op);
    }
  }

 private:
  ConfigMaps run(const Grid<double>& depth, Tape* tape) const {
    if (static_cast<int>(depth.rows()) != spec_.input_rows || static_cast<int>(depth.cols()) != spec_.input_cols) {
      throw std::invalid_argument("Model::forward: expected " + std::to_string(spec_.input_rows) + "x" +
                                  std::to_string(spec_.input_cols) + " input, got " + std::to_string(depth.rows()) +
                                  "x" + std::to_string(depth.cols()));
    }
    if (!std::all_of(depth.begin(), depth.end(), [](double v) { return std::isfinite(v); })) {
      throw std::invalid_argument("Model::forward: non-finite depth value");
    }
    nn::Tensor3<T> x = normalize_depth<T>(depth, spec_.depth_scale);
    if (tape) tape->stages.assign(stages_.size(), {});
    for (std::size_t si = 0; si < stages_.size(); ++si) {
      const Stage& s = stages_[si];
      auto* rec = tape ? &tape->stages[si] : nullptr;
      x = std::visit(
          [&](const auto& op) {
            using Cache = typename std::decay_t<decltype(op)>::Cache;
            if (!rec) return op.forward(x, nullptr);
            rec->op = Cache{};
            return op.forward(x, &std::get<Cache>(rec->op));
          },
          s.op);
      x = nn::relu_forward(std::move(x), rec ? &rec->active : nullptr);
      if (s.pool) {
        if (rec) {
          rec->pre_pool_rows = x.rows;
          rec->pre_pool_cols = x.cols;
        }
        x = nn::maxpool_forward(x, rec ? &rec->argmax : nullptr);
      }
      if (s.sam) x = s.sam->forward(x, rec ? &rec->sam : nullptr);
    }
    const nn::Tensor3<T> z = head_.forward(x, tape ? &tape->head : nullptr);

    const Shape shape{static_cast<std::size_t>(spec_.input_rows), static_cast<std::size_t>(spec_.input_cols)};
    ConfigMaps maps(shape, spec_.width_scale);
    const std::array<Grid<double>*, 4> out{&maps.quality, &maps.sin2, &maps.cos2, &maps.width};
    const std::size_t n = shape.area();
    for (std::size_t h = 0; h < 4; ++h) {
      const bool squash01 = h == 0 || h == 3;
      nn::Buffer<T> act(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T v = z.data[h * n + i];
        act[i] = squash01 ? nn::logistic(v) : std::tanh(v);
        (*out[h])[i] = static_cast<double>(act[i]);
      }
      if (tape) tape->heads[h] = std::move(act);
    }
    return maps;
  }

  ModelSpec spec_;
  std::vector<Stage> stages_;
  nn::Conv2d<T> head_;
};

/// Closed-form parameter count of a spec, layer by layer.
inline std::size_t expected_parameter_count(const ModelSpec& spec) {
  const auto& c = spec.channels;
  std::size_t n = 0;
  std::size_t in = 1;
  auto conv = [&](std::size_t out, std::size_t k) {
    n += out * in * k * k + out;
    in = out;
  };
  for (std::size_t i = 0; i < 4; ++i) conv(c[i], spec.down_kernels[i]);
  for (std::size_t i = 0; i < 2; ++i) conv(c[4 + i], spec.dilated_kernels[i]);
  for (std::size_t i = 0; i < 2; ++i) conv(c[6 + i], spec.up_kernel);
  n += 4 * in + 4;
  const std::size_t sam = 2 * spec.sam_kernel * spec.sam_kernel + 1;
  for (std::size_t i = 0; i < ModelSpec::kStages; ++i) {
    if (spec.sam_after(i)) n += sam;
  }
  return n;
}

}  // namespace graspml
