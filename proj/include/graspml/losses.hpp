#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "graspml/config_maps.hpp"
#include "graspml/geometry.hpp"

namespace graspml {

/// Lower clamp applied to qualities before they enter the categorical distribution.
inline constexpr double kQualityEps = 1e-6;
/// Guard inside the logarithms of the log-MSE variant.
inline constexpr double kLogMseDelta = 1e-8;

struct LossValue {
  double total = 0.0;
  double pixel_term = 0.0;
  double angle_term = 0.0;
  double width_term = 0.0;

  LossValue& operator+=(const LossValue& o) {
    total += o.total;
    pixel_term += o.pixel_term;
    angle_term += o.angle_term;
    width_term += o.width_term;
    return *this;
  }
  LossValue& operator*=(double s) {
    total *= s;
    pixel_term *= s;
    angle_term *= s;
    width_term *= s;
    return *this;
  }
};

enum class LossKind { mlgsl, img_mse, mlgsl_log, pix_mse };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::mlgsl: return "mlgsl";
    case LossKind::img_mse: return "img_mse";
    case LossKind::mlgsl_log: return "mlgsl_log";
    case LossKind::pix_mse: return "pix_mse";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "mlgsl") return LossKind::mlgsl;
  if (s == "img_mse") return LossKind::img_mse;
  if (s == "mlgsl_log") return LossKind::mlgsl_log;
  if (s == "pix_mse") return LossKind::pix_mse;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "'");
}

namespace detail {

inline double clamp_quality(double q) { return std::clamp(q, kQualityEps, 1.0); }
inline double clamp_slope(double q) { return (q > kQualityEps && q < 1.0) ? 1.0 : 0.0; }

inline double quality_normalizer(const Grid<double>& q) {
  double z = 0.0;
  for (double v : q) z += clamp_quality(v);
  return z;
}

inline void check_labels(const ConfigMaps& pred, std::span<const Grasp> labels, const char* who) {
  if (labels.empty()) throw std::invalid_argument(std::string(who) + ": empty label list");
  require_same_shape(pred.quality, pred.sin2, who);
  require_same_shape(pred.quality, pred.cos2, who);
  require_same_shape(pred.quality, pred.width, who);
}

inline void reset(MapGradients* grad, Shape s) {
  if (grad) *grad = MapGradients(s);
}

// Shared body of the two likelihood losses; `log_regression` selects log(MSE + delta).
inline LossValue likelihood_loss(const ConfigMaps& pred, std::span<const Grasp> labels, MapGradients* grad,
                                 bool log_regression, const char* who) {
  check_labels(pred, labels, who);
  const Shape shape = pred.shape();
  reset(grad, shape);
  const auto targets = encode_labels_sparse(labels, shape, pred.width_scale);
  const double z = quality_normalizer(pred.quality);

  LossValue v;
  for (const auto& t : targets) {
    const double q = clamp_quality(pred.quality[t.index]);
    v.pixel_term -= std::log(q) - std::log(z);

    const double ds = pred.sin2[t.index] - t.sin2;
    const double dc = pred.cos2[t.index] - t.cos2;
    const double dw = pred.width[t.index] - t.width;
    const double mse_phi = ds * ds + dc * dc;
    const double mse_w = dw * dw;
    if (log_regression) {
      v.angle_term += std::log(mse_phi + kLogMseDelta);
      v.width_term += std::log(mse_w + kLogMseDelta);
    } else {
      v.angle_term += mse_phi;
      v.width_term += mse_w;
    }
    if (grad) {
      grad->quality[t.index] -= clamp_slope(pred.quality[t.index]) / q;
      const double sa = log_regression ? 1.0 / (mse_phi + kLogMseDelta) : 1.0;
      const double sw = log_regression ? 1.0 / (mse_w + kLogMseDelta) : 1.0;
      grad->sin2[t.index] += 2.0 * ds * sa;
      grad->cos2[t.index] += 2.0 * dc * sa;
      grad->width[t.index] += 2.0 * dw * sw;
    }
  }
  if (grad) {
    const double per = static_cast<double>(targets.size()) / z;
    for (std::size_t j = 0; j < pred.quality.size(); ++j) grad->quality[j] += per * clamp_slope(pred.quality[j]);
  }
  v.total = v.pixel_term + v.angle_term + v.width_term;
  return v;
}

}  // namespace detail

/// log P(p | Q) under the categorical distribution proportional to the clamped qualities.
inline double pixel_log_likelihood(const Grid<double>& quality, std::size_t pixel) {
  if (pixel >= quality.size()) throw std::out_of_range("pixel_log_likelihood: pixel index out of bounds");
  return std::log(detail::clamp_quality(quality[pixel])) - std::log(detail::quality_normalizer(quality));
}

/// Maximum likelihood grasp sampling loss: summed over labels, supervising regression
/// heads only at labeled pixels.
inline LossValue mlgsl(const ConfigMaps& pred, std::span<const Grasp> labels, MapGradients* grad = nullptr) {
  return detail::likelihood_loss(pred, labels, grad, false, "mlgsl");
}

/// Variant with logarithms of the regression errors.
inline LossValue mlgsl_log(const ConfigMaps& pred, std::span<const Grasp> labels, MapGradients* grad = nullptr) {
  return detail::likelihood_loss(pred, labels, grad, true, "mlgsl_log");
}

/// Squared errors at labeled pixels only, with target quality 1.
inline LossValue pix_mse(const ConfigMaps& pred, std::span<const Grasp> labels, MapGradients* grad = nullptr) {
  detail::check_labels(pred, labels, "pix_mse");
  detail::reset(grad, pred.shape());
  LossValue v;
  for (const auto& t : encode_labels_sparse(labels, pred.shape(), pred.width_scale)) {
    const double dq = pred.quality[t.index] - 1.0;
    const double ds = pred.sin2[t.index] - t.sin2;
    const double dc = pred.cos2[t.index] - t.cos2;
    const double dw = pred.width[t.index] - t.width;
    v.pixel_term += dq * dq;
    v.angle_term += ds * ds + dc * dc;
    v.width_term += dw * dw;
    if (grad) {
      grad->quality[t.index] += 2.0 * dq;
      grad->sin2[t.index] += 2.0 * ds;
      grad->cos2[t.index] += 2.0 * dc;
      grad->width[t.index] += 2.0 * dw;
    }
  }
  v.total = v.pixel_term + v.angle_term + v.width_term;
  return v;
}

/// Image-wise MSE against densified targets: per-grid mean squared error, summed over the
/// quality, sin, cos and width grids.
inline LossValue img_mse(const ConfigMaps& pred, const ConfigMaps& dense, MapGradients* grad = nullptr) {
  require_same_shape(pred.quality, dense.quality, "img_mse");
  require_same_shape(pred.sin2, dense.sin2, "img_mse");
  require_same_shape(pred.cos2, dense.cos2, "img_mse");
  require_same_shape(pred.width, dense.width, "img_mse");
  if (pred.width_scale != dense.width_scale) throw std::invalid_argument("img_mse: width scales differ");
  detail::reset(grad, pred.shape());
  const double n = static_cast<double>(pred.quality.size());
  auto term = [&](const Grid<double>& p, const Grid<double>& d, Grid<double>* g) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double e = p[i] - d[i];
      s += e * e;
      if (g) (*g)[i] = 2.0 * e / n;
    }
    return s / n;
  };
  LossValue v;
  v.pixel_term = term(pred.quality, dense.quality, grad ? &grad->quality : nullptr);
  v.angle_term = term(pred.sin2, dense.sin2, grad ? &grad->sin2 : nullptr) +
                 term(pred.cos2, dense.cos2, grad ? &grad->cos2 : nullptr);
  v.width_term = term(pred.width, dense.width, grad ? &grad->width : nullptr);
  v.total = v.pixel_term + v.angle_term + v.width_term;
  return v;
}

/// Dispatches on the loss kind. `dense` is required for the image-wise baseline only.
inline LossValue evaluate_loss(LossKind kind, const ConfigMaps& pred, std::span<const Grasp> labels,
                               const ConfigMaps* dense, MapGradients* grad = nullptr) {
  switch (kind) {
    case LossKind::mlgsl: return mlgsl(pred, labels, grad);
    case LossKind::mlgsl_log: return mlgsl_log(pred, labels, grad);
    case LossKind::pix_mse: return pix_mse(pred, labels, grad);
    case LossKind::img_mse:
      if (!dense) throw std::invalid_argument("img_mse requires dense targets");
      return img_mse(pred, *dense, grad);
  }
  throw std::logic_error("unreachable loss kind");
}

}  // namespace graspml
