#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "sigprop/activation.hpp"
#include "sigprop/noise.hpp"
#include "sigprop/quadrature.hpp"

namespace sigprop {

// Weight/bias scales: per-weight variance is sigma_w^2 / fan_in, per-bias
// variance sigma_b^2.
struct InitSpec {
  double sigma_w = 1.0;
  double sigma_b = 0.0;

  bool operator==(const InitSpec&) const = default;
};

inline void validate(const InitSpec& init) {
  if (!(init.sigma_w > 0.0) || !std::isfinite(init.sigma_w))
    throw std::invalid_argument("init: sigma_w must be > 0");
  if (!(init.sigma_b >= 0.0) || !std::isfinite(init.sigma_b))
    throw std::invalid_argument("init: sigma_b must be >= 0");
}

// Layer widths D_0..D_L for a depth-L network. Widths are stored as reals:
// construction helpers produce integers (physical networks), while the
// real-valued growth schedule isolates the width-ratio recurrences from
// rounding in theory checks.
struct NetworkShape {
  std::vector<double> widths;

  int depth() const { return static_cast<int>(widths.size()) - 1; }

  static NetworkShape constant(int depth, int width) {
    if (depth < 1 || width < 1)
      throw std::invalid_argument("shape: depth and width must be >= 1");
    return {std::vector<double>(static_cast<std::size_t>(depth) + 1,
                                static_cast<double>(width))};
  }

  // Widths growing by the noise second moment: D_{l+1} = ceil(factor * D_l).
  static NetworkShape growth(int depth, int width0, double factor) {
    if (depth < 1 || width0 < 1 || !(factor > 0.0))
      throw std::invalid_argument("shape: bad growth schedule");
    NetworkShape shape;
    shape.widths.reserve(static_cast<std::size_t>(depth) + 1);
    double w = static_cast<double>(width0);
    shape.widths.push_back(w);
    for (int l = 0; l < depth; ++l) {
      w = std::ceil(w * factor);
      shape.widths.push_back(w);
    }
    return shape;
  }

  // Exact real-valued growth, for recurrence checks free of rounding.
  static NetworkShape growth_real(int depth, double width0, double factor) {
    if (depth < 1 || !(width0 >= 1.0) || !(factor > 0.0))
      throw std::invalid_argument("shape: bad growth schedule");
    NetworkShape shape;
    shape.widths.reserve(static_cast<std::size_t>(depth) + 1);
    double w = width0;
    shape.widths.push_back(w);
    for (int l = 0; l < depth; ++l) {
      w *= factor;
      shape.widths.push_back(w);
    }
    return shape;
  }

  bool operator==(const NetworkShape&) const = default;
};

inline void validate(const NetworkShape& shape) {
  if (shape.widths.size() < 2)
    throw std::invalid_argument("shape: need at least input and one layer");
  for (double w : shape.widths)
    if (!(w >= 1.0) || !std::isfinite(w))
      throw std::invalid_argument("shape: widths must be >= 1");
}

// A per-layer sequence of one statistic. values[i] belongs to layer
// first_layer + i: forward traces start at layer 0, the error-variance
// recursion covers layers 1..L, and the error-covariance recursion covers
// layers 0..L-1 (its width ratio looks two layers ahead).
struct LayerTrace {
  enum class Kind { Variance, Correlation, ErrorVariance, ErrorCovariance };

  Kind kind = Kind::Variance;
  std::vector<double> values;
  int first_layer = 0;
  double initial = 0.0;

  int layer_of(std::size_t index) const {
    return first_layer + static_cast<int>(index);
  }

  bool operator==(const LayerTrace&) const = default;
};

struct FixedPointResult {
  double value = 0.0;
  double residual = 0.0;
  long iterations = 0;
  bool converged = false;
  // Set when the map is the identity (every point fixed); value then reports
  // the iteration start.
  bool marginal = false;
};

struct DepthScaleFit {
  double slope = 0.0;
  double intercept = 0.0;
  double xi = 0.0;  // -1/slope
  double r_squared = 0.0;
  int first_layer_used = 0;
  int last_layer_used = 0;
  int n_points = 0;
};

// Raised when no critical initialisation exists for a noise family.
struct NoCriticalInit : std::domain_error {
  using std::domain_error::domain_error;
};

// Raised when a depth-scale fit has too few admissible points.
struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kFixedPointTol = 1e-12;
inline constexpr long kFixedPointMaxIter = 100'000;
inline constexpr double kDivergenceCutoff = 1e300;
inline constexpr double kOverflowK = 3.4028235e38;
inline constexpr double kUnderflowK = 1.1754944e-38;

// One application of the variance map: the noisy second moment of a layer's
// pre-activations given the previous layer's. Multiplicative noise scales
// the activation moment by mu2, additive noise shifts it by mu2.
inline double variance_step(double q_prev, const InitSpec& init,
                            const NoiseSpec& noise, const Activation& act,
                            const QuadratureRule& rule = default_rule()) {
  if (q_prev < 0.0) throw std::domain_error("variance must be >= 0");
  validate(init);
  const double moment = gauss_moment_phi_sq(act, q_prev, rule);
  const double sw2 = init.sigma_w * init.sigma_w;
  const double sb2 = init.sigma_b * init.sigma_b;
  switch (noise.mode) {
    case NoiseMode::None:
      return sw2 * moment + sb2;
    case NoiseMode::Multiplicative:
      return sw2 * moment * second_moment(noise) + sb2;
    case NoiseMode::Additive:
      return sw2 * (moment + second_moment(noise)) + sb2;
  }
  throw std::logic_error("unreachable");
}

inline LayerTrace variance_trace(double q0, int depth, const InitSpec& init,
                                 const NoiseSpec& noise, const Activation& act,
                                 const QuadratureRule& rule = default_rule()) {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (q0 < 0.0) throw std::domain_error("variance must be >= 0");
  LayerTrace trace;
  trace.kind = LayerTrace::Kind::Variance;
  trace.first_layer = 0;
  trace.initial = q0;
  trace.values.reserve(static_cast<std::size_t>(depth) + 1);
  trace.values.push_back(q0);
  double q = q0;
  for (int l = 0; l < depth; ++l) {
    if (!std::isfinite(q)) {
      trace.values.push_back(q);
      continue;
    }
    q = variance_step(q, init, noise, act, rule);
    trace.values.push_back(q);
  }
  return trace;
}

namespace detail {

// Slope/intercept of the rectifier variance map q -> a q + b.
inline std::pair<double, double> rectifier_affine(const InitSpec& init,
                                                  const NoiseSpec& noise,
                                                  const Activation& act) {
  const double sw2 = init.sigma_w * init.sigma_w;
  const double sb2 = init.sigma_b * init.sigma_b;
  const double gain = (1.0 + act.alpha() * act.alpha()) / 2.0;
  const double mu2 = second_moment(noise);
  double slope = sw2 * gain;
  double intercept = sb2;
  if (noise.mode == NoiseMode::Multiplicative) slope *= mu2;
  if (noise.mode == NoiseMode::Additive) intercept += sw2 * mu2;
  return {slope, intercept};
}

}  // namespace detail

// Iterates the variance map from q=1. The rectifier map is affine, so the
// identity case (slope 1, intercept 0) is detected analytically and reported
// as marginal: every starting point is a fixed point.
inline FixedPointResult variance_fixed_point(
    const InitSpec& init, const NoiseSpec& noise, const Activation& act,
    const QuadratureRule& rule = default_rule()) {
  validate(init);
  validate(noise);
  if (act.rectifier()) {
    const auto [slope, intercept] = detail::rectifier_affine(init, noise, act);
    if (std::abs(slope - 1.0) <= kFixedPointTol && intercept == 0.0)
      return {1.0, 0.0, 0, true, true};
  }
  double q = 1.0;
  for (long it = 1; it <= kFixedPointMaxIter; ++it) {
    const double next = variance_step(q, init, noise, act, rule);
    const double residual = std::abs(next - q);
    if (!std::isfinite(next) || next > kDivergenceCutoff)
      return {next, residual, it, false, false};
    if (residual <= kFixedPointTol * std::max(1.0, std::abs(next)))
      return {next, residual, it, true, false};
    q = next;
  }
  return {q, std::abs(variance_step(q, init, noise, act, rule) - q),
          kFixedPointMaxIter, false, false};
}

// The initialisation that makes the rectifier variance map the identity:
// sigma_w = sqrt(2 / (mu2 (1 + alpha^2))), sigma_b = 0. Zero-mean additive
// noise adds a constant to the map and shifts its fixed point away from the
// identity line for every sigma_w, so no critical tuple exists.
inline InitSpec critical_init(const NoiseSpec& noise, const Activation& act) {
  validate(noise);
  if (!act.rectifier())
    throw std::invalid_argument(
        "critical_init: only rectifier activations admit the identity-map "
        "condition");
  if (noise.mode == NoiseMode::Additive && second_moment(noise) > 0.0)
    throw NoCriticalInit(
        "no critical initialisation exists under zero-mean additive noise: "
        "the variance map gains a constant offset sigma_w^2 mu2 that no "
        "(sigma_w, sigma_b) pair can cancel");
  const double mu2 =
      noise.mode == NoiseMode::Multiplicative ? second_moment(noise) : 1.0;
  return {std::sqrt(2.0 / (mu2 * (1.0 + act.alpha() * act.alpha()))), 0.0};
}

// Closed-form correlation map of a critically initialised ReLU network under
// multiplicative noise with second moment mu2.
inline double correlation_step_relu_critical(double c_prev, double mu2) {
  if (!(mu2 >= 1.0))
    throw std::domain_error("mu2 must be >= 1");
  const double c = clamp_correlation(c_prev);
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  return ((c * std::asin(c) + s) / std::numbers::pi + 0.5 * c) / mu2;
}

struct CorrelationStep {
  double c = 0.0;
  double q_aa = 0.0;
  double q_bb = 0.0;
};

// Advances a pair of signals one layer: both variances through the variance
// map and the covariance through the cross moment. Independent noise has
// mean 1 (or 0 additive), so it cancels from the cross term and enters only
// through the variances.
inline CorrelationStep correlation_step_general(
    double c_prev, double q_aa_prev, double q_bb_prev, const InitSpec& init,
    const NoiseSpec& noise, const Activation& act,
    const QuadratureRule& rule = default_rule(),
    MomentPath path = MomentPath::Auto) {
  const double c = clamp_correlation(c_prev);
  CorrelationStep next;
  next.q_aa = variance_step(q_aa_prev, init, noise, act, rule);
  next.q_bb = variance_step(q_bb_prev, init, noise, act, rule);
  const double sw2 = init.sigma_w * init.sigma_w;
  const double sb2 = init.sigma_b * init.sigma_b;
  const double q_ab =
      sw2 * gauss_cross_moment(act, q_aa_prev, q_bb_prev, c, rule, false,
                               path) +
      sb2;
  const double denom = std::sqrt(next.q_aa * next.q_bb);
  next.c = denom > 0.0 ? clamp_correlation(q_ab / denom, 1e-9) : 0.0;
  return next;
}

// Fixed point of the critical ReLU correlation map. The map is a contraction
// on [0, 1] for mu2 > 1; for mu2 = 1 the fixed point is the endpoint c = 1,
// where the slope is exactly 1, reported as marginal.
inline FixedPointResult correlation_fixed_point(double mu2) {
  if (!(mu2 >= 1.0))
    throw std::domain_error("mu2 must be >= 1");
  if (mu2 == 1.0) return {1.0, 0.0, 0, true, true};
  double c = 0.5;
  for (long it = 1; it <= kFixedPointMaxIter; ++it) {
    const double next = correlation_step_relu_critical(c, mu2);
    const double residual = std::abs(next - c);
    if (residual <= kFixedPointTol) return {next, residual, it, true, false};
    c = next;
  }
  return {c, std::abs(correlation_step_relu_critical(c, mu2) - c),
          kFixedPointMaxIter, false, false};
}

// Slope of the critical ReLU correlation map at its fixed point.
inline double chi(double c_star, double mu2) {
  if (!(mu2 >= 1.0))
    throw std::domain_error("mu2 must be >= 1");
  const double c = clamp_correlation(c_star);
  return (std::asin(c) + std::numbers::pi / 2.0) / (mu2 * std::numbers::pi);
}

// Number of layers over which correlation differences shrink by a factor e.
// Diverges at mu2 = 1, where the fixed point sits at 1 with unit slope and
// convergence is no longer exponential.
inline double depth_scale(double mu2) {
  if (!(mu2 >= 1.0))
    throw std::domain_error("mu2 must be >= 1");
  if (mu2 == 1.0) return std::numeric_limits<double>::infinity();
  const double c_star = correlation_fixed_point(mu2).value;
  return -1.0 / std::log(chi(c_star, mu2));
}

// Backward error-variance recursion from a seed at the top layer:
// q_delta^l = q_delta^{l+1} (D_{l+1}/D_l) sigma_w^2 E[dphi(sqrt(q^l) Z)^2],
// evaluated for layers L-1 down to 1 with the forward variances supplying
// the gate argument. Result covers layers 1..L.
inline LayerTrace backprop_variance_trace(
    const NetworkShape& shape, const InitSpec& init, const NoiseSpec& noise,
    const Activation& act, const LayerTrace& forward, double q_delta_top,
    const QuadratureRule& rule = default_rule()) {
  validate(shape);
  validate(init);
  validate(noise);
  (void)noise;  // enters only through the forward variances
  if (!(q_delta_top > 0.0))
    throw std::invalid_argument("q_delta_top must be > 0");
  const int depth = shape.depth();
  if (forward.first_layer != 0 ||
      static_cast<int>(forward.values.size()) != depth + 1)
    throw std::invalid_argument(
        "forward trace must cover layers 0..depth of the shape");
  const double sw2 = init.sigma_w * init.sigma_w;
  LayerTrace trace;
  trace.kind = LayerTrace::Kind::ErrorVariance;
  trace.first_layer = 1;
  trace.initial = q_delta_top;
  trace.values.assign(static_cast<std::size_t>(depth), 0.0);
  trace.values.back() = q_delta_top;
  double q_delta = q_delta_top;
  for (int l = depth - 1; l >= 1; --l) {
    const double gate = gauss_moment_dphi_sq(
        act, forward.values[static_cast<std::size_t>(l)], rule);
    const double ratio = shape.widths[static_cast<std::size_t>(l) + 1] /
                         shape.widths[static_cast<std::size_t>(l)];
    q_delta *= ratio * sw2 * gate;
    trace.values[static_cast<std::size_t>(l - 1)] = q_delta;
  }
  return trace;
}

// Backward error-covariance recursion: each step multiplies by
// (D_{l+1}/D_{l+2}) chi. The look-ahead width index ends the trace one layer
// early; the seed sits at layer L-1 and the recursion fills L-2 down to 0.
inline LayerTrace backprop_covariance_trace(const NetworkShape& shape,
                                            double chi_value,
                                            double q_ab_delta_top) {
  validate(shape);
  if (!(chi_value > 0.0 && chi_value <= 1.0))
    throw std::domain_error("chi must be in (0, 1]");
  const int depth = shape.depth();
  if (depth < 2)
    throw std::invalid_argument(
        "covariance recursion needs depth >= 2 for its two-layer look-ahead");
  LayerTrace trace;
  trace.kind = LayerTrace::Kind::ErrorCovariance;
  trace.first_layer = 0;
  trace.initial = q_ab_delta_top;
  trace.values.assign(static_cast<std::size_t>(depth), 0.0);
  trace.values.back() = q_ab_delta_top;
  double q = q_ab_delta_top;
  for (int l = depth - 2; l >= 0; --l) {
    const double ratio = shape.widths[static_cast<std::size_t>(l) + 1] /
                         shape.widths[static_cast<std::size_t>(l) + 2];
    q *= ratio * chi_value;
    trace.values[static_cast<std::size_t>(l)] = q;
  }
  return trace;
}

// Depth at which off-critical rectifier variance growth crosses the
// representable bound K: the smallest L with (sigma_w^2 mu2 / 2)^L q0
// outside [K_under, K_over]. Defaults pick the 32-bit float bound on the
// side the growth factor moves toward. Fractional; round up for the first
// unstable layer.
inline double overflow_depth(const InitSpec& init, const NoiseSpec& noise,
                             double q0,
                             double K = std::numeric_limits<double>::quiet_NaN()) {
  validate(init);
  if (!(q0 > 0.0)) throw std::domain_error("q0 must be > 0");
  const double mu2 =
      noise.mode == NoiseMode::Multiplicative ? second_moment(noise) : 1.0;
  const double growth = init.sigma_w * init.sigma_w * mu2 / 2.0;
  if (growth == 1.0) return std::numeric_limits<double>::infinity();
  if (std::isnan(K)) K = growth > 1.0 ? kOverflowK : kUnderflowK;
  if (!(K > 0.0)) throw std::domain_error("K must be > 0");
  return std::log(K / q0) / std::log(growth);
}

// Least-squares line through (l, ln|c^l - c_star|) over admissible layers:
// layer 0 is dropped, and the window ends once the difference falls to the
// floor (default: the floating-point floor; simulated traces pass their
// plateau noise level instead).
inline DepthScaleFit fit_depth_scale(const LayerTrace& trace, double c_star,
                                     double floor = 1e-10) {
  if (!std::isfinite(c_star))
    throw std::invalid_argument("c_star must be finite");
  std::vector<std::pair<int, double>> pts;
  for (std::size_t i = 0; i < trace.values.size(); ++i) {
    const int layer = trace.layer_of(i);
    if (layer < 1) continue;
    const double diff = std::abs(trace.values[i] - c_star);
    if (diff <= floor) break;
    pts.emplace_back(layer, std::log(diff));
  }
  if (pts.size() < 3)
    throw FitError("depth-scale fit needs >= 3 admissible layers, got " +
                   std::to_string(pts.size()));
  const double n = static_cast<double>(pts.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += static_cast<double>(x) * x;
    sxy += x * y;
  }
  DepthScaleFit fit;
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / n;
  fit.xi = -1.0 / fit.slope;
  double ss_res = 0.0, ss_tot = 0.0;
  const double y_mean = sy / n;
  for (const auto& [x, y] : pts) {
    const double r = y - (fit.slope * x + fit.intercept);
    ss_res += r * r;
    ss_tot += (y - y_mean) * (y - y_mean);
  }
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  fit.first_layer_used = pts.front().first;
  fit.last_layer_used = pts.back().first;
  fit.n_points = static_cast<int>(pts.size());
  return fit;
}

// Iterates the critical correlation map itself, for comparing against
// simulated correlation dynamics.
inline LayerTrace correlation_trace_relu_critical(double c0, int depth,
                                                  double mu2) {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  LayerTrace trace;
  trace.kind = LayerTrace::Kind::Correlation;
  trace.first_layer = 0;
  trace.initial = c0;
  trace.values.reserve(static_cast<std::size_t>(depth) + 1);
  double c = clamp_correlation(c0);
  trace.values.push_back(c);
  for (int l = 0; l < depth; ++l) {
    c = correlation_step_relu_critical(c, mu2);
    trace.values.push_back(c);
  }
  return trace;
}

}  // namespace sigprop
