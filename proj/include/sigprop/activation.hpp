#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sigprop/format.hpp"
#include "sigprop/quadrature.hpp"

namespace sigprop {

// Clamps a correlation to [-1, 1], tolerating |c| <= 1 + slack of numerical
// overshoot; anything beyond that is a caller error.
inline double clamp_correlation(double c, double slack = 1e-12) {
  if (std::abs(c) > 1.0 + slack)
    throw std::domain_error("correlation out of [-1, 1]: " + format_double(c));
  return std::clamp(c, -1.0, 1.0);
}

// Pointwise nonlinearity phi and derivative dphi. Rectifiers take the
// subgradient convention dphi(0) = 0 (measure zero under the Gaussian) and
// declare their kink so quadrature can split the domain there; tanh and
// kink-free custom activations integrate on plain Gauss-Hermite.
class Activation {
 public:
  enum class Kind { ReLU, PReLU, Tanh, Custom };

  static Activation relu() { return Activation(Kind::ReLU, 0.0); }
  static Activation prelu(double alpha) {
    if (!std::isfinite(alpha))
      throw std::invalid_argument("prelu: slope must be finite");
    return Activation(Kind::PReLU, alpha);
  }
  static Activation tanh() { return Activation(Kind::Tanh, 0.0); }
  static Activation custom(std::function<double(double)> phi,
                           std::function<double(double)> dphi,
                           std::vector<double> kinks = {}) {
    Activation act(Kind::Custom, 0.0);
    act.phi_ = std::move(phi);
    act.dphi_ = std::move(dphi);
    act.kinks_ = std::move(kinks);
    return act;
  }

  Kind kind() const { return kind_; }
  double alpha() const { return alpha_; }
  bool rectifier() const {
    return kind_ == Kind::ReLU || kind_ == Kind::PReLU;
  }

  double phi(double u) const {
    switch (kind_) {
      case Kind::ReLU:
        return u > 0.0 ? u : 0.0;
      case Kind::PReLU:
        return u > 0.0 ? u : alpha_ * u;
      case Kind::Tanh:
        return std::tanh(u);
      case Kind::Custom:
        return phi_(u);
    }
    throw std::logic_error("unreachable");
  }

  double dphi(double u) const {
    switch (kind_) {
      case Kind::ReLU:
        return u > 0.0 ? 1.0 : 0.0;
      case Kind::PReLU:
        return u > 0.0 ? 1.0 : (u < 0.0 ? alpha_ : 0.0);
      case Kind::Tanh: {
        const double t = std::tanh(u);
        return 1.0 - t * t;
      }
      case Kind::Custom:
        return dphi_(u);
    }
    throw std::logic_error("unreachable");
  }

  // Locations where phi or dphi is non-smooth, in pre-activation units.
  const std::vector<double>& kinks() const { return kinks_; }

 private:
  Activation(Kind kind, double alpha) : kind_(kind), alpha_(alpha) {
    if (kind_ == Kind::ReLU || kind_ == Kind::PReLU) kinks_ = {0.0};
  }

  Kind kind_;
  double alpha_;
  std::function<double(double)> phi_;
  std::function<double(double)> dphi_;
  std::vector<double> kinks_;
};

inline std::string format_activation(const Activation& act) {
  switch (act.kind()) {
    case Activation::Kind::ReLU:
      return "relu";
    case Activation::Kind::PReLU:
      return "prelu(" + format_double(act.alpha()) + ")";
    case Activation::Kind::Tanh:
      return "tanh";
    case Activation::Kind::Custom:
      return "custom";
  }
  throw std::logic_error("unreachable");
}

inline Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::relu();
  if (text == "tanh") return Activation::tanh();
  if (text.starts_with("prelu(") && text.ends_with(")"))
    return Activation::prelu(
        parse_double(text.substr(6, text.size() - 7)));
  throw std::invalid_argument("activation '" + std::string(text) +
                              "': expected relu, prelu(<slope>), or tanh");
}

// Chooses between analytic rectifier moments and numerical integration.
enum class MomentPath { Auto, Quadrature };

namespace detail {

// E[phi(u1) phi(u2)] / sqrt(qaa qbb) for a standard bivariate rectifier pair
// at correlation c, positive-part piece: the same kernel builds the ReLU and
// PReLU cross moments by quadrant decomposition.
inline double rect_quadrant_kernel(double c) {
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  return (s + c * (std::numbers::pi / 2.0 + std::asin(std::clamp(c, -1.0, 1.0)))) /
         (2.0 * std::numbers::pi);
}

template <class G>
double moment_1d(const Activation& act, G&& g, double q,
                 const QuadratureRule& rule) {
  const double a = std::sqrt(q);
  auto f = [&](double z) {
    const double v = g(a * z);
    return v * v;
  };
  if (act.kinks().empty()) return rule.expect(f);
  if (a == 0.0) {
    const double v = g(0.0);
    return v * v;
  }
  std::vector<double> cuts;
  cuts.reserve(act.kinks().size());
  for (double k : act.kinks()) cuts.push_back(k / a);
  return normal_expect_piecewise(f, cuts);
}

}  // namespace detail

// E[phi(sqrt(q) Z)^2], Z ~ N(0,1). Rectifiers have the exact value
// q (1 + alpha^2) / 2; other activations integrate numerically.
inline double gauss_moment_phi_sq(const Activation& act, double q,
                                  const QuadratureRule& rule = default_rule(),
                                  MomentPath path = MomentPath::Auto) {
  if (q < 0.0) throw std::domain_error("variance must be >= 0");
  if (path == MomentPath::Auto && act.rectifier())
    return q * (1.0 + act.alpha() * act.alpha()) / 2.0;
  return detail::moment_1d(act, [&](double u) { return act.phi(u); }, q, rule);
}

// E[dphi(sqrt(q) Z)^2]; (1 + alpha^2) / 2 for rectifiers, q-independent.
inline double gauss_moment_dphi_sq(const Activation& act, double q,
                                   const QuadratureRule& rule = default_rule(),
                                   MomentPath path = MomentPath::Auto) {
  if (q < 0.0) throw std::domain_error("variance must be >= 0");
  if (path == MomentPath::Auto && act.rectifier())
    return (1.0 + act.alpha() * act.alpha()) / 2.0;
  return detail::moment_1d(act, [&](double u) { return act.dphi(u); }, q, rule);
}

// Nested expectation E[g(u1) g(u2)] with u1 = sqrt(qaa) z1 and
// u2 = sqrt(qbb) (c z1 + sqrt(1-c^2) z2), g = phi or dphi. Closed forms for
// rectifiers; otherwise the outer/inner integrals use the quadrature rule,
// with kink-declaring activations integrated piecewise so the accuracy does
// not collapse at the kink lines (which are never aligned with tensor-product
// nodes for general c).
inline double gauss_cross_moment(const Activation& act, double q_aa,
                                 double q_bb, double c,
                                 const QuadratureRule& rule = default_rule(),
                                 bool use_derivative = false,
                                 MomentPath path = MomentPath::Auto) {
  if (q_aa < 0.0 || q_bb < 0.0)
    throw std::domain_error("variance must be >= 0");
  c = clamp_correlation(c);

  if (path == MomentPath::Auto && act.rectifier()) {
    const double alpha = act.alpha();
    if (use_derivative) {
      const double pos = 0.25 + std::asin(c) / (2.0 * std::numbers::pi);
      const double neg = 0.5 - pos;
      return (1.0 + alpha * alpha) * pos + 2.0 * alpha * neg;
    }
    const double scale = std::sqrt(q_aa * q_bb);
    return scale * ((1.0 + alpha * alpha) * detail::rect_quadrant_kernel(c) -
                    2.0 * alpha * detail::rect_quadrant_kernel(-c));
  }

  auto g = [&](double u) { return use_derivative ? act.dphi(u) : act.phi(u); };
  const double a = std::sqrt(q_aa);
  const double b = std::sqrt(q_bb);
  const double s2 = 1.0 - c * c;

  // Degenerate pair: u2 is a deterministic multiple of z1.
  if (s2 < 1e-14) {
    auto f = [&](double z) { return g(a * z) * g(b * (c >= 0.0 ? z : -z)); };
    if (act.kinks().empty()) return rule.expect(f);
    std::vector<double> cuts;
    for (double k : act.kinks()) {
      if (a > 0.0) cuts.push_back(k / a);
      if (b > 0.0) cuts.push_back(c >= 0.0 ? k / b : -k / b);
    }
    return normal_expect_piecewise(f, cuts);
  }

  const double s = std::sqrt(s2);
  if (act.kinks().empty()) {
    const auto& zs = rule.nodes();
    const auto& ws = rule.weights();
    double acc = 0.0;
    for (std::size_t i = 0; i < zs.size(); ++i) {
      const double u1 = a * zs[i];
      double inner = 0.0;
      for (std::size_t j = 0; j < zs.size(); ++j)
        inner += ws[j] * g(b * (c * zs[i] + s * zs[j]));
      acc += ws[i] * g(u1) * inner;
    }
    return acc;
  }

  std::vector<double> outer_cuts;
  if (a > 0.0)
    for (double k : act.kinks()) outer_cuts.push_back(k / a);
  auto outer = [&](double z1) {
    const double ga = g(a * z1);
    if (ga == 0.0) return 0.0;
    std::vector<double> inner_cuts;
    if (b > 0.0)
      for (double k : act.kinks()) inner_cuts.push_back((k / b - c * z1) / s);
    const double inner = normal_expect_piecewise(
        [&](double z2) { return g(b * (c * z1 + s * z2)); }, inner_cuts);
    return ga * inner;
  };
  return normal_expect_piecewise(outer, outer_cuts);
}

}  // namespace sigprop
