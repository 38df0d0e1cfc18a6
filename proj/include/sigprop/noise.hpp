#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sigprop/format.hpp"
#include "sigprop/rng.hpp"

namespace sigprop {

enum class NoiseMode { None, Additive, Multiplicative };
enum class NoiseFamily { None, Gaussian, Laplace, Poisson, Dropout };

// A per-unit noise source applied to activations before they enter the next
// weight matrix. Additive families have mean 0, multiplicative families have
// mean 1; the second moment mu2 = E[eps^2] is the only statistic the theory
// consumes. Dropout is kept in inverted form eps in {0, 1/p}.
struct NoiseSpec {
  NoiseMode mode = NoiseMode::None;
  NoiseFamily family = NoiseFamily::None;
  // sigma (Gaussian std), beta (Laplace scale), or p (dropout keep
  // probability). Poisson is fixed at unit rate and ignores it.
  double param = 0.0;

  static NoiseSpec none() { return {}; }
  static NoiseSpec additive_gaussian(double sigma) {
    return {NoiseMode::Additive, NoiseFamily::Gaussian, sigma};
  }
  static NoiseSpec additive_laplace(double beta) {
    return {NoiseMode::Additive, NoiseFamily::Laplace, beta};
  }
  static NoiseSpec multiplicative_gaussian(double sigma) {
    return {NoiseMode::Multiplicative, NoiseFamily::Gaussian, sigma};
  }
  static NoiseSpec multiplicative_laplace(double beta) {
    return {NoiseMode::Multiplicative, NoiseFamily::Laplace, beta};
  }
  static NoiseSpec poisson() {
    return {NoiseMode::Multiplicative, NoiseFamily::Poisson, 1.0};
  }
  static NoiseSpec dropout(double p) {
    return {NoiseMode::Multiplicative, NoiseFamily::Dropout, p};
  }

  bool operator==(const NoiseSpec&) const = default;
};

inline void validate(const NoiseSpec& spec) {
  const bool none_mode = spec.mode == NoiseMode::None;
  const bool none_family = spec.family == NoiseFamily::None;
  if (none_mode != none_family)
    throw std::invalid_argument("noise: mode and family must both be none");
  if (none_mode) return;
  if (!std::isfinite(spec.param))
    throw std::invalid_argument("noise: parameter must be finite");
  switch (spec.family) {
    case NoiseFamily::Gaussian:
    case NoiseFamily::Laplace:
      if (spec.param < 0.0)
        throw std::invalid_argument("noise: scale must be >= 0");
      break;
    case NoiseFamily::Poisson:
      if (spec.mode != NoiseMode::Multiplicative)
        throw std::invalid_argument("noise: poisson must be multiplicative");
      if (spec.param != 1.0)
        throw std::invalid_argument("noise: poisson rate is fixed at 1");
      break;
    case NoiseFamily::Dropout:
      if (spec.mode != NoiseMode::Multiplicative)
        throw std::invalid_argument("noise: dropout must be multiplicative");
      if (!(spec.param > 0.0 && spec.param <= 1.0))
        throw std::invalid_argument("noise: dropout keep prob must be in (0,1]");
      break;
    case NoiseFamily::None:
      break;
  }
}

// E[eps^2]. The multiplicative convention reports 1 for no noise, so the
// value can multiply a variance unconditionally.
inline double second_moment(const NoiseSpec& spec) {
  validate(spec);
  const double a = spec.param;
  switch (spec.family) {
    case NoiseFamily::None:
      return 1.0;
    case NoiseFamily::Gaussian:
      return spec.mode == NoiseMode::Additive ? a * a : a * a + 1.0;
    case NoiseFamily::Laplace:
      return spec.mode == NoiseMode::Additive ? 2.0 * a * a
                                              : 2.0 * a * a + 1.0;
    case NoiseFamily::Poisson:
      return 2.0;
    case NoiseFamily::Dropout:
      return 1.0 / a;
  }
  throw std::logic_error("unreachable");
}

// Draws one realization of eps. The same uniform/normal stream layout is
// used for every parameter value, so e.g. sigma=0 degenerates cleanly.
class NoiseSampler {
 public:
  explicit NoiseSampler(const NoiseSpec& spec) : spec_(spec) {
    validate(spec);
  }

  double operator()(Rng& rng) {
    switch (spec_.family) {
      case NoiseFamily::None:
        return 1.0;
      case NoiseFamily::Gaussian: {
        const double z = standard_normal(rng) * spec_.param;
        return spec_.mode == NoiseMode::Additive ? z : 1.0 + z;
      }
      case NoiseFamily::Laplace: {
        const double x = laplace(rng) * spec_.param;
        return spec_.mode == NoiseMode::Additive ? x : 1.0 + x;
      }
      case NoiseFamily::Poisson:
        return static_cast<double>(poisson_(rng));
      case NoiseFamily::Dropout:
        return uniform_(rng) < spec_.param ? 1.0 / spec_.param : 0.0;
    }
    throw std::logic_error("unreachable");
  }

  const NoiseSpec& spec() const { return spec_; }

 private:
  double laplace(Rng& rng) {
    const double u = uniform_(rng);
    return u < 0.5 ? std::log(2.0 * u) : -std::log(2.0 * (1.0 - u));
  }

  NoiseSpec spec_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::poisson_distribution<long> poisson_{1.0};
};

inline std::vector<double> sample_noise(const NoiseSpec& spec, std::size_t n,
                                        Rng& rng) {
  NoiseSampler sampler(spec);
  std::vector<double> out(n);
  for (double& v : out) v = sampler(rng);
  return out;
}

// Text form used by the CLI and config files: none | add:family(param) |
// mult:family(param); poisson carries no parameter.
inline std::string format_noise(const NoiseSpec& spec) {
  validate(spec);
  if (spec.mode == NoiseMode::None) return "none";
  std::string out = spec.mode == NoiseMode::Additive ? "add:" : "mult:";
  switch (spec.family) {
    case NoiseFamily::Gaussian:
      out += "gaussian(" + format_double(spec.param) + ")";
      break;
    case NoiseFamily::Laplace:
      out += "laplace(" + format_double(spec.param) + ")";
      break;
    case NoiseFamily::Poisson:
      out += "poisson";
      break;
    case NoiseFamily::Dropout:
      out += "dropout(" + format_double(spec.param) + ")";
      break;
    case NoiseFamily::None:
      break;
  }
  return out;
}

inline NoiseSpec parse_noise(std::string_view text) {
  auto fail = [&](const char* why) -> NoiseSpec {
    throw std::invalid_argument("noise spec '" + std::string(text) +
                                "': " + why);
  };
  // Trim surrounding whitespace.
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text == "none") return NoiseSpec::none();

  const auto colon = text.find(':');
  if (colon == std::string_view::npos)
    return fail("expected none or <mode>:<family>(<param>)");
  const std::string_view mode_s = text.substr(0, colon);
  NoiseMode mode;
  if (mode_s == "add")
    mode = NoiseMode::Additive;
  else if (mode_s == "mult")
    mode = NoiseMode::Multiplicative;
  else
    return fail("mode must be add or mult");

  std::string_view rest = text.substr(colon + 1);
  std::string_view family_s = rest;
  bool has_param = false;
  double param = 0.0;
  const auto paren = rest.find('(');
  if (paren != std::string_view::npos) {
    if (rest.empty() || rest.back() != ')')
      return fail("missing closing parenthesis");
    family_s = rest.substr(0, paren);
    param = parse_double(rest.substr(paren + 1, rest.size() - paren - 2));
    has_param = true;
  }

  NoiseSpec spec;
  spec.mode = mode;
  if (family_s == "gaussian")
    spec.family = NoiseFamily::Gaussian;
  else if (family_s == "laplace")
    spec.family = NoiseFamily::Laplace;
  else if (family_s == "poisson")
    spec.family = NoiseFamily::Poisson;
  else if (family_s == "dropout")
    spec.family = NoiseFamily::Dropout;
  else
    return fail("family must be gaussian, laplace, poisson, or dropout");

  if (spec.family == NoiseFamily::Poisson)
    spec.param = has_param ? param : 1.0;
  else if (!has_param)
    return fail("family requires a parameter");
  else
    spec.param = param;
  validate(spec);
  return spec;
}

}  // namespace sigprop
