#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <numbers>

#include "sigprop/quadrature.hpp"

using namespace sigprop;

TEST_CASE("rule reproduces standard-normal moments", "[quadrature]") {
  for (int order : {11, 51, 101}) {
    const QuadratureRule rule(order);
    CAPTURE(order);
    double w_sum = 0.0, z_sum = 0.0, z2_sum = 0.0;
    for (std::size_t i = 0; i < rule.nodes().size(); ++i) {
      w_sum += rule.weights()[i];
      z_sum += rule.weights()[i] * rule.nodes()[i];
      z2_sum += rule.weights()[i] * rule.nodes()[i] * rule.nodes()[i];
    }
    CHECK(std::abs(w_sum - 1.0) < 1e-12);
    CHECK(std::abs(z_sum) < 1e-10);
    CHECK(std::abs(z2_sum - 1.0) < 1e-10);
  }
}

TEST_CASE("polynomial moments are exact up to the rule degree", "[quadrature]") {
  const QuadratureRule rule(101);
  // E[Z^{2k}] = (2k-1)!!; rounding-level accuracy far below the exactness
  // degree 2n-1.
  double expected = 1.0;
  for (int k = 1; k <= 20; ++k) {
    expected *= 2.0 * k - 1.0;
    const double got =
        rule.expect([&](double z) { return std::pow(z, 2 * k); });
    CHECK(std::abs(got - expected) / expected < 1e-12);
    const double odd =
        rule.expect([&](double z) { return std::pow(z, 2 * k - 1); });
    CHECK(std::abs(odd) / expected < 1e-12);
  }
}

TEST_CASE("nodes are symmetric with a center node at zero", "[quadrature]") {
  const QuadratureRule rule(101);
  const auto& z = rule.nodes();
  const auto& w = rule.weights();
  const std::size_t n = z.size();
  REQUIRE(n == 101);
  CHECK(z[n / 2] == 0.0);
  for (std::size_t i = 0; i < n / 2; ++i) {
    CHECK(z[i] == -z[n - 1 - i]);
    CHECK(w[i] == w[n - 1 - i]);
  }
  for (std::size_t i = 0; i + 1 < n; ++i) CHECK(z[i] < z[i + 1]);
}

TEST_CASE("smooth transcendental expectations converge", "[quadrature]") {
  const QuadratureRule rule(101);
  // E[e^{tZ}] = e^{t^2/2}.
  for (double t : {0.5, 1.0, 2.0}) {
    const double got = rule.expect([&](double z) { return std::exp(t * z); });
    CHECK(std::abs(got - std::exp(0.5 * t * t)) < 1e-10);
  }
  // E[cos(tZ)] = e^{-t^2/2}.
  const double got = rule.expect([](double z) { return std::cos(3.0 * z); });
  CHECK(std::abs(got - std::exp(-4.5)) < 1e-10);
}

TEST_CASE("gauss-legendre panel rule integrates exactly on [-1,1]",
          "[quadrature]") {
  const GaussLegendreRule gl(24);
  double mass = 0.0, x2 = 0.0;
  for (std::size_t i = 0; i < gl.nodes().size(); ++i) {
    mass += gl.weights()[i];
    x2 += gl.weights()[i] * gl.nodes()[i] * gl.nodes()[i];
  }
  CHECK(std::abs(mass - 2.0) < 1e-13);
  CHECK(std::abs(x2 - 2.0 / 3.0) < 1e-13);
}

TEST_CASE("piecewise normal expectation handles kinked integrands",
          "[quadrature]") {
  // E[|Z|] = sqrt(2/pi): first-derivative kink at 0.
  const std::array<double, 1> at_zero = {0.0};
  const double e_abs = normal_expect_piecewise(
      [](double z) { return std::abs(z); }, at_zero);
  CHECK(std::abs(e_abs - std::sqrt(2.0 / std::numbers::pi)) < 1e-12);

  // E[1{Z > t}] = Phi(-t): jump discontinuity at an arbitrary cut.
  for (double t : {-1.3, 0.0, 0.4, 2.7}) {
    const std::array<double, 1> cut = {t};
    const double got = normal_expect_piecewise(
        [&](double z) { return z > t ? 1.0 : 0.0; }, cut);
    const double want = 0.5 * std::erfc(t / std::sqrt(2.0));
    CHECK(std::abs(got - want) < 1e-12);
  }

  // E[max(Z - t, 0)] = pdf(t) - t Phi(-t).
  const double t = 0.8;
  const std::array<double, 1> cut = {t};
  const double got = normal_expect_piecewise(
      [&](double z) { return std::max(z - t, 0.0); }, cut);
  const double pdf = std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
  const double want = pdf - t * 0.5 * std::erfc(t / std::sqrt(2.0));
  CHECK(std::abs(got - want) < 1e-12);
}

TEST_CASE("piecewise path matches gauss-hermite on smooth integrands",
          "[quadrature]") {
  const QuadratureRule rule(101);
  // Entire integrand: both routes sit at rounding level.
  auto g = [](double z) { return std::cos(2.0 * z) + 0.1 * z * z; };
  CHECK(std::abs(rule.expect(g) -
                 normal_expect_piecewise(g, std::span<const double>{})) <
        1e-12);
  // tanh^2 has poles at +-i pi/2 off the real axis, which limits the
  // Hermite rule to ~1e-8 at this order; the panel rule is unaffected.
  auto f = [](double z) {
    const double v = std::tanh(std::sqrt(2.0) * z);
    return v * v;
  };
  CHECK(std::abs(rule.expect(f) -
                 normal_expect_piecewise(f, std::span<const double>{})) <
        5e-8);
}
