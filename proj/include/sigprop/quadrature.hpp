#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace sigprop {

namespace detail {

// Nodes/weights of an n-point Gaussian rule from the symmetric tridiagonal
// Jacobi matrix (Golub-Welsch): nodes are the eigenvalues, weights are
// mu0 * (first eigenvector component)^2.
inline void golub_welsch(const std::vector<double>& offdiag, double mu0,
                         std::vector<double>& nodes,
                         std::vector<double>& weights) {
  const int n = static_cast<int>(offdiag.size()) + 1;
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k + 1 < n; ++k) {
    jacobi(k, k + 1) = offdiag[static_cast<std::size_t>(k)];
    jacobi(k + 1, k) = offdiag[static_cast<std::size_t>(k)];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("quadrature: eigen decomposition failed");
  nodes.resize(static_cast<std::size_t>(n));
  weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    nodes[static_cast<std::size_t>(i)] = solver.eigenvalues()(i);
    const double v0 = solver.eigenvectors()(0, i);
    weights[static_cast<std::size_t>(i)] = mu0 * v0 * v0;
  }
}

// Evaluates the orthonormal probabilists' Hermite polynomials at z,
// returning (he_n(z), he_{n-1}(z)).
inline std::pair<double, double> hermite_pair(int n, double z) {
  double prev = 0.0, cur = 1.0;  // he_{-1}, he_0
  for (int k = 0; k < n; ++k) {
    const double next =
        (z * cur - std::sqrt(static_cast<double>(k)) * prev) /
        std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
  }
  return {cur, prev};
}

inline double christoffel_sum(int n, double z) {
  double prev = 0.0, cur = 1.0, acc = 1.0;
  for (int k = 0; k + 1 < n; ++k) {
    const double next =
        (z * cur - std::sqrt(static_cast<double>(k)) * prev) /
        std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
    acc += cur * cur;
  }
  return acc;
}

}  // namespace detail

// Gauss-Hermite rule in probabilists' normalization: E[f(Z)] for Z ~ N(0,1)
// is approximated by sum_i w_i f(z_i). Weights sum to 1. Nodes are exactly
// symmetric about 0 (enforced after the eigensolve), with a node at 0 for
// odd orders, so odd integrands cancel to machine precision. Eigensolver
// nodes are Newton-polished on he_n and the weights recomputed from the
// Christoffel sum, which restores relative precision in the tails.
class QuadratureRule {
 public:
  static constexpr int kDefaultOrder = 101;

  explicit QuadratureRule(int order = kDefaultOrder) {
    if (order < 1) throw std::invalid_argument("quadrature: order must be >= 1");
    std::vector<double> offdiag(static_cast<std::size_t>(order - 1));
    for (int k = 1; k < order; ++k)
      offdiag[static_cast<std::size_t>(k - 1)] = std::sqrt(static_cast<double>(k));
    detail::golub_welsch(offdiag, 1.0, nodes_, weights_);
    polish(order);
    symmetrize();
  }

  int order() const { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }

  template <class F>
  double expect(F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      acc += weights_[i] * f(nodes_[i]);
    return acc;
  }

 private:
  void polish(int order) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      double z = nodes_[i];
      for (int it = 0; it < 3; ++it) {
        const auto [hn, hn_prev] = detail::hermite_pair(order, z);
        const double deriv = std::sqrt(static_cast<double>(order)) * hn_prev;
        if (deriv == 0.0) break;
        z -= hn / deriv;
      }
      nodes_[i] = z;
      weights_[i] = 1.0 / detail::christoffel_sum(order, z);
    }
  }

  void symmetrize() {
    std::vector<std::size_t> idx(nodes_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return nodes_[a] < nodes_[b]; });
    std::vector<double> n(nodes_.size()), w(weights_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      n[i] = nodes_[idx[i]];
      w[i] = weights_[idx[i]];
    }
    const std::size_t m = n.size();
    for (std::size_t i = 0; i < m / 2; ++i) {
      const std::size_t j = m - 1 - i;
      const double z = 0.5 * (n[j] - n[i]);
      const double wt = 0.5 * (w[i] + w[j]);
      n[i] = -z;
      n[j] = z;
      w[i] = wt;
      w[j] = wt;
    }
    if (m % 2 == 1) n[m / 2] = 0.0;
    nodes_ = std::move(n);
    weights_ = std::move(w);
  }

  std::vector<double> nodes_;
  std::vector<double> weights_;
};

// Shared default rule for callers that do not manage their own.
inline const QuadratureRule& default_rule() {
  static const QuadratureRule rule;
  return rule;
}

// Gauss-Legendre rule on [-1, 1]; building block for piecewise integration.
class GaussLegendreRule {
 public:
  explicit GaussLegendreRule(int order = 24) {
    if (order < 1) throw std::invalid_argument("quadrature: order must be >= 1");
    std::vector<double> offdiag(static_cast<std::size_t>(order - 1));
    for (int k = 1; k < order; ++k) {
      const double kk = static_cast<double>(k);
      offdiag[static_cast<std::size_t>(k - 1)] =
          kk / std::sqrt(4.0 * kk * kk - 1.0);
    }
    detail::golub_welsch(offdiag, 2.0, nodes_, weights_);
  }

  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

// E[f(Z)] for Z ~ N(0,1) where f is smooth except at the given cut points.
// The real line is truncated where the normal tail is negligible and covered
// by panels that never straddle a cut; each panel uses a fixed Gauss-Legendre
// rule with the normal density folded into the integrand. Converges to
// near machine precision for piecewise-analytic f of moderate growth,
// independent of where the cuts fall.
template <class F>
double normal_expect_piecewise(F&& f, std::span<const double> cuts) {
  static constexpr double kTail = 12.0;      // N(12) ~ 2e-32
  static constexpr double kMaxPanel = 1.0;
  static const GaussLegendreRule gl(24);
  static const double inv_sqrt_2pi = 0.3989422804014326779;

  std::vector<double> edges;
  edges.push_back(-kTail);
  for (double c : cuts)
    if (c > -kTail && c < kTail) edges.push_back(c);
  edges.push_back(kTail);
  std::sort(edges.begin(), edges.end());

  double acc = 0.0;
  for (std::size_t s = 0; s + 1 < edges.size(); ++s) {
    const double a = edges[s], b = edges[s + 1];
    if (b - a < 1e-300) continue;
    const int panels =
        std::max(1, static_cast<int>(std::ceil((b - a) / kMaxPanel)));
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
      const double lo = a + p * h;
      const double mid = lo + 0.5 * h;
      const double half = 0.5 * h;
      double panel_acc = 0.0;
      for (std::size_t i = 0; i < gl.nodes().size(); ++i) {
        const double z = mid + half * gl.nodes()[i];
        panel_acc += gl.weights()[i] * f(z) * std::exp(-0.5 * z * z);
      }
      acc += panel_acc * half * inv_sqrt_2pi;
    }
  }
  return acc;
}

}  // namespace sigprop
