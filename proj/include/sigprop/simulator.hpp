#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sigprop/activation.hpp"
#include "sigprop/format.hpp"
#include "sigprop/meanfield.hpp"
#include "sigprop/noise.hpp"
#include "sigprop/rng.hpp"

namespace sigprop {

// Float32Emulated keeps double storage but rounds every value to 32-bit
// after each layer's matrix product and again after activation-plus-noise,
// so overflow to inf and loss to subnormals happen where a float32 network
// would experience them while the hot loop stays a double gemm.
enum class Precision { Float64, Float32Emulated };

// The theory assumes backward weights independent of the forward ones; tied
// mode reuses the forward weights to expose the gap to practice.
enum class BackpropMode { IndependentWeights, TiedWeights };

struct SimConfig {
  NetworkShape shape;
  InitSpec init;
  NoiseSpec noise;
  Activation act = Activation::relu();
  int runs = 50;
  std::uint64_t seed = 0;
  Precision precision = Precision::Float64;
};

// Per-layer mean and run-to-run sample deviation of one empirical statistic.
// overflow_layer is the first layer at which any run's statistic left the
// finite range (Float32Emulated mode only).
struct EmpiricalTrace {
  LayerTrace::Kind kind = LayerTrace::Kind::Variance;
  std::vector<double> mean;
  std::vector<double> std;
  int first_layer = 0;
  int n_runs = 0;
  std::optional<int> overflow_layer;

  int layer_of(std::size_t index) const {
    return first_layer + static_cast<int>(index);
  }

  bool operator==(const EmpiricalTrace&) const = default;
};

struct Network {
  NetworkShape shape;
  std::vector<Eigen::MatrixXd> weights;  // weights[l-1] is D_l x D_{l-1}
  std::vector<Eigen::VectorXd> biases;   // biases[l-1] is D_l
};

namespace detail {

// Stream roles. Every random draw in a protocol comes from a generator
// seeded as derive_seed(cfg.seed, run, [layer,] role, [cell]), which makes
// results independent of evaluation order and lets sweep ops share weight
// draws across cells (common random numbers).
inline constexpr std::uint64_t kRoleWeights = 1;
inline constexpr std::uint64_t kRoleInput = 3;
inline constexpr std::uint64_t kRoleNoise = 4;
inline constexpr std::uint64_t kRoleBackWeights = 5;
inline constexpr std::uint64_t kRoleErrorSeed = 6;

inline void require_integral(const NetworkShape& shape) {
  validate(shape);
  for (double w : shape.widths)
    if (std::floor(w) != w || w > 1e9)
      throw std::invalid_argument(
          "simulation needs integer layer widths; real-valued shapes are for "
          "theory recurrences");
}

inline Eigen::Index width_at(const NetworkShape& shape, int layer) {
  return static_cast<Eigen::Index>(
      shape.widths[static_cast<std::size_t>(layer)]);
}

// Canonical fill order (column-major, matching Eigen storage) pinned for
// reproducibility. The engine is copied to a local so its state can stay in
// registers across the fill.
inline void fill_standard_normal(Eigen::Ref<Eigen::MatrixXd> m, Rng& rng) {
  const auto& tables = sigprop::detail::ziggurat_tables();
  Rng local = rng;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    double* col = m.data() + j * m.outerStride();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      col[i] = sigprop::detail::standard_normal_impl(local, tables);
  }
  rng = local;
}

inline double round32(double v) {
  return static_cast<double>(static_cast<float>(v));
}

inline void round32_inplace(Eigen::Ref<Eigen::MatrixXd> m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = round32(m(i, j));
}

// x <- phi(x) with noise folded in: multiplicative scales, additive shifts.
// Column-major order; one eps per entry, so a pair's two columns see
// independent noise. In emulated mode the result is rounded to 32-bit.
inline void activate_corrupt(Eigen::Ref<Eigen::MatrixXd> m,
                             const Activation& act, const NoiseSpec& noise,
                             Rng& rng, Precision precision) {
  NoiseSampler sampler(noise);
  const bool emulated = precision == Precision::Float32Emulated;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      double v = act.phi(m(i, j));
      switch (noise.mode) {
        case NoiseMode::None:
          break;
        case NoiseMode::Multiplicative:
          v *= sampler(rng);
          break;
        case NoiseMode::Additive:
          v += sampler(rng);
          break;
      }
      m(i, j) = emulated ? round32(v) : v;
    }
  }
}

inline double mean_sq(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return v.squaredNorm() / static_cast<double>(v.size());
}

// Column-wise mean and ddof-1 deviation of per-run statistics.
inline void reduce_runs(const std::vector<std::vector<double>>& per_run,
                        EmpiricalTrace& out) {
  const std::size_t runs = per_run.size();
  const std::size_t len = per_run.front().size();
  out.mean.assign(len, 0.0);
  out.std.assign(len, 0.0);
  out.n_runs = static_cast<int>(runs);
  for (std::size_t i = 0; i < len; ++i) {
    double s = 0.0;
    for (const auto& run : per_run) s += run[i];
    const double m = s / static_cast<double>(runs);
    out.mean[i] = m;
    if (runs > 1) {
      double ss = 0.0;
      for (const auto& run : per_run) ss += (run[i] - m) * (run[i] - m);
      out.std[i] = std::sqrt(ss / static_cast<double>(runs - 1));
    }
  }
}

}  // namespace detail

inline void validate(const SimConfig& cfg) {
  detail::require_integral(cfg.shape);
  validate(cfg.init);
  validate(cfg.noise);
  if (cfg.runs < 1) throw std::invalid_argument("sim: runs must be >= 1");
}

// Standard-normal vector rescaled so its empirical second moment is exactly
// target_q.
inline Eigen::VectorXd generate_input(Eigen::Index dim, double target_q,
                                      Rng& rng) {
  if (dim < 1) throw std::invalid_argument("input: dim must be >= 1");
  if (target_q < 0.0) throw std::domain_error("input: target_q must be >= 0");
  Eigen::VectorXd x(dim);
  detail::fill_standard_normal(x, rng);
  const double norm = x.norm();
  if (target_q == 0.0 || norm == 0.0) return Eigen::VectorXd::Zero(dim);
  x *= std::sqrt(target_q * static_cast<double>(dim)) / norm;
  return x;
}

// Block of `pairs` correlated input pairs, dim x 2*pairs, first input of
// pair k in column k and its partner in column pairs + k. Each pair is built
// from an orthonormalised two-frame, so the empirical second moments equal
// target_q and the cross-correlation equals target_c exactly.
inline Eigen::MatrixXd generate_correlated_block(Eigen::Index dim, int pairs,
                                                 double target_c,
                                                 double target_q, Rng& rng) {
  if (dim < 2) throw std::invalid_argument("pair: dim must be >= 2");
  if (pairs < 1) throw std::invalid_argument("pair: pairs must be >= 1");
  if (target_q < 0.0) throw std::domain_error("pair: target_q must be >= 0");
  const double c = clamp_correlation(target_c);
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  Eigen::MatrixXd za(dim, pairs), zu(dim, pairs);
  detail::fill_standard_normal(za, rng);
  detail::fill_standard_normal(zu, rng);
  const double scale = std::sqrt(target_q * static_cast<double>(dim));
  Eigen::MatrixXd block(dim, 2 * static_cast<Eigen::Index>(pairs));
  for (int k = 0; k < pairs; ++k) {
    Eigen::VectorXd ea = za.col(k) / za.col(k).norm();
    Eigen::VectorXd u = zu.col(k) - ea * ea.dot(zu.col(k));
    u /= u.norm();
    block.col(k) = ea * scale;
    block.col(pairs + k) = (c * ea + s * u) * scale;
  }
  return block;
}

inline std::pair<Eigen::VectorXd, Eigen::VectorXd> generate_correlated_pair(
    Eigen::Index dim, double target_c, double target_q, Rng& rng) {
  const Eigen::MatrixXd block =
      generate_correlated_block(dim, 1, target_c, target_q, rng);
  return {block.col(0), block.col(1)};
}

// Weights N(0, sigma_w^2 / fan_in), biases N(0, sigma_b^2), drawn in a fixed
// order (layer by layer, weights column-major then biases).
inline Network sample_network(const NetworkShape& shape, const InitSpec& init,
                              Rng& rng) {
  detail::require_integral(shape);
  validate(init);
  Network net;
  net.shape = shape;
  for (int l = 1; l <= shape.depth(); ++l) {
    const Eigen::Index rows = detail::width_at(shape, l);
    const Eigen::Index cols = detail::width_at(shape, l - 1);
    Eigen::MatrixXd w(rows, cols);
    detail::fill_standard_normal(w, rng);
    w *= init.sigma_w / std::sqrt(static_cast<double>(cols));
    net.weights.push_back(std::move(w));
    Eigen::VectorXd b(rows);
    detail::fill_standard_normal(b, rng);
    b *= init.sigma_b;
    net.biases.push_back(std::move(b));
  }
  return net;
}

// Propagates one input and returns pre-activations h^0..h^L, with h^0 the
// input itself. The input is treated like any other pre-activation: the
// activation and a fresh noise draw apply to it before the first weight
// layer, which is what makes the layer-0 statistic obey the same recursion
// as the rest. The rng drives noise only; weights come from the network.
inline std::vector<Eigen::VectorXd> forward_noisy(
    const Eigen::VectorXd& x0, const Network& net, const NoiseSpec& noise,
    const Activation& act, Rng& rng,
    Precision precision = Precision::Float64) {
  validate(noise);
  const int depth = net.shape.depth();
  if (x0.size() != detail::width_at(net.shape, 0))
    throw std::invalid_argument("forward: input width mismatch");
  std::vector<Eigen::VectorXd> pre;
  pre.reserve(static_cast<std::size_t>(depth) + 1);
  pre.push_back(x0);
  if (precision == Precision::Float32Emulated)
    detail::round32_inplace(pre.back());
  Eigen::VectorXd state = pre.back();
  for (int l = 1; l <= depth; ++l) {
    detail::activate_corrupt(state, act, noise, rng, precision);
    Eigen::VectorXd h = net.weights[static_cast<std::size_t>(l - 1)] * state;
    h += net.biases[static_cast<std::size_t>(l - 1)];
    if (precision == Precision::Float32Emulated) detail::round32_inplace(h);
    pre.push_back(h);
    state = std::move(h);
  }
  return pre;
}

// Backward error pass seeded at the top layer: delta^l = phi'(h^l) .*
// W^{l+1T} delta^{l+1}. Gates use the noisy forward pre-activations; the
// error itself is not noise-corrupted. Independent mode draws fresh
// backward weights from the rng with the forward scaling taken from init;
// tied mode reuses the network's weights. Returns errors for layers 1..L.
inline std::vector<Eigen::VectorXd> backward_noisy(
    const Network& net, const std::vector<Eigen::VectorXd>& pre,
    const Activation& act, const InitSpec& init,
    const Eigen::VectorXd& delta_top, Rng& rng,
    BackpropMode mode = BackpropMode::IndependentWeights) {
  validate(init);
  const int depth = net.shape.depth();
  if (static_cast<int>(pre.size()) != depth + 1)
    throw std::invalid_argument("backward: need pre-activations for 0..depth");
  if (delta_top.size() != detail::width_at(net.shape, depth))
    throw std::invalid_argument("backward: seed width mismatch");
  std::vector<Eigen::VectorXd> deltas(static_cast<std::size_t>(depth));
  deltas.back() = delta_top;
  Eigen::VectorXd delta = delta_top;
  for (int l = depth - 1; l >= 1; --l) {
    const Eigen::Index rows = detail::width_at(net.shape, l + 1);
    const Eigen::Index cols = detail::width_at(net.shape, l);
    Eigen::VectorXd back;
    if (mode == BackpropMode::TiedWeights) {
      back = net.weights[static_cast<std::size_t>(l)].transpose() * delta;
    } else {
      Eigen::MatrixXd w(rows, cols);
      detail::fill_standard_normal(w, rng);
      back = w.transpose() * delta;
      back *= init.sigma_w / std::sqrt(static_cast<double>(cols));
    }
    const auto& h = pre[static_cast<std::size_t>(l)];
    Eigen::VectorXd next(cols);
    for (Eigen::Index i = 0; i < cols; ++i)
      next[i] = act.dphi(h[i]) * back[i];
    delta = std::move(next);
    deltas[static_cast<std::size_t>(l - 1)] = delta;
  }
  return deltas;
}

// Per-layer second moment of pre-activations, averaged over runs. Layer 0 is
// the exactly rescaled input, so its deviation is zero up to rounding.
inline EmpiricalTrace empirical_variance_trace(const SimConfig& cfg,
                                               double q0) {
  validate(cfg);
  if (q0 < 0.0) throw std::domain_error("sim: q0 must be >= 0");
  const int depth = cfg.shape.depth();
  const bool emulated = cfg.precision == Precision::Float32Emulated;
  const double scale_w = cfg.init.sigma_w;
  std::vector<std::vector<double>> per_run(
      static_cast<std::size_t>(cfg.runs),
      std::vector<double>(static_cast<std::size_t>(depth) + 1));
  std::optional<int> overflow;
  for (int r = 0; r < cfg.runs; ++r) {
    auto& stats = per_run[static_cast<std::size_t>(r)];
    Rng in_rng = make_rng(derive_seed(cfg.seed, r, detail::kRoleInput));
    Eigen::VectorXd state =
        generate_input(detail::width_at(cfg.shape, 0), q0, in_rng);
    if (emulated) detail::round32_inplace(state);
    stats[0] = emulated ? detail::round32(detail::mean_sq(state))
                        : detail::mean_sq(state);
    for (int l = 1; l <= depth; ++l) {
      Rng noise_rng =
          make_rng(derive_seed(cfg.seed, r, l, detail::kRoleNoise));
      detail::activate_corrupt(state, cfg.act, cfg.noise, noise_rng,
                               cfg.precision);
      const Eigen::Index rows = detail::width_at(cfg.shape, l);
      const Eigen::Index cols = state.size();
      Rng w_rng = make_rng(derive_seed(cfg.seed, r, l, detail::kRoleWeights));
      Eigen::MatrixXd w(rows, cols);
      detail::fill_standard_normal(w, w_rng);
      Eigen::VectorXd h = w * state;
      h *= scale_w / std::sqrt(static_cast<double>(cols));
      Eigen::VectorXd b(rows);
      detail::fill_standard_normal(b, w_rng);
      h += cfg.init.sigma_b * b;
      if (emulated) detail::round32_inplace(h);
      double q = detail::mean_sq(h);
      if (emulated) {
        q = detail::round32(q);
        if (!std::isfinite(q) && (!overflow || l < *overflow)) overflow = l;
      }
      stats[static_cast<std::size_t>(l)] = q;
      state = std::move(h);
    }
  }
  EmpiricalTrace trace;
  trace.kind = LayerTrace::Kind::Variance;
  trace.first_layer = 0;
  trace.overflow_layer = overflow;
  detail::reduce_runs(per_run, trace);
  return trace;
}

namespace detail {

// Shared engine for correlation dynamics: propagates a block of exactified
// pairs through one network per run and records the mean pair correlation of
// pre-activations per layer. cell_salt decorrelates noise streams between
// sweep cells; 0 is the standalone stream.
inline std::vector<std::vector<double>> correlation_runs(
    const SimConfig& cfg, double c0, double q0, int pairs,
    std::uint64_t cell_salt) {
  const int depth = cfg.shape.depth();
  const Eigen::Index dim = width_at(cfg.shape, 0);
  const Eigen::Index cols = 2 * static_cast<Eigen::Index>(pairs);
  std::vector<std::vector<double>> per_run(
      static_cast<std::size_t>(cfg.runs),
      std::vector<double>(static_cast<std::size_t>(depth) + 1));
  for (int r = 0; r < cfg.runs; ++r) {
    auto& stats = per_run[static_cast<std::size_t>(r)];
    Rng in_rng = make_rng(derive_seed(cfg.seed, r, kRoleInput));
    Eigen::MatrixXd state =
        generate_correlated_block(dim, pairs, c0, q0, in_rng);
    stats[0] = clamp_correlation(c0);
    for (int l = 1; l <= depth; ++l) {
      Rng noise_rng = make_rng(
          cell_salt == 0
              ? derive_seed(cfg.seed, r, l, kRoleNoise)
              : derive_seed(cfg.seed, r, l, kRoleNoise, cell_salt));
      activate_corrupt(state, cfg.act, cfg.noise, noise_rng, cfg.precision);
      const Eigen::Index rows = width_at(cfg.shape, l);
      Rng w_rng = make_rng(derive_seed(cfg.seed, r, l, kRoleWeights));
      Eigen::MatrixXd w(rows, state.rows());
      fill_standard_normal(w, w_rng);
      Eigen::MatrixXd h(rows, cols);
      h.noalias() = w * state;
      h *= cfg.init.sigma_w / std::sqrt(static_cast<double>(state.rows()));
      Eigen::VectorXd b(rows);
      fill_standard_normal(b, w_rng);
      if (cfg.init.sigma_b != 0.0) h.colwise() += (cfg.init.sigma_b * b).eval();
      double c_sum = 0.0;
      for (int k = 0; k < pairs; ++k) {
        const auto ha = h.col(k);
        const auto hb = h.col(pairs + k);
        const double qa = mean_sq(ha), qb = mean_sq(hb);
        const double qab = ha.dot(hb) / static_cast<double>(rows);
        c_sum += (qa > 0.0 && qb > 0.0) ? qab / std::sqrt(qa * qb) : 0.0;
      }
      stats[static_cast<std::size_t>(l)] = c_sum / static_cast<double>(pairs);
      state = std::move(h);
    }
  }
  return per_run;
}

}  // namespace detail

// Correlation dynamics of an exactified input pair under shared weights and
// independent per-input noise. pairs_per_run > 1 propagates several pairs
// through the same network and averages them before the cross-run reduction,
// which tightens the trace without biasing it.
inline EmpiricalTrace empirical_correlation_trace(const SimConfig& cfg,
                                                  double c0, double q0,
                                                  int pairs_per_run = 1) {
  validate(cfg);
  if (q0 < 0.0) throw std::domain_error("sim: q0 must be >= 0");
  if (pairs_per_run < 1)
    throw std::invalid_argument("sim: pairs_per_run must be >= 1");
  if (cfg.precision != Precision::Float64)
    throw std::invalid_argument(
        "correlation traces are defined for Float64 precision");
  EmpiricalTrace trace;
  trace.kind = LayerTrace::Kind::Correlation;
  trace.first_layer = 0;
  detail::reduce_runs(
      detail::correlation_runs(cfg, c0, q0, pairs_per_run, 0), trace);
  return trace;
}

// One noise level of a correlation sweep. The canonical key string keeps
// noise streams reproducible and distinct across cells.
struct SweepCell {
  NoiseSpec noise;
  InitSpec init;
  double c0 = 0.0;
};

inline std::uint64_t sweep_cell_key(const SweepCell& cell) {
  return hash64(format_noise(cell.noise) + "|c0=" + format_double(cell.c0));
}

// Correlation dynamics for several (noise, init, c0) cells sharing the
// per-(run, layer) standard-normal weight draw and the per-run input draw.
// Sharing is a common-random-numbers speedup: each cell's trace has the same
// distribution as a standalone run, and the dominant generator cost is paid
// once per layer rather than once per cell.
inline std::vector<EmpiricalTrace> correlation_sweep(
    const SimConfig& base, std::span<const SweepCell> cells, double q0,
    int pairs_per_run = 1) {
  validate(base);
  if (cells.empty()) throw std::invalid_argument("sweep: no cells");
  if (q0 < 0.0) throw std::domain_error("sweep: q0 must be >= 0");
  if (pairs_per_run < 1)
    throw std::invalid_argument("sweep: pairs_per_run must be >= 1");
  if (base.precision != Precision::Float64)
    throw std::invalid_argument("sweep: Float64 only");
  for (const auto& cell : cells) {
    validate(cell.noise);
    validate(cell.init);
  }
  const int depth = base.shape.depth();
  const Eigen::Index dim = detail::width_at(base.shape, 0);
  const int pairs = pairs_per_run;
  const Eigen::Index cols = 2 * static_cast<Eigen::Index>(pairs);
  const std::size_t n_cells = cells.size();
  std::vector<std::vector<std::vector<double>>> per_cell(
      n_cells, std::vector<std::vector<double>>(
                   static_cast<std::size_t>(base.runs),
                   std::vector<double>(static_cast<std::size_t>(depth) + 1)));
  std::vector<std::uint64_t> keys;
  for (const auto& cell : cells) keys.push_back(sweep_cell_key(cell));

  std::vector<Eigen::MatrixXd> states(n_cells);
  for (int r = 0; r < base.runs; ++r) {
    // One standard pair block per run; each cell rebuilds its own c0 from
    // the same draws, so equal-c0 cells start from identical inputs.
    for (std::size_t ci = 0; ci < n_cells; ++ci) {
      Rng in_rng = make_rng(derive_seed(base.seed, r, detail::kRoleInput));
      states[ci] =
          generate_correlated_block(dim, pairs, cells[ci].c0, q0, in_rng);
      per_cell[ci][static_cast<std::size_t>(r)][0] =
          clamp_correlation(cells[ci].c0);
    }
    for (int l = 1; l <= depth; ++l) {
      const Eigen::Index rows = detail::width_at(base.shape, l);
      const Eigen::Index fan_in = detail::width_at(base.shape, l - 1);
      Rng w_rng = make_rng(derive_seed(base.seed, r, l, detail::kRoleWeights));
      Eigen::MatrixXd w_std(rows, fan_in);
      detail::fill_standard_normal(w_std, w_rng);
      Eigen::VectorXd b_std(rows);
      detail::fill_standard_normal(b_std, w_rng);
      for (std::size_t ci = 0; ci < n_cells; ++ci) {
        const auto& cell = cells[ci];
        Rng noise_rng = make_rng(
            derive_seed(base.seed, r, l, detail::kRoleNoise, keys[ci]));
        detail::activate_corrupt(states[ci], base.act, cell.noise, noise_rng,
                                 base.precision);
        Eigen::MatrixXd h(rows, cols);
        h.noalias() = w_std * states[ci];
        h *= cell.init.sigma_w / std::sqrt(static_cast<double>(fan_in));
        if (cell.init.sigma_b != 0.0)
          h.colwise() += (cell.init.sigma_b * b_std).eval();
        double c_sum = 0.0;
        for (int k = 0; k < pairs; ++k) {
          const auto ha = h.col(k);
          const auto hb = h.col(pairs + k);
          const double qa = detail::mean_sq(ha), qb = detail::mean_sq(hb);
          const double qab = ha.dot(hb) / static_cast<double>(rows);
          c_sum += (qa > 0.0 && qb > 0.0) ? qab / std::sqrt(qa * qb) : 0.0;
        }
        per_cell[ci][static_cast<std::size_t>(r)][static_cast<std::size_t>(
            l)] = c_sum / static_cast<double>(pairs);
        states[ci] = std::move(h);
      }
    }
  }

  std::vector<EmpiricalTrace> traces(n_cells);
  for (std::size_t ci = 0; ci < n_cells; ++ci) {
    traces[ci].kind = LayerTrace::Kind::Correlation;
    traces[ci].first_layer = 0;
    detail::reduce_runs(per_cell[ci], traces[ci]);
  }
  return traces;
}

namespace detail {

// One backprop run: forward pass storing pre-activations, standard-normal
// error seed at the top, backward sweep with per-layer weight streams.
// Returns error second moments for layers 1..L.
inline std::vector<double> backprop_run(const SimConfig& cfg, double q0,
                                        BackpropMode mode, int run) {
  const int depth = cfg.shape.depth();
  Rng in_rng = make_rng(derive_seed(cfg.seed, run, kRoleInput));
  Eigen::VectorXd state = generate_input(width_at(cfg.shape, 0), q0, in_rng);
  std::vector<Eigen::VectorXd> pre;
  pre.reserve(static_cast<std::size_t>(depth) + 1);
  pre.push_back(state);
  for (int l = 1; l <= depth; ++l) {
    Rng noise_rng = make_rng(derive_seed(cfg.seed, run, l, kRoleNoise));
    activate_corrupt(state, cfg.act, cfg.noise, noise_rng, cfg.precision);
    const Eigen::Index rows = width_at(cfg.shape, l);
    const Eigen::Index cols = state.size();
    Rng w_rng = make_rng(derive_seed(cfg.seed, run, l, kRoleWeights));
    Eigen::MatrixXd w(rows, cols);
    fill_standard_normal(w, w_rng);
    Eigen::VectorXd h = w * state;
    h *= cfg.init.sigma_w / std::sqrt(static_cast<double>(cols));
    Eigen::VectorXd b(rows);
    fill_standard_normal(b, w_rng);
    h += cfg.init.sigma_b * b;
    pre.push_back(h);
    state = std::move(h);
  }

  Rng seed_rng = make_rng(derive_seed(cfg.seed, run, kRoleErrorSeed));
  Eigen::VectorXd delta(width_at(cfg.shape, depth));
  fill_standard_normal(delta, seed_rng);
  std::vector<double> stats(static_cast<std::size_t>(depth));
  stats.back() = mean_sq(delta);
  for (int l = depth - 1; l >= 1; --l) {
    const Eigen::Index rows = width_at(cfg.shape, l + 1);
    const Eigen::Index cols = width_at(cfg.shape, l);
    const std::uint64_t role = mode == BackpropMode::TiedWeights
                                   ? kRoleWeights
                                   : kRoleBackWeights;
    Rng w_rng = make_rng(derive_seed(cfg.seed, run, l + 1, role));
    Eigen::MatrixXd w(rows, cols);
    fill_standard_normal(w, w_rng);
    Eigen::VectorXd back = w.transpose() * delta;
    back *= cfg.init.sigma_w / std::sqrt(static_cast<double>(cols));
    const auto& h = pre[static_cast<std::size_t>(l)];
    Eigen::VectorXd next(cols);
    for (Eigen::Index i = 0; i < cols; ++i)
      next[i] = cfg.act.dphi(h[i]) * back[i];
    stats[static_cast<std::size_t>(l - 1)] = mean_sq(next);
    delta = std::move(next);
  }
  return stats;
}

}  // namespace detail

// Error second moments per layer (1..L), seeded with a standard-normal error
// at the top layer. Tied mode regenerates the forward weight draws for the
// backward pass; independent mode uses its own streams.
inline EmpiricalTrace empirical_backprop_trace(
    const SimConfig& cfg, double q0,
    BackpropMode mode = BackpropMode::IndependentWeights) {
  validate(cfg);
  if (q0 < 0.0) throw std::domain_error("sim: q0 must be >= 0");
  if (cfg.precision != Precision::Float64)
    throw std::invalid_argument("backprop traces are Float64 only");
  std::vector<std::vector<double>> per_run;
  per_run.reserve(static_cast<std::size_t>(cfg.runs));
  for (int r = 0; r < cfg.runs; ++r)
    per_run.push_back(detail::backprop_run(cfg, q0, mode, r));
  EmpiricalTrace trace;
  trace.kind = LayerTrace::Kind::ErrorVariance;
  trace.first_layer = 1;
  detail::reduce_runs(per_run, trace);
  return trace;
}

// Layerwise ratios q_delta^l / q_delta^{l+1} (index l = 1..L-1), computed
// per run before the cross-run reduction so the deviation measures the
// ratio's run-to-run spread directly.
inline EmpiricalTrace empirical_backprop_ratios(
    const SimConfig& cfg, double q0,
    BackpropMode mode = BackpropMode::IndependentWeights) {
  validate(cfg);
  if (cfg.shape.depth() < 2)
    throw std::invalid_argument("ratios need depth >= 2");
  if (cfg.precision != Precision::Float64)
    throw std::invalid_argument("backprop traces are Float64 only");
  std::vector<std::vector<double>> per_run;
  per_run.reserve(static_cast<std::size_t>(cfg.runs));
  for (int r = 0; r < cfg.runs; ++r) {
    const std::vector<double> stats = detail::backprop_run(cfg, q0, mode, r);
    std::vector<double> ratios(stats.size() - 1);
    for (std::size_t i = 0; i + 1 < stats.size(); ++i)
      ratios[i] = stats[i] / stats[i + 1];
    per_run.push_back(std::move(ratios));
  }
  EmpiricalTrace trace;
  trace.kind = LayerTrace::Kind::ErrorVariance;
  trace.first_layer = 1;
  detail::reduce_runs(per_run, trace);
  return trace;
}

// One weight-variance setting of an overflow scan.
struct OverflowCell {
  double sigma_w_sq = 0.0;
  std::vector<int> layers;  // first out-of-range layer per run, -1 if none
  double median_layer = 0.0;
};

// Float32-emulated forward scan over several weight variances at a fixed
// noise level: per run and layer, each live cell applies its own scaling of
// the shared standard weight draw until the layer statistic leaves the
// normal float32 range (non-finite above, below FLT_MIN underneath). The
// per-cell detection layers are reduced to a median, which is robust to the
// occasional early or late run.
inline std::vector<OverflowCell> overflow_grid(
    int width, int max_depth, std::span<const double> sigma_w_sq,
    const NoiseSpec& noise, const Activation& act, double q0, int runs,
    std::uint64_t seed) {
  if (width < 1 || max_depth < 1 || runs < 1)
    throw std::invalid_argument("overflow: width, depth, runs must be >= 1");
  if (sigma_w_sq.empty()) throw std::invalid_argument("overflow: no cells");
  for (double sw2 : sigma_w_sq)
    if (!(sw2 > 0.0)) throw std::invalid_argument("overflow: sigma_w^2 > 0");
  validate(noise);
  if (!(q0 > 0.0)) throw std::domain_error("overflow: q0 must be > 0");

  const Eigen::Index dim = width;
  const double min_normal =
      static_cast<double>(std::numeric_limits<float>::min());
  std::vector<OverflowCell> cells(sigma_w_sq.size());
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    cells[ci].sigma_w_sq = sigma_w_sq[ci];
    cells[ci].layers.assign(static_cast<std::size_t>(runs), -1);
  }

  std::vector<Eigen::VectorXd> states(cells.size());
  std::vector<bool> live(cells.size());
  Eigen::MatrixXd w_std(dim, dim);  // reused across layers; dim^2 doubles
  for (int r = 0; r < runs; ++r) {
    Rng in_rng = make_rng(derive_seed(seed, r, detail::kRoleInput));
    Eigen::VectorXd x0 = generate_input(dim, q0, in_rng);
    detail::round32_inplace(x0);
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      states[ci] = x0;
      live[ci] = true;
    }
    int n_live = static_cast<int>(cells.size());
    for (int l = 1; l <= max_depth && n_live > 0; ++l) {
      Rng w_rng = make_rng(derive_seed(seed, r, l, detail::kRoleWeights));
      detail::fill_standard_normal(w_std, w_rng);
      for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        if (!live[ci]) continue;
        Rng noise_rng = make_rng(derive_seed(seed, r, l, detail::kRoleNoise));
        detail::activate_corrupt(states[ci], act, noise, noise_rng,
                                 Precision::Float32Emulated);
        Eigen::VectorXd h = w_std * states[ci];
        h *= std::sqrt(cells[ci].sigma_w_sq / static_cast<double>(dim));
        detail::round32_inplace(h);
        const double q = detail::round32(detail::mean_sq(h));
        if (!std::isfinite(q) || q < min_normal) {
          cells[ci].layers[static_cast<std::size_t>(r)] = l;
          live[ci] = false;
          --n_live;
        }
        states[ci] = std::move(h);
      }
    }
  }

  for (auto& cell : cells) {
    std::vector<double> sorted;
    for (int l : cell.layers)
      sorted.push_back(l < 0 ? std::numeric_limits<double>::infinity()
                             : static_cast<double>(l));
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double med = n % 2 == 1
                           ? sorted[n / 2]
                           : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    cell.median_layer = std::isfinite(med)
                            ? med
                            : std::numeric_limits<double>::quiet_NaN();
  }
  return cells;
}

// Depth-scale estimate from a simulated correlation trace. The fixed point
// is replaced by the trace's own plateau (mean of the last anchor_window
// layers) and the fit floor by three times the plateau's residual spread;
// the plateau window itself is excluded from the fit.
struct EmpiricalDepthScale {
  DepthScaleFit fit;
  double anchor = 0.0;
  double floor = 0.0;
};

inline EmpiricalDepthScale fit_empirical_depth_scale(
    const EmpiricalTrace& trace, int anchor_window = 8) {
  const int len = static_cast<int>(trace.mean.size());
  if (anchor_window < 2 || anchor_window >= len - 2)
    throw std::invalid_argument("fit: anchor window does not fit the trace");
  double anchor = 0.0;
  for (int i = len - anchor_window; i < len; ++i) anchor += trace.mean[i];
  anchor /= static_cast<double>(anchor_window);
  double rss = 0.0;
  for (int i = len - anchor_window; i < len; ++i) {
    const double r = trace.mean[i] - anchor;
    rss += r * r;
  }
  const double floor =
      std::max(1e-10, 3.0 * std::sqrt(rss / static_cast<double>(anchor_window)));
  LayerTrace fitted;
  fitted.kind = LayerTrace::Kind::Correlation;
  fitted.first_layer = trace.first_layer;
  fitted.values.assign(trace.mean.begin(),
                       trace.mean.begin() + (len - anchor_window));
  EmpiricalDepthScale out;
  out.anchor = anchor;
  out.floor = floor;
  out.fit = fit_depth_scale(fitted, anchor, floor);
  return out;
}

}  // namespace sigprop
