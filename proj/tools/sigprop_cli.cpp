#include <cmath>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sigprop/experiment.hpp"
#include "sigprop/meanfield.hpp"
#include "sigprop/simulator.hpp"
#include "sigprop/trace_io.hpp"

// Exit codes: 0 success, 2 configuration error, 3 theory-domain error
// (no critical init, fixed-point/fit failures), 4 I/O failure.

namespace sigprop {
namespace {

struct Flags {
  ExperimentConfig v;
  double sigma_w = 0.0;
  double sigma_b = 0.0;
  std::string preset;
  std::string config_path;
};

enum : unsigned {
  kGroupInit = 1u << 0,
  kGroupSim = 1u << 1,
  kGroupQ0 = 1u << 2,
  kGroupC0 = 1u << 3,
  kGroupQGrid = 1u << 4,
  kGroupSweep = 1u << 5,
  kGroupOverflow = 1u << 6,
  kGroupDepth = 1u << 7,
  kGroupPrecision = 1u << 8,
};

void add_options(CLI::App* sub, Flags& f, unsigned groups) {
  sub->add_option("--noise", f.v.noise,
                  "noise spec: none, add:gaussian(s), add:laplace(b), "
                  "mult:gaussian(s), mult:laplace(b), mult:poisson, "
                  "mult:dropout(p)");
  sub->add_option("--act", f.v.act, "activation: relu, prelu(a), tanh");
  sub->add_option("--seed", f.v.seed, "base seed for all random streams");
  sub->add_option("--out", f.v.out, "output path (default: derived name)");
  sub->add_option("--format", f.v.format, "output format: csv or json");
  auto* preset =
      sub->add_option("--preset", f.preset, "named standard experiment");
  auto* config = sub->add_option("--config", f.config_path,
                                 "load a serialized experiment config");
  preset->excludes(config);
  if (groups & kGroupInit) {
    sub->add_option("--sigma-w", f.sigma_w,
                    "weight std override (default: critical)");
    sub->add_option("--sigma-b", f.sigma_b,
                    "bias std override (default: critical)");
  }
  if (groups & kGroupDepth)
    sub->add_option("--depth", f.v.depth, "number of weight layers");
  if (groups & kGroupSim) {
    sub->add_flag("--simulate", f.v.simulate,
                  "add wide-network Monte-Carlo measurements");
    sub->add_option("--width", f.v.width, "layer width for simulation");
    sub->add_option("--runs", f.v.runs, "independent weight samplings");
  }
  if (groups & kGroupPrecision)
    sub->add_option("--precision", f.v.precision,
                    "simulation arithmetic: float64 or float32");
  if (groups & kGroupQ0)
    sub->add_option("--q0", f.v.q0, "input second moment");
  if (groups & kGroupC0)
    sub->add_option("--c0", f.v.c0, "initial correlations of input pairs");
  if (groups & kGroupQGrid)
    sub->add_option("--q-grid", f.v.q_grid,
                    "input variances to map (default: 0..15 step 0.5)");
  if (groups & kGroupSweep)
    sub->add_option("--sweep", f.v.sweep,
                    "noise levels to sweep (default per family)");
  if (groups & kGroupOverflow)
    sub->add_option("--sigma-w-sq", f.v.sigma_w_sq,
                    "weight variances to scan (default: 0.1..2.5 step 0.1)");
}

ExperimentConfig resolve(const CLI::App* sub, const Flags& f,
                         const std::string& command) {
  ExperimentConfig cfg;
  if (!f.config_path.empty()) {
    cfg = ojson::parse(read_text(f.config_path)).get<ExperimentConfig>();
    if (!cfg.command.empty() && cfg.command != command)
      throw std::invalid_argument("config file describes '" + cfg.command +
                                  "', not '" + command + "'");
  } else if (!f.preset.empty()) {
    cfg = preset_config(f.preset);
    if (cfg.command != command)
      throw std::invalid_argument("preset '" + f.preset + "' belongs to '" +
                                  cfg.command + "', not '" + command + "'");
  }
  cfg.command = command;
  const auto seen = [sub](const char* name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (seen("--noise")) cfg.noise = f.v.noise;
  if (seen("--act")) cfg.act = f.v.act;
  if (seen("--sigma-w")) cfg.sigma_w = f.sigma_w;
  if (seen("--sigma-b")) cfg.sigma_b = f.sigma_b;
  if (seen("--depth")) cfg.depth = f.v.depth;
  if (seen("--width")) cfg.width = f.v.width;
  if (seen("--runs")) cfg.runs = f.v.runs;
  if (seen("--seed")) cfg.seed = f.v.seed;
  if (seen("--q0")) cfg.q0 = f.v.q0;
  if (seen("--c0")) cfg.c0 = f.v.c0;
  if (seen("--q-grid")) cfg.q_grid = f.v.q_grid;
  if (seen("--sweep")) cfg.sweep = f.v.sweep;
  if (seen("--sigma-w-sq")) cfg.sigma_w_sq = f.v.sigma_w_sq;
  if (seen("--simulate")) cfg.simulate = f.v.simulate;
  if (seen("--precision")) cfg.precision = f.v.precision;
  if (seen("--format")) cfg.format = f.v.format;
  if (seen("--out")) cfg.out = f.v.out;
  return cfg;
}

SimConfig make_sim(const ExperimentConfig& cfg, const NoiseSpec& noise,
                   const Activation& act, const InitSpec& init, int depth) {
  SimConfig sim;
  sim.shape = NetworkShape::constant(depth, cfg.width);
  sim.init = init;
  sim.noise = noise;
  sim.act = act;
  sim.runs = cfg.runs;
  sim.seed = cfg.seed;
  sim.precision = parse_precision(cfg.precision);
  return sim;
}

void emit(const ExperimentConfig& cfg, const std::string& text) {
  const auto path = resolved_out_path(cfg);
  write_text_atomic(path, text);
  std::cout << "wrote " << path.string() << "\n";
}

double effective_mu2(const NoiseSpec& noise) {
  return noise.mode == NoiseMode::Multiplicative ? second_moment(noise) : 1.0;
}

int cmd_critical_init(const ExperimentConfig& cfg) {
  const NoiseSpec noise = parse_noise(cfg.noise);
  const Activation act = parse_activation(cfg.act);
  InitSpec init;
  std::string diagnosis;
  bool exists = true;
  try {
    init = critical_init(noise, act);
  } catch (const NoCriticalInit& e) {
    exists = false;
    diagnosis = e.what();
  }
  const double mu2 = effective_mu2(noise);
  std::string text;
  if (resolved_format(cfg) == "text") {
    text = "noise " + format_noise(noise) + "\nact " +
           format_activation(act) + "\nmu2 " + format_double(mu2) + "\n";
    if (exists)
      text += "sigma_w " + format_double(init.sigma_w) + "\nsigma_b " +
              format_double(init.sigma_b) + "\n";
    else
      text += "no critical initialisation: " + diagnosis + "\n";
  } else {
    ojson payload{{"mu2", mu2}};
    payload["init"] = exists ? ojson(init) : ojson(nullptr);
    payload["diagnosis"] = exists ? ojson(nullptr) : ojson(diagnosis);
    text = dump_json(json_document(ojson(cfg), cfg.seed, payload));
  }
  if (cfg.out.empty())
    std::cout << text;
  else
    emit(cfg, text);
  return exists ? 0 : 3;
}

int cmd_qmap(const ExperimentConfig& cfg) {
  const NoiseSpec noise = parse_noise(cfg.noise);
  const Activation act = parse_activation(cfg.act);
  const InitSpec init = resolved_init(cfg, noise, act);
  const auto grid = cfg.q_grid.empty() ? default_q_grid() : cfg.q_grid;
  std::vector<double> theory;
  theory.reserve(grid.size());
  for (double q : grid) theory.push_back(variance_step(q, init, noise, act));
  std::vector<double> sim_mean, sim_std;
  if (cfg.simulate) {
    const SimConfig sim = make_sim(cfg, noise, act, init, 1);
    for (double q : grid) {
      const EmpiricalTrace trace = empirical_variance_trace(sim, q);
      sim_mean.push_back(trace.mean[1]);
      sim_std.push_back(trace.std[1]);
    }
  }
  const ojson config = cfg;
  std::string text;
  if (resolved_format(cfg) == "csv") {
    CsvTable table;
    table.columns = {"q_in", "q_out"};
    if (cfg.simulate)
      for (const char* col : {"sim_mean", "sim_std", "n_runs"})
        table.columns.emplace_back(col);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      std::vector<double> row = {grid[i], theory[i]};
      if (cfg.simulate) {
        row.push_back(sim_mean[i]);
        row.push_back(sim_std[i]);
        row.push_back(static_cast<double>(cfg.runs));
      }
      table.rows.push_back(std::move(row));
    }
    text = csv_document(table, config, cfg.seed);
  } else {
    ojson payload{{"resolved_init", init}, {"q_in", grid}, {"q_out", theory}};
    if (cfg.simulate) {
      payload["sim_mean"] = sim_mean;
      payload["sim_std"] = sim_std;
      payload["n_runs"] = cfg.runs;
    }
    text = dump_json(json_document(config, cfg.seed, payload));
  }
  emit(cfg, text);
  return 0;
}

int cmd_dynamics(const ExperimentConfig& cfg) {
  const NoiseSpec noise = parse_noise(cfg.noise);
  const Activation act = parse_activation(cfg.act);
  const InitSpec init = resolved_init(cfg, noise, act);
  const LayerTrace theory =
      variance_trace(cfg.q0, cfg.depth, init, noise, act);
  std::optional<EmpiricalTrace> sim;
  if (cfg.simulate)
    sim = empirical_variance_trace(make_sim(cfg, noise, act, init, cfg.depth),
                                   cfg.q0);
  const ojson config = cfg;
  std::string text;
  if (resolved_format(cfg) == "csv") {
    CsvTable table;
    if (sim) {
      table.columns = {"layer", "theory", "mean", "std", "n_runs"};
      for (std::size_t i = 0; i < theory.values.size(); ++i)
        table.rows.push_back({static_cast<double>(theory.layer_of(i)),
                              theory.values[i], sim->mean[i], sim->std[i],
                              static_cast<double>(sim->n_runs)});
    } else {
      table = csv_table(theory);
    }
    text = csv_document(table, config, cfg.seed);
  } else {
    ojson payload{{"resolved_init", init}, {"theory", theory}};
    payload["empirical"] = sim ? ojson(*sim) : ojson(nullptr);
    text = dump_json(json_document(config, cfg.seed, payload));
  }
  emit(cfg, text);
  return 0;
}

int cmd_cmap(const ExperimentConfig& cfg) {
  const NoiseSpec noise = parse_noise(cfg.noise);
  const Activation act = parse_activation(cfg.act);
  const InitSpec init = resolved_init(cfg, noise, act);
  const double mu2 = effective_mu2(noise);

  // The closed fixed-point theory applies to ReLU at criticality; off that
  // regime the map table is still exact but the fixed-point block is
  // omitted.
  bool closed = act.kind() == Activation::Kind::ReLU;
  if (closed) {
    try {
      const InitSpec critical = critical_init(noise, act);
      closed = std::abs(critical.sigma_w - init.sigma_w) < 1e-9 &&
               std::abs(critical.sigma_b - init.sigma_b) < 1e-9;
    } catch (const NoCriticalInit&) {
      closed = false;
    }
  }

  const auto c_grid = detail::arithmetic_grid(-1.0, 0.05, 41);
  std::vector<double> c_out;
  c_out.reserve(c_grid.size());
  for (double c : c_grid)
    c_out.push_back(
        correlation_step_general(c, cfg.q0, cfg.q0, init, noise, act).c);

  const ojson config = cfg;
  std::string text;
  if (resolved_format(cfg) == "csv") {
    CsvTable table;
    table.columns = {"c_in", "c_out"};
    for (std::size_t i = 0; i < c_grid.size(); ++i)
      table.rows.push_back({c_grid[i], c_out[i]});
    text = csv_document(table, config, cfg.seed);
  } else {
    ojson payload{{"mu2", mu2},
                  {"resolved_init", init},
                  {"map", ojson{{"c_in", c_grid}, {"c_out", c_out}}}};
    if (closed) {
      const FixedPointResult fp = correlation_fixed_point(mu2);
      payload["fixed_point"] = fp;
      payload["chi"] = chi(fp.value, mu2);
      payload["xi"] = depth_scale(mu2);
      ojson theory_traces = ojson::array();
      for (double c0 : cfg.c0)
        theory_traces.push_back(
            correlation_trace_relu_critical(c0, cfg.depth, mu2));
      payload["theory_traces"] = std::move(theory_traces);
    } else {
      payload["fixed_point"] = nullptr;
      payload["chi"] = nullptr;
      payload["xi"] = nullptr;
      payload["theory_traces"] = nullptr;
    }
    if (cfg.simulate) {
      const SimConfig base = make_sim(cfg, noise, act, init, cfg.depth);
      std::vector<SweepCell> cells;
      cells.reserve(cfg.c0.size());
      for (double c0 : cfg.c0) cells.push_back({noise, init, c0});
      payload["empirical_traces"] = correlation_sweep(base, cells, cfg.q0);
    } else {
      payload["empirical_traces"] = nullptr;
    }
    text = dump_json(json_document(config, cfg.seed, payload));
  }
  emit(cfg, text);
  return 0;
}

int cmd_depth_scale(const ExperimentConfig& cfg) {
  const NoiseSpec family = parse_noise(cfg.noise);
  const Activation act = parse_activation(cfg.act);
  if (act.kind() != Activation::Kind::ReLU)
    throw std::invalid_argument(
        "depth-scale: the closed correlation theory needs relu");
  if (cfg.sigma_w || cfg.sigma_b)
    throw std::invalid_argument(
        "depth-scale runs at criticality; drop the init overrides");
  const auto levels = cfg.sweep.empty() ? default_sweep(family) : cfg.sweep;
  const int pairs_per_run = 50;

  struct Level {
    double param = 0.0;
    double mu2 = 0.0;
    double c_star = 0.0;
    double chi_star = 0.0;
    double xi_theory = 0.0;
    InitSpec init;
    std::optional<DepthScaleFit> fit_theory;
    std::vector<std::optional<EmpiricalDepthScale>> fits_sim;
    std::optional<double> xi_sim;
  };

  std::vector<Level> rows;
  std::vector<SweepCell> cells;
  for (double param : levels) {
    NoiseSpec spec = family;
    spec.param = param;
    validate(spec);
    Level row;
    row.param = param;
    row.mu2 = second_moment(spec);
    row.init = critical_init(spec, act);
    const FixedPointResult fp = correlation_fixed_point(row.mu2);
    row.c_star = fp.value;
    row.chi_star = chi(fp.value, row.mu2);
    row.xi_theory = depth_scale(row.mu2);
    try {
      row.fit_theory = fit_depth_scale(
          correlation_trace_relu_critical(0.9, cfg.depth, row.mu2),
          row.c_star);
    } catch (const FitError&) {
    }
    rows.push_back(std::move(row));
    if (cfg.simulate)
      for (double c0 : cfg.c0) cells.push_back({spec, rows.back().init, c0});
  }

  if (cfg.simulate) {
    SimConfig base;
    base.shape = NetworkShape::constant(cfg.depth, cfg.width);
    base.init = rows.front().init;
    base.noise = family;
    base.act = act;
    base.runs = cfg.runs;
    base.seed = cfg.seed;
    const auto traces = correlation_sweep(base, cells, cfg.q0, pairs_per_run);
    std::size_t ti = 0;
    for (auto& row : rows) {
      double sum = 0.0;
      int n = 0;
      for (std::size_t ci = 0; ci < cfg.c0.size(); ++ci, ++ti) {
        try {
          const auto est = fit_empirical_depth_scale(traces[ti]);
          sum += est.fit.xi;
          ++n;
          row.fits_sim.push_back(est);
        } catch (const FitError&) {
          row.fits_sim.push_back(std::nullopt);
        }
      }
      if (n > 0) row.xi_sim = sum / n;
    }
  }

  const ojson config = cfg;
  std::string text;
  if (resolved_format(cfg) == "csv") {
    CsvTable table;
    table.columns = {"param",     "mu2",           "c_star",
                     "chi",       "xi_theory",     "xi_theory_fit",
                     "xi_sim_fit"};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& row : rows)
      table.rows.push_back(
          {row.param, row.mu2, row.c_star, row.chi_star, row.xi_theory,
           row.fit_theory ? row.fit_theory->xi : nan,
           row.xi_sim ? *row.xi_sim : nan});
    text = csv_document(table, config, cfg.seed);
  } else {
    ojson levels_json = ojson::array();
    for (const auto& row : rows) {
      ojson r{{"param", row.param},
              {"mu2", row.mu2},
              {"c_star", row.c_star},
              {"chi", row.chi_star},
              {"xi_theory", row.xi_theory},
              {"resolved_init", row.init}};
      r["fit_theory"] = row.fit_theory ? ojson(*row.fit_theory) : ojson(nullptr);
      if (cfg.simulate) {
        ojson fits = ojson::array();
        for (std::size_t ci = 0; ci < row.fits_sim.size(); ++ci) {
          ojson entry{{"c0", cfg.c0[ci]}};
          entry["estimate"] =
              row.fits_sim[ci] ? ojson(*row.fits_sim[ci]) : ojson(nullptr);
          fits.push_back(std::move(entry));
        }
        r["fits_sim"] = std::move(fits);
        r["xi_sim"] = row.xi_sim ? ojson(*row.xi_sim) : ojson(nullptr);
      }
      levels_json.push_back(std::move(r));
    }
    text = dump_json(
        json_document(config, cfg.seed, ojson{{"levels", levels_json}}));
  }
  emit(cfg, text);
  return 0;
}

int cmd_overflow_grid(const ExperimentConfig& cfg) {
  const NoiseSpec noise = parse_noise(cfg.noise);
  const Activation act = parse_activation(cfg.act);
  const auto grid =
      cfg.sigma_w_sq.empty() ? default_overflow_grid() : cfg.sigma_w_sq;
  const auto cells = overflow_grid(cfg.width, cfg.depth, grid, noise, act,
                                   cfg.q0, cfg.runs, cfg.seed);
  std::vector<double> predicted;
  predicted.reserve(cells.size());
  for (const auto& cell : cells)
    predicted.push_back(
        overflow_depth({std::sqrt(cell.sigma_w_sq), 0.0}, noise, cfg.q0));

  const ojson config = cfg;
  std::string text;
  if (resolved_format(cfg) == "csv") {
    CsvTable table;
    table.columns = {"sigma_w_sq", "median_layer", "predicted",
                     "predicted_ceil"};
    for (std::size_t i = 0; i < cells.size(); ++i)
      table.rows.push_back({cells[i].sigma_w_sq, cells[i].median_layer,
                            predicted[i], std::ceil(predicted[i])});
    text = csv_document(table, config, cfg.seed);
  } else {
    ojson rows = ojson::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const bool finite = std::isfinite(cells[i].median_layer);
      ojson row{{"sigma_w_sq", cells[i].sigma_w_sq},
                {"median_layer",
                 finite ? ojson(cells[i].median_layer) : ojson(nullptr)},
                {"predicted", std::isfinite(predicted[i])
                                  ? ojson(predicted[i])
                                  : ojson(nullptr)},
                {"layers", cells[i].layers}};
      rows.push_back(std::move(row));
    }
    text = dump_json(
        json_document(config, cfg.seed, ojson{{"cells", rows}}));
  }
  emit(cfg, text);
  return 0;
}

int run_command(const ExperimentConfig& cfg) {
  if (cfg.command == "critical-init") return cmd_critical_init(cfg);
  if (cfg.command == "qmap") return cmd_qmap(cfg);
  if (cfg.command == "dynamics") return cmd_dynamics(cfg);
  if (cfg.command == "cmap") return cmd_cmap(cfg);
  if (cfg.command == "depth-scale") return cmd_depth_scale(cfg);
  if (cfg.command == "overflow-grid") return cmd_overflow_grid(cfg);
  throw std::invalid_argument("unknown command '" + cfg.command + "'");
}

}  // namespace
}  // namespace sigprop

int main(int argc, char** argv) {
  using namespace sigprop;
  CLI::App app{
      "mean-field signal propagation in noise-regularised deep networks"};
  app.set_version_flag("--version",
                       std::string(kToolName) + " " + kToolVersion);
  app.require_subcommand(1);

  struct Sub {
    std::string name;
    CLI::App* app = nullptr;
    std::shared_ptr<Flags> flags;
  };
  std::vector<Sub> subs;
  const auto add = [&](const char* name, const char* desc, unsigned groups) {
    Sub sub{name, app.add_subcommand(name, desc), std::make_shared<Flags>()};
    add_options(sub.app, *sub.flags, groups);
    subs.push_back(std::move(sub));
  };
  add("critical-init",
      "critical initialisation for a noise level, or why none exists", 0);
  add("qmap", "one-step variance map over a grid of input variances",
      kGroupInit | kGroupSim | kGroupQGrid | kGroupPrecision);
  add("dynamics", "layerwise variance trace, theory and simulation",
      kGroupInit | kGroupSim | kGroupQ0 | kGroupDepth | kGroupPrecision);
  add("cmap", "correlation map, fixed point, and correlation dynamics",
      kGroupInit | kGroupSim | kGroupQ0 | kGroupC0 | kGroupDepth);
  add("depth-scale",
      "correlation depth scales across a noise sweep, theory vs fits",
      kGroupSim | kGroupQ0 | kGroupC0 | kGroupSweep | kGroupDepth);
  add("overflow-grid",
      "float32 overflow/underflow layer versus the predicted depth",
      kGroupSim | kGroupQ0 | kGroupOverflow | kGroupDepth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    for (const auto& sub : subs)
      if (sub.app->parsed())
        return run_command(resolve(sub.app, *sub.flags, sub.name));
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const NoCriticalInit& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const FitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ojson::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
