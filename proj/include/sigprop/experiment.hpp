#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sigprop/meanfield.hpp"
#include "sigprop/trace_io.hpp"

// Experiment plumbing shared by the CLI and its tests: a flat, serializable
// description of one subcommand invocation, named presets that pin every
// parameter of the standard experiments, and the resolution rules that turn
// the flat fields into library-level specs.

namespace sigprop {

struct ExperimentConfig {
  std::string command;
  std::string noise = "mult:dropout(0.6)";
  std::string act = "relu";
  // Init overrides; unset components come from the critical initialisation.
  std::optional<double> sigma_w;
  std::optional<double> sigma_b;
  int depth = 15;
  int width = 1000;
  int runs = 50;
  std::uint64_t seed = 0;
  double q0 = 4.0;
  std::vector<double> c0 = {0.0, 0.5, 0.9};
  std::vector<double> q_grid;      // qmap inputs; empty -> [0, 15] step 0.5
  std::vector<double> sweep;       // depth-scale noise levels; empty -> family default
  std::vector<double> sigma_w_sq;  // overflow cells; empty -> [0.1, 2.5] step 0.1
  bool simulate = false;
  std::string precision = "float64";
  std::string format;  // empty -> per-command default
  std::string out;     // empty -> default file name (critical-init: stdout)

  bool operator==(const ExperimentConfig&) const = default;
};

inline void to_json(ojson& j, const ExperimentConfig& cfg) {
  j = ojson{{"command", cfg.command},
            {"noise", cfg.noise},
            {"act", cfg.act},
            {"sigma_w", cfg.sigma_w ? ojson(*cfg.sigma_w) : ojson(nullptr)},
            {"sigma_b", cfg.sigma_b ? ojson(*cfg.sigma_b) : ojson(nullptr)},
            {"depth", cfg.depth},
            {"width", cfg.width},
            {"runs", cfg.runs},
            {"seed", cfg.seed},
            {"q0", cfg.q0},
            {"c0", cfg.c0},
            {"q_grid", cfg.q_grid},
            {"sweep", cfg.sweep},
            {"sigma_w_sq", cfg.sigma_w_sq},
            {"simulate", cfg.simulate},
            {"precision", cfg.precision},
            {"format", cfg.format},
            {"out", cfg.out}};
}

inline void from_json(const ojson& j, ExperimentConfig& cfg) {
  j.at("command").get_to(cfg.command);
  j.at("noise").get_to(cfg.noise);
  j.at("act").get_to(cfg.act);
  const auto opt = [&j](const char* key) -> std::optional<double> {
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  cfg.sigma_w = opt("sigma_w");
  cfg.sigma_b = opt("sigma_b");
  j.at("depth").get_to(cfg.depth);
  j.at("width").get_to(cfg.width);
  j.at("runs").get_to(cfg.runs);
  j.at("seed").get_to(cfg.seed);
  j.at("q0").get_to(cfg.q0);
  j.at("c0").get_to(cfg.c0);
  j.at("q_grid").get_to(cfg.q_grid);
  j.at("sweep").get_to(cfg.sweep);
  j.at("sigma_w_sq").get_to(cfg.sigma_w_sq);
  j.at("simulate").get_to(cfg.simulate);
  j.at("precision").get_to(cfg.precision);
  j.at("format").get_to(cfg.format);
  j.at("out").get_to(cfg.out);
}

namespace detail {

inline std::vector<double> arithmetic_grid(double start, double step,
                                           int count) {
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    grid[static_cast<std::size_t>(i)] = start + step * i;
  return grid;
}

}  // namespace detail

inline std::vector<double> default_q_grid() {
  return detail::arithmetic_grid(0.0, 0.5, 31);
}

inline std::vector<double> default_overflow_grid() {
  return detail::arithmetic_grid(0.1, 0.1, 25);
}

// Standard noise-level sweeps for the depth-scale experiment.
inline std::vector<double> default_sweep(const NoiseSpec& family) {
  if (family.family == NoiseFamily::Dropout)
    return detail::arithmetic_grid(0.1, 0.1, 9);
  if (family.family == NoiseFamily::Gaussian &&
      family.mode == NoiseMode::Multiplicative)
    return detail::arithmetic_grid(0.1, 0.15, 13);
  throw std::invalid_argument(
      "depth-scale: no default sweep for noise family '" +
      format_noise(family) + "'; pass explicit levels");
}

// The critical initialisation with per-component overrides applied.
inline InitSpec resolved_init(const ExperimentConfig& cfg,
                              const NoiseSpec& noise, const Activation& act) {
  InitSpec init;
  if (cfg.sigma_w) {
    init.sigma_w = *cfg.sigma_w;
    init.sigma_b = cfg.sigma_b.value_or(0.0);
  } else {
    init = critical_init(noise, act);
    if (cfg.sigma_b) init.sigma_b = *cfg.sigma_b;
  }
  validate(init);
  return init;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "variance-map",        "variance-dynamics", "correlation-dynamics",
      "depth-scale-dropout", "depth-scale-gaussian", "overflow-grid"};
  return names;
}

// Fully pinned configurations for the standard experiments.
inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig cfg;
  cfg.simulate = true;
  if (name == "variance-map") {
    cfg.command = "qmap";
    cfg.depth = 1;
  } else if (name == "variance-dynamics") {
    cfg.command = "dynamics";
  } else if (name == "correlation-dynamics") {
    cfg.command = "cmap";
  } else if (name == "depth-scale-dropout") {
    cfg.command = "depth-scale";
    cfg.depth = 40;
    cfg.c0 = {0.0, 0.9};
  } else if (name == "depth-scale-gaussian") {
    cfg.command = "depth-scale";
    cfg.noise = "mult:gaussian(1)";
    cfg.depth = 40;
    cfg.c0 = {0.0, 0.9};
  } else if (name == "overflow-grid") {
    cfg.command = "overflow-grid";
    cfg.q0 = 1.0;
    cfg.depth = 1000;
    cfg.runs = 10;
    cfg.precision = "float32";
  } else {
    std::string known;
    for (const auto& n : preset_names()) {
      if (!known.empty()) known += ", ";
      known += n;
    }
    throw std::invalid_argument("unknown preset '" + name + "'; known: " +
                                known);
  }
  return cfg;
}

// Per-command default serialization format.
inline std::string resolved_format(const ExperimentConfig& cfg) {
  if (!cfg.format.empty()) {
    const bool text_ok = cfg.command == "critical-init";
    if (cfg.format == "csv" || cfg.format == "json" ||
        (text_ok && cfg.format == "text"))
      return cfg.format;
    throw std::invalid_argument("format '" + cfg.format +
                                "' is not valid for " + cfg.command);
  }
  if (cfg.command == "critical-init") return "text";
  if (cfg.command == "cmap" || cfg.command == "depth-scale") return "json";
  return "csv";
}

// Output path resolution: an explicit path wins; otherwise the file is
// named after the command and placed in $SIGPROP_OUT_DIR (or the working
// directory). critical-init with no path writes to stdout instead.
inline constexpr const char* kOutDirEnv = "SIGPROP_OUT_DIR";

inline std::filesystem::path resolved_out_path(const ExperimentConfig& cfg) {
  if (!cfg.out.empty()) return cfg.out;
  const std::string format = resolved_format(cfg);
  const std::string ext = format == "json" ? ".json" : ".csv";
  std::filesystem::path dir;
  if (const char* env = std::getenv(kOutDirEnv)) dir = env;
  return dir / (cfg.command + ext);
}

}  // namespace sigprop
