#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sigprop/format.hpp"
#include "sigprop/meanfield.hpp"
#include "sigprop/simulator.hpp"

// Serialization shared by the theory and simulation sides, so their files
// are directly diffable. CSV carries one table plus provenance comments;
// JSON carries the same provenance envelope around arbitrary payloads.
// Numbers go through the shortest-round-trip formatter, which makes file
// output byte-stable across reruns of the same seed.

namespace sigprop {

using ojson = nlohmann::ordered_json;

inline constexpr const char* kToolName = "sigprop";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

// Filesystem failures get their own type so the CLI can map them to a
// dedicated exit code.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string_view trace_kind_name(LayerTrace::Kind kind) {
  switch (kind) {
    case LayerTrace::Kind::Variance:
      return "variance";
    case LayerTrace::Kind::Correlation:
      return "correlation";
    case LayerTrace::Kind::ErrorVariance:
      return "error-variance";
    case LayerTrace::Kind::ErrorCovariance:
      return "error-covariance";
  }
  throw std::logic_error("unreachable");
}

inline LayerTrace::Kind parse_trace_kind(std::string_view name) {
  if (name == "variance") return LayerTrace::Kind::Variance;
  if (name == "correlation") return LayerTrace::Kind::Correlation;
  if (name == "error-variance") return LayerTrace::Kind::ErrorVariance;
  if (name == "error-covariance") return LayerTrace::Kind::ErrorCovariance;
  throw std::invalid_argument("unknown trace kind '" + std::string(name) +
                              "'");
}

inline std::string_view precision_name(Precision p) {
  return p == Precision::Float64 ? "float64" : "float32";
}

inline Precision parse_precision(std::string_view name) {
  if (name == "float64") return Precision::Float64;
  if (name == "float32") return Precision::Float32Emulated;
  throw std::invalid_argument("precision '" + std::string(name) +
                              "': expected float64 or float32");
}

inline void to_json(ojson& j, const InitSpec& init) {
  j = ojson{{"sigma_w", init.sigma_w}, {"sigma_b", init.sigma_b}};
}

inline void from_json(const ojson& j, InitSpec& init) {
  j.at("sigma_w").get_to(init.sigma_w);
  j.at("sigma_b").get_to(init.sigma_b);
}

inline void to_json(ojson& j, const NoiseSpec& spec) {
  j = format_noise(spec);
}

inline void from_json(const ojson& j, NoiseSpec& spec) {
  spec = parse_noise(j.get<std::string>());
}

inline void to_json(ojson& j, const NetworkShape& shape) {
  j = ojson{{"widths", shape.widths}};
}

inline void from_json(const ojson& j, NetworkShape& shape) {
  j.at("widths").get_to(shape.widths);
  validate(shape);
}

inline void to_json(ojson& j, const SimConfig& cfg) {
  j = ojson{{"shape", cfg.shape},
            {"init", cfg.init},
            {"noise", cfg.noise},
            {"act", format_activation(cfg.act)},
            {"runs", cfg.runs},
            {"seed", cfg.seed},
            {"precision", precision_name(cfg.precision)}};
}

inline void from_json(const ojson& j, SimConfig& cfg) {
  j.at("shape").get_to(cfg.shape);
  j.at("init").get_to(cfg.init);
  j.at("noise").get_to(cfg.noise);
  cfg.act = parse_activation(j.at("act").get<std::string>());
  j.at("runs").get_to(cfg.runs);
  j.at("seed").get_to(cfg.seed);
  cfg.precision = parse_precision(j.at("precision").get<std::string>());
}

inline void to_json(ojson& j, const LayerTrace& trace) {
  j = ojson{{"kind", trace_kind_name(trace.kind)},
            {"first_layer", trace.first_layer},
            {"initial", trace.initial},
            {"values", trace.values}};
}

inline void from_json(const ojson& j, LayerTrace& trace) {
  trace.kind = parse_trace_kind(j.at("kind").get<std::string>());
  j.at("first_layer").get_to(trace.first_layer);
  j.at("initial").get_to(trace.initial);
  j.at("values").get_to(trace.values);
}

inline void to_json(ojson& j, const EmpiricalTrace& trace) {
  j = ojson{{"kind", trace_kind_name(trace.kind)},
            {"first_layer", trace.first_layer},
            {"n_runs", trace.n_runs},
            {"mean", trace.mean},
            {"std", trace.std}};
  j["overflow_layer"] =
      trace.overflow_layer ? ojson(*trace.overflow_layer) : ojson(nullptr);
}

inline void from_json(const ojson& j, EmpiricalTrace& trace) {
  trace.kind = parse_trace_kind(j.at("kind").get<std::string>());
  j.at("first_layer").get_to(trace.first_layer);
  j.at("n_runs").get_to(trace.n_runs);
  j.at("mean").get_to(trace.mean);
  j.at("std").get_to(trace.std);
  const auto& layer = j.at("overflow_layer");
  trace.overflow_layer =
      layer.is_null() ? std::nullopt : std::optional<int>(layer.get<int>());
}

inline void to_json(ojson& j, const FixedPointResult& fp) {
  j = ojson{{"value", fp.value},
            {"residual", fp.residual},
            {"iterations", fp.iterations},
            {"converged", fp.converged},
            {"marginal", fp.marginal}};
}

inline void from_json(const ojson& j, FixedPointResult& fp) {
  j.at("value").get_to(fp.value);
  j.at("residual").get_to(fp.residual);
  j.at("iterations").get_to(fp.iterations);
  j.at("converged").get_to(fp.converged);
  j.at("marginal").get_to(fp.marginal);
}

inline void to_json(ojson& j, const DepthScaleFit& fit) {
  j = ojson{{"slope", fit.slope},
            {"intercept", fit.intercept},
            {"xi", fit.xi},
            {"r_squared", fit.r_squared},
            {"first_layer_used", fit.first_layer_used},
            {"last_layer_used", fit.last_layer_used},
            {"n_points", fit.n_points}};
}

inline void from_json(const ojson& j, DepthScaleFit& fit) {
  j.at("slope").get_to(fit.slope);
  j.at("intercept").get_to(fit.intercept);
  j.at("xi").get_to(fit.xi);
  j.at("r_squared").get_to(fit.r_squared);
  j.at("first_layer_used").get_to(fit.first_layer_used);
  j.at("last_layer_used").get_to(fit.last_layer_used);
  j.at("n_points").get_to(fit.n_points);
}

inline void to_json(ojson& j, const EmpiricalDepthScale& est) {
  j = ojson{{"fit", est.fit}, {"anchor", est.anchor}, {"floor", est.floor}};
}

inline void from_json(const ojson& j, EmpiricalDepthScale& est) {
  j.at("fit").get_to(est.fit);
  j.at("anchor").get_to(est.anchor);
  j.at("floor").get_to(est.floor);
}

// Provenance lines shared by every output file: tool version, schema
// version, the fully resolved configuration, and the seed.
inline std::string csv_provenance(const ojson& config, std::uint64_t seed) {
  std::string out;
  out += "# ";
  out += kToolName;
  out += " ";
  out += kToolVersion;
  out += " schema ";
  out += std::to_string(kSchemaVersion);
  out += "\n# config ";
  out += config.dump();
  out += "\n# seed ";
  out += std::to_string(seed);
  out += "\n";
  return out;
}

// JSON envelope carrying the same provenance around a payload object.
inline ojson json_document(const ojson& config, std::uint64_t seed,
                           ojson payload) {
  ojson doc{{"tool", kToolName},
            {"version", kToolVersion},
            {"schema", kSchemaVersion},
            {"seed", seed},
            {"config", config}};
  for (auto& [key, value] : payload.items()) doc[key] = std::move(value);
  return doc;
}

inline std::string dump_json(const ojson& j) { return j.dump(2) + "\n"; }

// One CSV table: named columns over double-valued rows.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

inline std::string csv_body(const CsvTable& table) {
  std::string out;
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out += ',';
    out += table.columns[i];
  }
  out += '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size())
      throw std::invalid_argument("csv: row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

inline CsvTable csv_table(const LayerTrace& trace) {
  CsvTable table;
  table.columns = {"layer", "value"};
  for (std::size_t i = 0; i < trace.values.size(); ++i)
    table.rows.push_back(
        {static_cast<double>(trace.layer_of(i)), trace.values[i]});
  return table;
}

inline CsvTable csv_table(const EmpiricalTrace& trace) {
  CsvTable table;
  table.columns = {"layer", "mean", "std", "n_runs"};
  for (std::size_t i = 0; i < trace.mean.size(); ++i)
    table.rows.push_back({static_cast<double>(trace.layer_of(i)),
                          trace.mean[i], trace.std[i],
                          static_cast<double>(trace.n_runs)});
  return table;
}

// A parsed CSV file: provenance header plus the table.
struct CsvFile {
  std::string tool;
  std::string version;
  int schema = 0;
  ojson config;
  std::uint64_t seed = 0;
  CsvTable table;
};

inline std::string csv_document(const CsvTable& table, const ojson& config,
                                std::uint64_t seed) {
  return csv_provenance(config, seed) + csv_body(table);
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(line.substr(start));
      return parts;
    }
    parts.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

inline CsvFile parse_csv(std::string_view text) {
  CsvFile file;
  bool header_done = false;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "csv line " + std::to_string(line_no);
    if (line.starts_with("#")) {
      if (header_done)
        throw std::invalid_argument(where + ": comment after data");
      const std::string_view body =
          line.starts_with("# ") ? line.substr(2) : line.substr(1);
      if (body.starts_with("config ")) {
        file.config = ojson::parse(body.substr(7), nullptr, true);
      } else if (body.starts_with("seed ")) {
        file.seed = std::stoull(std::string(body.substr(5)));
      } else if (body.starts_with(kToolName)) {
        const auto parts = detail::split(body, ' ');
        if (parts.size() != 4 || parts[2] != "schema")
          throw std::invalid_argument(where + ": malformed tool line");
        file.tool = std::string(parts[0]);
        file.version = std::string(parts[1]);
        file.schema = std::stoi(std::string(parts[3]));
      } else {
        throw std::invalid_argument(where + ": unknown provenance line");
      }
      continue;
    }
    if (!header_done) {
      for (const auto col : detail::split(line, ','))
        file.table.columns.emplace_back(col);
      if (file.table.columns.empty())
        throw std::invalid_argument(where + ": empty header");
      header_done = true;
      continue;
    }
    const auto cells = detail::split(line, ',');
    if (cells.size() != file.table.columns.size())
      throw std::invalid_argument(where + ": expected " +
                                  std::to_string(file.table.columns.size()) +
                                  " cells, got " +
                                  std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto cell : cells) row.push_back(parse_double(cell));
    file.table.rows.push_back(std::move(row));
  }
  if (!header_done) throw std::invalid_argument("csv: no column header");
  return file;
}

inline LayerTrace theory_trace_from_csv(const CsvFile& file) {
  if (file.table.columns != std::vector<std::string>{"layer", "value"})
    throw std::invalid_argument("csv: not a theory trace table");
  if (file.table.rows.empty()) throw std::invalid_argument("csv: no rows");
  LayerTrace trace;
  if (file.config.contains("kind"))
    trace.kind = parse_trace_kind(file.config["kind"].get<std::string>());
  trace.first_layer = static_cast<int>(file.table.rows.front()[0]);
  for (const auto& row : file.table.rows) trace.values.push_back(row[1]);
  trace.initial = trace.values.front();
  return trace;
}

inline EmpiricalTrace empirical_trace_from_csv(const CsvFile& file) {
  const std::vector<std::string> want = {"layer", "mean", "std", "n_runs"};
  if (file.table.columns != want)
    throw std::invalid_argument("csv: not an empirical trace table");
  if (file.table.rows.empty()) throw std::invalid_argument("csv: no rows");
  EmpiricalTrace trace;
  if (file.config.contains("kind"))
    trace.kind = parse_trace_kind(file.config["kind"].get<std::string>());
  trace.first_layer = static_cast<int>(file.table.rows.front()[0]);
  trace.n_runs = static_cast<int>(file.table.rows.front()[3]);
  for (const auto& row : file.table.rows) {
    trace.mean.push_back(row[1]);
    trace.std.push_back(row[2]);
  }
  return trace;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return content;
}

// Writes through a sibling temp file and renames over the target, so a
// crash mid-write never leaves a truncated file at the final path.
inline void write_text_atomic(const std::filesystem::path& path,
                              std::string_view content) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(),
              static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ec2;
    fs::remove(tmp, ec2);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() +
                  ": " + ec.message());
  }
}

}  // namespace sigprop
