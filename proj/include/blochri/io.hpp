#pragma once

// File formats: run config, pulse-sequence files, CSV curves and run
// manifests. Every physical quantity carries its unit in the key name.

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blochri/dynamics.hpp"
#include "blochri/error.hpp"
#include "blochri/interferometer.hpp"
#include "blochri/lattice.hpp"
#include "blochri/shortcut.hpp"

#ifndef BLOCHRI_VERSION
#define BLOCHRI_VERSION "0.0.0-dev"
#endif

namespace blochri::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kSequenceFormat = "blochri.pulse_sequence.v1";
inline constexpr const char* kManifestFormat = "blochri.manifest.v1";

inline std::string code_version() { return BLOCHRI_VERSION; }

inline std::string sha256_hex(const std::string& data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw NumericalFailure("SHA-256 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << content;
  if (!out) throw ValidationError("write failed for " + path.string());
}

inline json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(origin + ": " + e.what());
  }
}

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ValidationError("unknown key '" + key + "' in " + where);
}

template <class T>
T get_or(const json& obj, const std::string& key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + " has the wrong type");
  }
}

}  // namespace detail

// ---------------------------------------------------------------- lattice

inline Geometry parse_geometry(const std::string& s) {
  if (s == "triangular") return Geometry::Triangular3Beam;
  if (s == "standing_wave_1d") return Geometry::StandingWave1D;
  throw ValidationError("unknown geometry '" + s + "'");
}

inline PotentialConvention parse_convention(const std::string& s) {
  if (s == "single_beam") return PotentialConvention::SingleBeam;
  if (s == "peak_to_trough") return PotentialConvention::PeakToTrough;
  throw ValidationError("unknown potential_convention '" + s + "'");
}

inline json lattice_to_json(const LatticeSpec& spec) {
  return {{"geometry", to_string(spec.geometry)},
          {"wavelength_nm", spec.wavelength_m * 1e9},
          {"depth_Er", spec.depth_er},
          {"atom_mass_kg", spec.atom_mass_kg},
          {"potential_convention", to_string(spec.convention)}};
}

inline LatticeSpec lattice_from_json(const json& j) {
  const std::string where = "lattice";
  detail::reject_unknown(j, {"geometry", "wavelength_nm", "depth_Er", "atom_mass_kg", "potential_convention"}, where);
  LatticeSpec spec;
  spec.geometry = parse_geometry(detail::get_or<std::string>(j, "geometry", "triangular", where));
  spec.wavelength_m = detail::get_or<double>(j, "wavelength_nm", 1064.0, where) * 1e-9;
  spec.depth_er = detail::get_or<double>(j, "depth_Er", 5.0, where);
  spec.atom_mass_kg = detail::get_or<double>(j, "atom_mass_kg", constants::rb87_mass, where);
  spec.convention = parse_convention(detail::get_or<std::string>(j, "potential_convention", "single_beam", where));
  spec.validate();
  return spec;
}

// --------------------------------------------------------------- ensemble

/// Ensemble block of the config. Widths may be given as a measured width
/// (interpreted per `width_reading`) or directly as sigma.
struct EnsembleConfig {
  EnsembleSpec spec;
  WidthReading reading = WidthReading::Fwhm;
  std::optional<double> width_hbar_k;
  json source = json::object();
};

inline EnsembleConfig ensemble_from_json(const json& j) {
  const std::string where = "ensemble";
  detail::reject_unknown(j, {"distribution", "width_hbar_k", "sigma_hbar_k", "width_reading", "quadrature", "width_schedule"},
                         where);
  EnsembleConfig cfg;
  cfg.source = j;
  const auto dist = detail::get_or<std::string>(j, "distribution", "gaussian", where);
  if (dist == "gaussian")
    cfg.spec.distribution = Distribution::IsotropicGaussian;
  else if (dist == "delta")
    cfg.spec.distribution = Distribution::DeltaAtGamma;
  else
    throw ValidationError("unknown ensemble.distribution '" + dist + "'");

  const auto reading = detail::get_or<std::string>(j, "width_reading", "fwhm", where);
  if (reading == "fwhm")
    cfg.reading = WidthReading::Fwhm;
  else if (reading == "two_sigma")
    cfg.reading = WidthReading::TwoSigma;
  else
    throw ValidationError("unknown ensemble.width_reading '" + reading + "'");

  if (j.contains("width_hbar_k") && j.contains("sigma_hbar_k"))
    throw ValidationError("give either ensemble.width_hbar_k or ensemble.sigma_hbar_k, not both");
  if (j.contains("width_hbar_k")) {
    cfg.width_hbar_k = detail::get_or<double>(j, "width_hbar_k", 0.0, where);
    cfg.spec.sigma_q = sigma_from_width(*cfg.width_hbar_k, cfg.reading);
  } else {
    cfg.spec.sigma_q = detail::get_or<double>(j, "sigma_hbar_k", 0.0, where);
  }
  cfg.spec.quadrature = detail::get_or<int>(j, "quadrature", 21, where);
  if (j.contains("width_schedule")) {
    for (const auto& p : j.at("width_schedule")) {
      detail::reject_unknown(p, {"t_us", "width_hbar_k"}, "ensemble.width_schedule[]");
      if (!p.contains("t_us") || !p.contains("width_hbar_k"))
        throw ValidationError("width_schedule entries need t_us and width_hbar_k");
      cfg.spec.width_schedule.push_back(
          {p.at("t_us").get<double>(), sigma_from_width(p.at("width_hbar_k").get<double>(), cfg.reading)});
    }
  }
  cfg.spec.validate();
  return cfg;
}

// -------------------------------------------------------------- optimizer

inline json optimizer_to_json(const OptimizerOptions& o) {
  return {{"max_iters", o.max_iters},
          {"fd_step_us", o.fd_step},
          {"learning_rate_us2", o.learning_rate},
          {"min_duration_us", o.min_duration},
          {"grid_quantum_us", o.grid_quantum},
          {"depth_quantum_Er", o.depth_quantum},
          {"restarts", o.restarts},
          {"convergence_tol", o.convergence_tol},
          {"convergence_window", o.convergence_window},
          {"seed_on_max_us", o.seed_on_max},
          {"seed_off_max_us", o.seed_off_max}};
}

inline OptimizerOptions optimizer_from_json(const json& j) {
  const std::string where = "optimizer";
  detail::reject_unknown(j,
                         {"max_iters", "fd_step_us", "learning_rate_us2", "min_duration_us", "grid_quantum_us",
                          "depth_quantum_Er", "restarts", "convergence_tol", "convergence_window", "seed_on_max_us",
                          "seed_off_max_us"},
                         where);
  OptimizerOptions o;
  o.max_iters = detail::get_or(j, "max_iters", o.max_iters, where);
  o.fd_step = detail::get_or(j, "fd_step_us", o.fd_step, where);
  o.learning_rate = detail::get_or(j, "learning_rate_us2", o.learning_rate, where);
  o.min_duration = detail::get_or(j, "min_duration_us", o.min_duration, where);
  o.grid_quantum = detail::get_or(j, "grid_quantum_us", o.grid_quantum, where);
  o.depth_quantum = detail::get_or(j, "depth_quantum_Er", o.depth_quantum, where);
  o.restarts = detail::get_or(j, "restarts", o.restarts, where);
  o.convergence_tol = detail::get_or(j, "convergence_tol", o.convergence_tol, where);
  o.convergence_window = detail::get_or(j, "convergence_window", o.convergence_window, where);
  o.seed_on_max = detail::get_or(j, "seed_on_max_us", o.seed_on_max, where);
  o.seed_off_max = detail::get_or(j, "seed_off_max_us", o.seed_off_max, where);
  o.validate();
  return o;
}

// ----------------------------------------------------------------- config

struct RunConfig {
  LatticeSpec lattice;
  int shell_radius = 5;
  EnsembleConfig ensemble;
  OptimizerOptions optimizer;
  std::string output_dir = "out";
  std::uint64_t rng_seed = 1;
  unsigned threads = 1;

  /// Snapshot used in manifests; thread count is recorded but is not part of the run hash.
  json to_json() const {
    json ens = ensemble.source;
    if (ens.is_null() || ens.empty()) ens = json::object({{"distribution", "delta"}});
    return {{"lattice", lattice_to_json(lattice)},
            {"basis", {{"shell_radius", shell_radius}}},
            {"ensemble", ens},
            {"optimizer", optimizer_to_json(optimizer)},
            {"output_dir", output_dir},
            {"rng_seed", rng_seed},
            {"threads", threads}};
  }
};

inline RunConfig config_from_json(const json& j) {
  detail::reject_unknown(j, {"lattice", "basis", "ensemble", "optimizer", "output_dir", "rng_seed", "threads"}, "config");
  RunConfig cfg;
  if (j.contains("lattice")) cfg.lattice = lattice_from_json(j.at("lattice"));
  if (j.contains("basis")) {
    detail::reject_unknown(j.at("basis"), {"shell_radius"}, "basis");
    cfg.shell_radius = detail::get_or<int>(j.at("basis"), "shell_radius", 5, "basis");
    if (cfg.shell_radius < 1) throw ValidationError("basis.shell_radius must be >= 1");
  }
  cfg.ensemble = ensemble_from_json(j.contains("ensemble") ? j.at("ensemble") : json::object({{"distribution", "delta"}}));
  if (j.contains("optimizer")) cfg.optimizer = optimizer_from_json(j.at("optimizer"));
  cfg.output_dir = detail::get_or<std::string>(j, "output_dir", cfg.output_dir, "config");
  cfg.rng_seed = detail::get_or<std::uint64_t>(j, "rng_seed", cfg.rng_seed, "config");
  cfg.threads = detail::get_or<unsigned>(j, "threads", cfg.threads, "config");
  cfg.optimizer.rng_seed = cfg.rng_seed;
  cfg.optimizer.threads = cfg.threads;
  return cfg;
}

inline RunConfig load_config(const fs::path& path) {
  return config_from_json(parse_json(read_file(path), path.string()));
}

// -------------------------------------------------------------- sequences

struct SequenceFile {
  PulseSequence sequence;
  std::optional<PulseKind> kind;
  json spec = nullptr;  // lattice snapshot the sequence was designed for
  std::string provenance;
  std::optional<double> fidelity;
  std::optional<double> fidelity_unrounded;
};

inline json sequence_to_json(const SequenceFile& f) {
  json steps = json::array();
  for (const auto& s : f.sequence.steps) {
    json step = {{"t_on_us", s.t_on_us}, {"t_off_us", s.t_off_us}};
    if (s.depth_er) step["depth_Er"] = *s.depth_er;
    steps.push_back(step);
  }
  json j = {{"format", kSequenceFormat}, {"steps", steps}, {"spec", f.spec}, {"provenance", f.provenance}};
  if (f.kind) j["kind"] = to_string(*f.kind);
  if (f.fidelity) j["fidelity"] = *f.fidelity;
  if (f.fidelity_unrounded) j["fidelity_unrounded"] = *f.fidelity_unrounded;
  return j;
}

inline SequenceFile sequence_from_json(const json& j) {
  detail::reject_unknown(j, {"format", "kind", "steps", "spec", "provenance", "fidelity", "fidelity_unrounded"},
                         "sequence file");
  if (j.contains("format") && j.at("format") != kSequenceFormat)
    throw ValidationError("unsupported sequence format " + j.at("format").dump());
  if (!j.contains("steps") || !j.at("steps").is_array()) throw ValidationError("sequence file needs a steps array");
  SequenceFile f;
  for (const auto& s : j.at("steps")) {
    detail::reject_unknown(s, {"t_on_us", "t_off_us", "depth_Er"}, "steps[]");
    if (!s.contains("t_on_us") || !s.contains("t_off_us"))
      throw ValidationError("each step needs t_on_us and t_off_us");
    PulseStep step{s.at("t_on_us").get<double>(), s.at("t_off_us").get<double>(), std::nullopt};
    if (s.contains("depth_Er")) step.depth_er = s.at("depth_Er").get<double>();
    f.sequence.steps.push_back(step);
  }
  f.sequence.validate();
  if (j.contains("kind")) f.kind = parse_pulse_kind(j.at("kind").get<std::string>());
  if (j.contains("spec")) f.spec = j.at("spec");
  f.provenance = detail::get_or<std::string>(j, "provenance", "", "sequence file");
  if (j.contains("fidelity")) f.fidelity = j.at("fidelity").get<double>();
  if (j.contains("fidelity_unrounded")) f.fidelity_unrounded = j.at("fidelity_unrounded").get<double>();
  return f;
}

inline SequenceFile load_sequence(const fs::path& path) {
  try {
    return sequence_from_json(parse_json(read_file(path), path.string()));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// -------------------------------------------------------------------- CSV

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// CSV with a '#'-prefixed header block, then a column header row.
inline std::string csv_text(const std::vector<std::pair<std::string, std::string>>& header,
                            const std::vector<std::string>& columns, const std::vector<std::vector<double>>& rows) {
  std::ostringstream os;
  for (const auto& [k, v] : header) os << "# " << k << ": " << v << "\n";
  for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
  os << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_number(row[i]);
    os << "\n";
  }
  return os.str();
}

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::pair<std::string, std::string>> header;
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon != std::string::npos && line.size() > 2)
        t.header.emplace_back(line.substr(2, colon - 2), colon + 2 <= line.size() ? line.substr(colon + 2) : "");
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (t.columns.empty()) {
      t.columns = cells;
      continue;
    }
    if (cells.size() != t.columns.size()) throw ValidationError("ragged CSV row: " + line);
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        std::size_t pos = 0;
        row.push_back(std::stod(c, &pos));
        if (pos != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw ValidationError("non-numeric CSV cell '" + c + "'");
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw ValidationError("CSV has no column header");
  return t;
}

inline std::string fringe_csv(const FringeCurve& f, const std::string& run_hash) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < f.times_us.size(); ++i) rows.push_back({f.times_us[i], f.p_d[i]});
  std::vector<std::pair<std::string, std::string>> header{{"run_hash", run_hash}};
  for (const auto& [k, v] : f.metadata) header.emplace_back(k, v);
  return csv_text(header, {"t_us", "p_d"}, rows);
}

inline std::string contrast_csv(const ContrastCurve& c, const std::string& run_hash) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < c.times_us.size(); ++i) rows.push_back({c.times_us[i], c.contrast[i]});
  return csv_text({{"run_hash", run_hash}}, {"t_us", "contrast"}, rows);
}

inline FringeCurve fringe_from_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  if (t.columns.size() != 2 || t.columns[0] != "t_us" || t.columns[1] != "p_d")
    throw ValidationError("fringe CSV must have columns t_us,p_d");
  FringeCurve f;
  for (const auto& r : t.rows) {
    f.times_us.push_back(r[0]);
    f.p_d.push_back(r[1]);
  }
  for (const auto& [k, v] : t.header) f.metadata[k] = v;
  f.validate();
  return f;
}

// --------------------------------------------------------------- manifest

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/**
 * Collects everything needed to re-run a command and writes artifacts.
 * The run hash covers command, arguments, config (minus threads and output
 * directory), inputs and code version; it is stable across runs and thread
 * counts, so CSVs that embed it stay byte-identical.
 */
class RunRecorder {
 public:
  RunRecorder(std::string command, json arguments, const RunConfig& config, fs::path out_dir)
      : command_(std::move(command)), arguments_(std::move(arguments)), config_(config.to_json()),
        out_dir_(std::move(out_dir)), started_(utc_now()) {
    std::error_code ec;
    fs::create_directories(out_dir_, ec);
    if (ec || !fs::is_directory(out_dir_)) throw ValidationError("cannot create output directory " + out_dir_.string());
  }

  void add_input(const std::string& name, const fs::path& path, const json& parsed = nullptr) {
    const std::string content = read_file(path);
    inputs_[name] = {{"path", path.string()}, {"sha256", sha256_hex(content)}};
    if (!parsed.is_null()) inputs_[name]["content"] = parsed;
  }

  void set_derived(const std::string& key, double value) { derived_[key] = value; }

  std::string run_hash() const {
    json cfg = config_;
    cfg.erase("threads");
    cfg.erase("output_dir");
    json inputs = json::object();
    for (const auto& [name, v] : inputs_.items()) inputs[name] = v.at("sha256");
    const json payload = {{"command", command_}, {"arguments", arguments_}, {"config", cfg},
                          {"inputs", inputs}, {"code_version", code_version()}};
    return sha256_hex(payload.dump());
  }

  fs::path write_artifact(const std::string& name, const std::string& content) {
    const fs::path p = out_dir_ / name;
    write_file(p, content);
    artifacts_[name] = sha256_hex(content);
    return p;
  }

  fs::path write_manifest() {
    json derived = derived_;
    const json m = {{"format", kManifestFormat},
                    {"command", command_},
                    {"arguments", arguments_},
                    {"config", config_},
                    {"inputs", inputs_},
                    {"artifacts", artifacts_},
                    {"derived", derived},
                    {"code_version", code_version()},
                    {"run_hash", run_hash()},
                    {"started_utc", started_},
                    {"finished_utc", utc_now()}};
    const fs::path p = out_dir_ / "manifest.json";
    write_file(p, m.dump(2) + "\n");
    return p;
  }

  const fs::path& out_dir() const { return out_dir_; }

 private:
  std::string command_;
  json arguments_;
  json config_;
  fs::path out_dir_;
  std::string started_;
  json inputs_ = json::object();
  json artifacts_ = json::object();
  json derived_ = json::object();
};

}  // namespace blochri::io
