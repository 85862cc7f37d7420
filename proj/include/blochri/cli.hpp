#pragma once

// Subcommand implementations behind tools/blochri. Each returns a process
// exit code and writes its artifacts plus a manifest to the output directory.

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "blochri/dynamics.hpp"
#include "blochri/error.hpp"
#include "blochri/interferometer.hpp"
#include "blochri/io.hpp"
#include "blochri/lattice.hpp"
#include "blochri/shortcut.hpp"

namespace blochri::cli {

using io::json;
namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kValidation = 2, kThresholdNotMet = 3, kNumerical = 4 };

inline constexpr const char* kConfigEnv = "BLOCHRI_CONFIG";

struct CommonOptions {
  std::optional<std::string> config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

struct Context {
  io::RunConfig config;
  std::optional<fs::path> config_path;
  fs::path out_dir;
};

/// Config from --config, else $BLOCHRI_CONFIG, else built-in defaults; flags override file values.
inline Context resolve_context(const CommonOptions& common) {
  Context ctx;
  if (common.config_path) {
    ctx.config_path = *common.config_path;
  } else if (const char* env = std::getenv(kConfigEnv); env && *env) {
    ctx.config_path = env;
  }
  if (ctx.config_path) {
    if (!fs::exists(*ctx.config_path)) throw ValidationError("config file not found: " + ctx.config_path->string());
    ctx.config = io::load_config(*ctx.config_path);
  } else {
    ctx.config = io::config_from_json(json::object());
  }
  if (common.out_dir) ctx.config.output_dir = *common.out_dir;
  if (common.seed) ctx.config.rng_seed = ctx.config.optimizer.rng_seed = *common.seed;
  if (common.threads) ctx.config.threads = ctx.config.optimizer.threads = *common.threads;
  ctx.out_dir = ctx.config.output_dir;
  return ctx;
}

inline io::RunRecorder make_recorder(const std::string& command, const json& args, const Context& ctx) {
  io::RunRecorder rec(command, args, ctx.config, ctx.out_dir);
  if (ctx.config_path) rec.add_input("config", *ctx.config_path);
  return rec;
}

inline void record_lattice_constants(io::RunRecorder& rec, const LatticeSpec& spec, const PlaneWaveBasis& basis) {
  const double gap = band_gap(spec, basis);
  rec.set_derived("recoil_frequency_Hz", recoil_energy(spec).hertz);
  rec.set_derived("band_gap_Er", gap);
  rec.set_derived("fringe_period_us", fringe_period_us(gap, spec));
}

// ------------------------------------------------------------------ bands

struct BandsOptions {
  std::vector<std::string> path{"G", "M", "K", "G"};
  int samples = 50;  // per segment, segment end excluded except for the last waypoint
  int n_bands = 6;
};

/// Named high-symmetry points (units of hbar k) or an explicit "qx:qy".
inline Vec2 parse_waypoint(const std::string& token, Geometry geometry) {
  if (token == "G" || token == "Gamma") return Vec2::Zero();
  if (geometry == Geometry::Triangular3Beam) {
    if (token == "M") return Vec2(0.75, std::sqrt(3.0) / 4.0);
    if (token == "K") return Vec2(1.0, 0.0);
  } else if (token == "X") {
    return Vec2(1.0, 0.0);
  }
  const auto colon = token.find(':');
  if (colon == std::string::npos) throw ValidationError("malformed waypoint '" + token + "'");
  try {
    std::size_t p1 = 0, p2 = 0;
    const std::string a = token.substr(0, colon), b = token.substr(colon + 1);
    const double x = std::stod(a, &p1), y = std::stod(b, &p2);
    if (p1 != a.size() || p2 != b.size()) throw std::invalid_argument(token);
    if (geometry == Geometry::StandingWave1D && y != 0.0) throw ValidationError("1D waypoints need q_y = 0");
    return Vec2(x, y);
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception&) {
    throw ValidationError("malformed waypoint '" + token + "'");
  }
}

struct BandRow {
  double s = 0.0;
  Vec2 q;
  std::vector<double> energies;
};

inline std::vector<BandRow> band_path(const LatticeSpec& spec, const PlaneWaveBasis& basis,
                                      const std::vector<std::string>& path, int samples, int n_bands) {
  if (path.size() < 2) throw ValidationError("band path needs at least two waypoints");
  if (samples < 1) throw ValidationError("samples per segment must be >= 1");
  if (n_bands < 1 || static_cast<std::size_t>(n_bands) > basis.size())
    throw ValidationError("band count out of range");
  std::vector<Vec2> pts;
  for (const auto& t : path) pts.push_back(parse_waypoint(t, spec.geometry));
  std::vector<BandRow> rows;
  double s0 = 0.0;
  auto push = [&](const Vec2& q, double s) {
    const BandSolution sol = solve_bands(hamiltonian_on(basis, spec, q, spec.depth_er));
    BandRow r{s, q, {}};
    for (int n = 0; n < n_bands; ++n) r.energies.push_back(sol.energies(n));
    rows.push_back(std::move(r));
  };
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const Vec2 a = pts[k], b = pts[k + 1];
    const double len = (b - a).norm();
    for (int i = 0; i < samples; ++i) {
      const double f = static_cast<double>(i) / samples;
      push(a + f * (b - a), s0 + f * len);
    }
    s0 += len;
  }
  push(pts.back(), s0);
  return rows;
}

inline int cmd_bands(const CommonOptions& common, const BandsOptions& opt, std::ostream& out) {
  const Context ctx = resolve_context(common);
  const LatticeSpec& spec = ctx.config.lattice;
  const PlaneWaveBasis basis = build_basis(spec, ctx.config.shell_radius);
  const auto rows = band_path(spec, basis, opt.path, opt.samples, opt.n_bands);

  const json args = {{"path", opt.path}, {"samples_per_segment", opt.samples}, {"bands", opt.n_bands}};
  auto rec = make_recorder("bands", args, ctx);
  record_lattice_constants(rec, spec, basis);

  std::vector<std::string> cols{"path_coordinate", "q_x", "q_y"};
  for (int n = 1; n <= opt.n_bands; ++n) cols.push_back("E" + std::to_string(n) + "_Er");
  std::vector<std::vector<double>> table;
  for (const auto& r : rows) {
    std::vector<double> row{r.s, r.q.x(), r.q.y()};
    row.insert(row.end(), r.energies.begin(), r.energies.end());
    table.push_back(std::move(row));
  }
  std::string path_text;
  for (const auto& p : opt.path) path_text += (path_text.empty() ? "" : "-") + p;
  rec.write_artifact("bands.csv", io::csv_text({{"run_hash", rec.run_hash()}, {"path", path_text}}, cols, table));
  rec.write_manifest();
  out << "bands: " << rows.size() << " rows -> " << (ctx.out_dir / "bands.csv").string() << "\n";
  return kOk;
}

// ----------------------------------------------------------------- design

struct DesignOptions {
  PulseKind kind = PulseKind::HalfPi;
  int steps = 5;
  bool variable_amplitude = false;
  std::optional<double> depth_min_er;
  std::optional<double> depth_max_er;
  std::optional<double> threshold;
};

inline double default_threshold(PulseKind kind) { return kind == PulseKind::Pi ? 0.93 : 0.98; }

inline int cmd_design(const CommonOptions& common, const DesignOptions& opt, std::ostream& out) {
  const Context ctx = resolve_context(common);
  const LatticeSpec& spec = ctx.config.lattice;
  const PlaneWaveBasis basis = build_basis(spec, ctx.config.shell_radius);
  if (opt.steps < 1) throw ValidationError("--steps must be >= 1");
  const double threshold = opt.threshold.value_or(default_threshold(opt.kind));
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("--threshold must lie in [0, 1]");

  std::optional<DepthBounds> bounds;
  if (opt.variable_amplitude) {
    bounds = DepthBounds{opt.depth_min_er.value_or(0.6 * spec.depth_er), opt.depth_max_er.value_or(1.2 * spec.depth_er)};
    if (!(bounds->lo >= 0.0 && bounds->lo <= spec.depth_er && spec.depth_er <= bounds->hi))
      throw ValidationError("depth bounds must satisfy 0 <= min <= depth_Er <= max");
  } else if (opt.depth_min_er || opt.depth_max_er) {
    throw ValidationError("depth bounds require --variable-amplitude");
  }

  const PulseObjective obj = make_objective(opt.kind, spec, basis);
  const OptimizeResult res = design_sequence(obj, static_cast<std::size_t>(opt.steps), ctx.config.optimizer, bounds);
  if (!std::isfinite(res.fidelity)) throw NumericalFailure("optimizer produced a non-finite fidelity");

  json args = {{"kind", to_string(opt.kind)}, {"steps", opt.steps}, {"variable_amplitude", opt.variable_amplitude},
               {"threshold", threshold}};
  if (bounds) args["depth_bounds_Er"] = {bounds->lo, bounds->hi};
  auto rec = make_recorder("design", args, ctx);
  record_lattice_constants(rec, spec, basis);

  io::SequenceFile file;
  file.sequence = res.sequence;
  file.kind = opt.kind;
  file.spec = io::lattice_to_json(spec);
  file.provenance = "design " + to_string(opt.kind) + ", " + std::to_string(opt.steps) + " steps, restart " +
                    std::to_string(res.restart) + " of " + std::to_string(ctx.config.optimizer.restarts) +
                    ", rng_seed " + std::to_string(ctx.config.optimizer.rng_seed) + ", run " + rec.run_hash();
  file.fidelity = res.fidelity;
  file.fidelity_unrounded = res.fidelity_unrounded;
  rec.write_artifact("sequence.json", io::sequence_to_json(file).dump(2) + "\n");

  std::vector<std::vector<double>> trace;
  for (const auto& t : res.trace) trace.push_back({static_cast<double>(t.iteration), t.fidelity, t.step_norm});
  rec.write_artifact("trace.csv", io::csv_text({{"run_hash", rec.run_hash()}, {"restart", std::to_string(res.restart)}},
                                               {"iteration", "fidelity", "step_norm"}, trace));
  rec.set_derived("fidelity", res.fidelity);
  rec.write_manifest();

  out << "design " << to_string(opt.kind) << ": fidelity " << io::format_number(res.fidelity) << " (unrounded "
      << io::format_number(res.fidelity_unrounded) << "), threshold " << io::format_number(threshold) << "\n";
  for (const auto& s : res.sequence.steps) {
    out << "  on " << io::format_number(s.t_on_us) << " us, off " << io::format_number(s.t_off_us) << " us";
    if (s.depth_er) out << ", depth " << io::format_number(*s.depth_er) << " Er";
    out << "\n";
  }
  return res.fidelity >= threshold ? kOk : kThresholdNotMet;
}

// ------------------------------------------------------------------- eval

struct EvalOptions {
  std::string sequence_path;
  std::optional<PulseKind> kind;
};

struct EvalPair {
  cplx overlap;
  double leak_mid = 0.0;    // bands strictly between S and D
  double leak_above = 0.0;  // bands above D
};

struct EvalReport {
  PulseKind kind = PulseKind::HalfPi;
  double fidelity = 0.0;
  double gauge_phase = 0.0;
  std::vector<EvalPair> pairs;
};

inline EvalReport evaluate(const PulseSequence& seq, PulseKind kind, const LatticeSpec& spec,
                           const PlaneWaveBasis& basis) {
  const PulseObjective obj = make_objective(kind, spec, basis);
  SequenceEngine engine(spec, basis, obj.quasimomentum);
  const FidelityReport rep = fidelity_report(seq, obj, engine);
  const BandSolution sol = engine.on_solution(spec.depth_er);
  const std::size_t d = static_cast<std::size_t>(d_band_index(spec.geometry));

  EvalReport out{kind, rep.fidelity, rep.gauge_phase, {}};
  for (std::size_t k = 0; k < obj.pairs.size(); ++k) {
    const QuantumState f{obj.quasimomentum, engine.apply(obj.pairs[k].initial, seq)};
    const auto pop = band_populations(f, sol, d);
    double inside = 0.0;
    for (double p : pop) inside += p;
    EvalPair pr{rep.pair_overlaps[k], 0.0, std::max(0.0, f.amplitudes.squaredNorm() - inside)};
    for (std::size_t n = 1; n + 1 < d; ++n) pr.leak_mid += pop[n];
    out.pairs.push_back(pr);
  }
  return out;
}

inline json eval_to_json(const EvalReport& r) {
  json pairs = json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"overlap_abs", std::abs(p.overlap)},
                     {"overlap_phase_rad", std::arg(p.overlap)},
                     {"leakage_intermediate_bands", p.leak_mid},
                     {"leakage_upper_bands", p.leak_above}});
  return {{"kind", to_string(r.kind)}, {"fidelity", r.fidelity}, {"gauge_phase_rad", r.gauge_phase}, {"pairs", pairs}};
}

inline int cmd_eval(const CommonOptions& common, const EvalOptions& opt, std::ostream& out) {
  const Context ctx = resolve_context(common);
  const LatticeSpec& spec = ctx.config.lattice;
  const PlaneWaveBasis basis = build_basis(spec, ctx.config.shell_radius);
  const io::SequenceFile file = io::load_sequence(opt.sequence_path);
  const PulseKind kind = opt.kind ? *opt.kind : file.kind ? *file.kind : throw ValidationError("pulse kind not given");
  const EvalReport rep = evaluate(file.sequence, kind, spec, basis);
  const json j = eval_to_json(rep);

  auto rec = make_recorder("eval", {{"kind", to_string(kind)}}, ctx);
  rec.add_input("sequence", opt.sequence_path, io::sequence_to_json(file));
  record_lattice_constants(rec, spec, basis);
  rec.set_derived("fidelity", rep.fidelity);
  rec.write_artifact("eval.json", j.dump(2) + "\n");
  rec.write_manifest();

  out << "eval " << to_string(kind) << ": fidelity " << io::format_number(rep.fidelity) << ", gauge phase "
      << io::format_number(rep.gauge_phase) << " rad\n";
  for (std::size_t k = 0; k < rep.pairs.size(); ++k) {
    const auto& p = rep.pairs[k];
    out << "  pair " << k << ": |overlap| " << io::format_number(std::abs(p.overlap)) << ", phase "
        << io::format_number(std::arg(p.overlap)) << " rad, leakage bands 2-" << d_band_index(spec.geometry) - 1
        << " " << io::format_number(p.leak_mid) << ", above D " << io::format_number(p.leak_above) << "\n";
  }
  return kOk;
}

// ---------------------------------------------------- ramsey / echo / coherence

struct FringeOptions {
  std::string pi2 = "ideal";  // sequence file or "ideal"
  std::string pi = "ideal";
  double t_max_us = 2000.0;
  double dt_us = 2.0;
  bool single_q = false;
  std::optional<double> period_us;
  int n_echo = 2;
};

inline Pulse load_pulse(const std::string& source, PulseKind kind, io::RunRecorder& rec, const std::string& name) {
  if (source == "ideal") return Pulse::ideal(kind);
  const io::SequenceFile f = io::load_sequence(source);
  rec.add_input(name, source, io::sequence_to_json(f));
  return Pulse::shortcut(kind, f.sequence);
}

inline json coherence_to_json(const CoherenceTime& c, double period_us) {
  json j = {{"period_us", period_us}};
  j["crossing_us"] = c.crossing_us ? json(*c.crossing_us) : json(nullptr);
  j["fit_tau_us"] = std::isfinite(c.fit_tau_us) ? json(c.fit_tau_us) : json(nullptr);
  return j;
}

inline void write_analysis(io::RunRecorder& rec, const FringeCurve& fringe, double period, std::ostream& out) {
  const ContrastCurve cc = contrast_curve(fringe, period);
  const CoherenceTime ct = coherence_time(cc);
  rec.write_artifact("contrast.csv", io::contrast_csv(cc, rec.run_hash()));
  rec.write_artifact("coherence.json", coherence_to_json(ct, period).dump(2) + "\n");
  out << "coherence: 1/e crossing ";
  if (ct.crossing_us)
    out << io::format_number(*ct.crossing_us) << " us";
  else
    out << "not reached";
  out << ", exponential fit tau " << io::format_number(ct.fit_tau_us) << " us\n";
}

inline int run_fringe(InterferometerKind kind, const CommonOptions& common, const FringeOptions& opt, std::ostream& out) {
  const Context ctx = resolve_context(common);
  const LatticeSpec& spec = ctx.config.lattice;
  const PlaneWaveBasis basis = build_basis(spec, ctx.config.shell_radius);
  const double gap = band_gap(spec, basis);
  const double period = opt.period_us.value_or(fringe_period_us(gap, spec));
  if (!(period > 0.0)) throw ValidationError("--period-us must be positive");
  if (!(opt.dt_us > 0.0) || !(opt.dt_us < period / 8.0))
    throw ValidationError("time step " + io::format_number(opt.dt_us) + " us undersamples the fringe; use --dt-us below " +
                          io::format_number(period / 8.0) + " us (period/8)");
  if (!(opt.t_max_us >= 2.0 * period)) throw ValidationError("--t-max-us must cover at least two fringe periods");

  const bool echo = kind == InterferometerKind::Echo;
  json args = {{"pi2", opt.pi2}, {"t_max_us", opt.t_max_us}, {"dt_us", opt.dt_us}, {"single_q", opt.single_q},
               {"period_us", period}};
  if (echo) {
    args["pi"] = opt.pi;
    args["n_echo"] = opt.n_echo;
  }
  auto rec = make_recorder(echo ? "echo" : "ramsey", args, ctx);
  record_lattice_constants(rec, spec, basis);

  PulseSet pulses;
  pulses.half_pi = load_pulse(opt.pi2, PulseKind::HalfPi, rec, "pi2");
  if (echo) pulses.pi = load_pulse(opt.pi, PulseKind::Pi, rec, "pi");

  const EnsembleSpec ens = opt.single_q ? EnsembleSpec{} : ctx.config.ensemble.spec;
  EnsembleOptions eo;
  eo.n_echo = opt.n_echo;
  eo.echo_window_us = period;
  eo.threads = ctx.config.threads;
  FringeCurve fringe = ensemble_fringe(kind, pulses, time_grid(opt.t_max_us, opt.dt_us), ens, spec, basis, eo);
  for (double p : fringe.p_d)
    if (!std::isfinite(p)) throw NumericalFailure("non-finite fringe value");
  fringe.metadata["basis_size"] = std::to_string(basis.size());
  fringe.metadata["code_version"] = io::code_version();

  rec.write_artifact("fringe.csv", io::fringe_csv(fringe, rec.run_hash()));
  out << (echo ? "echo" : "ramsey") << ": " << fringe.times_us.size() << " samples, period "
      << io::format_number(period) << " us, " << fringe.metadata["nodes"] << " quadrature nodes\n";
  write_analysis(rec, fringe, period, out);
  rec.write_manifest();
  return kOk;
}

inline int cmd_ramsey(const CommonOptions& c, const FringeOptions& o, std::ostream& out) {
  return run_fringe(InterferometerKind::Ramsey, c, o, out);
}

inline int cmd_echo(const CommonOptions& c, const FringeOptions& o, std::ostream& out) {
  return run_fringe(InterferometerKind::Echo, c, o, out);
}

struct CoherenceOptions {
  std::string fringe_path;
  std::optional<double> period_us;
};

inline int cmd_coherence(const CommonOptions& common, const CoherenceOptions& opt, std::ostream& out) {
  const Context ctx = resolve_context(common);
  const FringeCurve fringe = io::fringe_from_csv(io::read_file(opt.fringe_path));
  double period = 0.0;
  if (opt.period_us) {
    period = *opt.period_us;
  } else {
    const PlaneWaveBasis basis = build_basis(ctx.config.lattice, ctx.config.shell_radius);
    period = fringe_period_us(band_gap(ctx.config.lattice, basis), ctx.config.lattice);
  }
  auto rec = make_recorder("coherence", {{"period_us", period}}, ctx);
  rec.add_input("fringe", opt.fringe_path);
  rec.set_derived("fringe_period_us", period);
  write_analysis(rec, fringe, period, out);
  rec.write_manifest();
  return kOk;
}

/// Maps library exceptions onto the exit-code contract.
template <class F>
int guarded(F&& f, std::ostream& err) {
  try {
    return f();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const io::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
}

}  // namespace blochri::cli
