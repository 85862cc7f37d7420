#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "blochri/dynamics.hpp"
#include "blochri/error.hpp"
#include "blochri/lattice.hpp"
#include "blochri/parallel.hpp"

namespace blochri {

enum class PulseKind { HalfPi, Pi, Load };

inline std::string to_string(PulseKind k) {
  switch (k) {
    case PulseKind::HalfPi: return "pi2";
    case PulseKind::Pi: return "pi";
    case PulseKind::Load: return "load";
  }
  return "?";
}

inline PulseKind parse_pulse_kind(const std::string& s) {
  if (s == "pi2" || s == "half_pi") return PulseKind::HalfPi;
  if (s == "pi") return PulseKind::Pi;
  if (s == "load") return PulseKind::Load;
  throw ValidationError("unknown pulse kind '" + s + "' (expected pi2, pi or load)");
}

/**
 * Relative phase between |S> and |D>.
 *
 * The band eigenvectors only fix |S> and |D> up to individual phases, and a
 * pi/2 rotation about any equatorial axis of the S-D Bloch sphere is an
 * equally good beam splitter. Optimal maximises the fidelity over the
 * relative phase chi in |D> -> e^{i chi}|D>. Fixed uses the eigenvectors as
 * returned by solve_bands (largest component real and positive).
 */
enum class PhaseGauge { Optimal, Fixed };

struct StatePair {
  CVector initial;
  CVector target;
};

struct PulseObjective {
  PulseKind kind = PulseKind::HalfPi;
  LatticeSpec spec;
  PlaneWaveBasis basis{Geometry::Triangular3Beam, 1};
  Vec2 quasimomentum = Vec2::Zero();
  CVector s_state;
  CVector d_state;
  std::vector<StatePair> pairs;
  PhaseGauge gauge = PhaseGauge::Optimal;
};

inline PulseObjective make_objective(PulseKind kind, const LatticeSpec& spec, const PlaneWaveBasis& basis,
                                     const Vec2& q = Vec2::Zero(), PhaseGauge gauge = PhaseGauge::Optimal) {
  const BandSolution sol = solve_bands(hamiltonian_on(basis, spec, q, spec.depth_er));
  PulseObjective obj{kind, spec, basis, q, {}, {}, {}, gauge};
  obj.s_state = bloch_state(sol, 1, basis).amplitudes;
  obj.d_state = bloch_state(sol, d_band_index(spec.geometry), basis).amplitudes;
  const CVector& s = obj.s_state;
  const CVector& d = obj.d_state;
  const double r2 = std::sqrt(0.5);
  switch (kind) {
    case PulseKind::HalfPi:
      obj.pairs = {{s, (s + d) * r2}, {d, (d - s) * r2}};
      break;
    case PulseKind::Pi:
      obj.pairs = {{s, d}, {d, -s}};
      break;
    case PulseKind::Load:
      obj.pairs = {{QuantumState::plane_wave(basis, {0, 0}, q).amplitudes, s}};
      break;
  }
  return obj;
}

struct FidelityReport {
  double fidelity = 0.0;
  double gauge_phase = 0.0;         // chi applied to |D>, radians
  std::vector<cplx> pair_overlaps;  // <psi_f | target> at the chosen gauge
};

namespace detail {

// max over chi of |c0 + cp e^{i chi} + cm e^{-i chi}|
inline std::pair<double, double> maximise_gauge(cplx c0, cplx cp, cplx cm) {
  auto g = [&](double chi) {
    const cplx e = std::exp(cplx(0.0, chi));
    return std::abs(c0 + cp * e + cm * std::conj(e));
  };
  constexpr int samples = 64;
  const double h = 2.0 * std::numbers::pi / samples;
  double best_chi = 0.0;
  double best = -1.0;
  for (int i = 0; i < samples; ++i) {
    const double v = g(i * h);
    if (v > best) {
      best = v;
      best_chi = i * h;
    }
  }
  // golden section inside the bracketing cells
  double a = best_chi - h, b = best_chi + h;
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - invphi * (b - a), x2 = a + invphi * (b - a);
  double f1 = g(x1), f2 = g(x2);
  for (int it = 0; it < 80; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = g(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = g(x1);
    }
  }
  const double chi = 0.5 * (a + b);
  const double v = g(chi);
  if (v >= best) return {v, std::remainder(chi, 2.0 * std::numbers::pi)};
  return {best, std::remainder(best_chi, 2.0 * std::numbers::pi)};
}

}  // namespace detail

/**
 * eta = |sum_k <psi_f,k | target_k>| / n_pairs with psi_f,k = R initial_k.
 * Uses the caller's engine so depth eigensystems are reused.
 */
inline FidelityReport fidelity_report(const PulseSequence& seq, const PulseObjective& obj, SequenceEngine& engine) {
  if (obj.pairs.empty()) throw ValidationError("objective has no state pairs");
  const double n = static_cast<double>(obj.pairs.size());
  FidelityReport rep;

  if (obj.gauge == PhaseGauge::Fixed || obj.kind == PulseKind::Load) {
    cplx sum = 0.0;
    for (const auto& p : obj.pairs) {
      const cplx o = engine.apply(p.initial, seq).dot(p.target);
      rep.pair_overlaps.push_back(o);
      sum += o;
    }
    rep.fidelity = std::min(1.0, std::abs(sum) / n);
    return rep;
  }

  // Decompose every pair on (S, D, remainder); the gauge D -> e^{i chi} D then
  // turns the overlap sum into c0 + cp e^{i chi} + cm e^{-i chi}.
  const CVector& s = obj.s_state;
  const CVector& d = obj.d_state;
  const CVector rs = engine.apply(s, seq);
  const CVector rd = engine.apply(d, seq);
  struct Terms {
    cplx c0, cp, cm;
  };
  std::vector<Terms> terms;
  cplx c0 = 0.0, cp = 0.0, cm = 0.0;
  for (const auto& p : obj.pairs) {
    const cplx gamma = s.dot(p.initial), delta = d.dot(p.initial);
    const cplx alpha = s.dot(p.target), beta = d.dot(p.target);
    const CVector rho = p.initial - gamma * s - delta * d;
    const CVector rem = p.target - alpha * s - beta * d;
    Terms t{std::conj(gamma) * (alpha * rs.dot(s) + rs.dot(rem)) + std::conj(delta) * beta * rd.dot(d),
            std::conj(gamma) * beta * rs.dot(d), std::conj(delta) * (alpha * rd.dot(s) + rd.dot(rem))};
    if (rho.norm() > 1e-12) {
      const CVector rr = engine.apply(rho, seq);
      t.c0 += rr.dot(alpha * s + rem);
      t.cp += beta * rr.dot(d);
    }
    terms.push_back(t);
    c0 += t.c0;
    cp += t.cp;
    cm += t.cm;
  }
  const auto [value, chi] = detail::maximise_gauge(c0, cp, cm);
  rep.fidelity = std::min(1.0, value / n);
  rep.gauge_phase = chi;
  const cplx e = std::exp(cplx(0.0, chi));
  for (const auto& t : terms) rep.pair_overlaps.push_back(t.c0 + t.cp * e + t.cm * std::conj(e));
  return rep;
}

inline double fidelity(const PulseSequence& seq, const PulseObjective& obj, SequenceEngine& engine) {
  return fidelity_report(seq, obj, engine).fidelity;
}

inline double fidelity(const PulseSequence& seq, const PulseObjective& obj) {
  SequenceEngine engine(obj.spec, obj.basis, obj.quasimomentum);
  return fidelity(seq, obj, engine);
}

struct OptimizerOptions {
  int max_iters = 200;
  double fd_step = 0.01;          // us (and E_r for depths)
  double learning_rate = 200.0;   // initial step, us^2 per fidelity unit
  double min_duration = 0.0;      // us
  double grid_quantum = 0.1;      // us; 0 disables rounding
  double depth_quantum = 0.1;     // E_r; 0 disables rounding
  int restarts = 10;
  std::uint64_t rng_seed = 1;
  double convergence_tol = 1e-6;
  int convergence_window = 10;
  double seed_on_max = 30.0;   // us
  double seed_off_max = 40.0;  // us
  unsigned threads = 1;

  void validate() const {
    if (max_iters < 1 || !(fd_step > 0.0) || !(learning_rate > 0.0) || !(min_duration >= 0.0) ||
        !(grid_quantum >= 0.0) || !(depth_quantum >= 0.0) || restarts < 1 || !(convergence_tol > 0.0) ||
        convergence_window < 1 || !(seed_on_max > 0.0) || !(seed_off_max > 0.0))
      throw ValidationError("invalid optimizer options");
  }
};

struct DepthBounds {
  double lo = 0.0;
  double hi = 0.0;
};

struct TraceRow {
  int iteration = 0;
  double fidelity = 0.0;
  double step_norm = 0.0;
};

struct OptimizeResult {
  PulseSequence sequence;        // returned (grid-rounded) sequence
  double fidelity = 0.0;         // fidelity of `sequence`
  PulseSequence unrounded;       // continuous optimum
  double fidelity_unrounded = 0.0;
  double seed_fidelity = 0.0;
  std::vector<TraceRow> trace;
  int restart = -1;
};

namespace detail {

class ParamSpace {
 public:
  ParamSpace(std::size_t steps, std::optional<DepthBounds> bounds, double nominal_depth, double min_duration)
      : steps_(steps), bounds_(bounds), nominal_(nominal_depth), min_duration_(min_duration) {}

  std::size_t size() const { return 2 * steps_ + (bounds_ ? steps_ : 0); }
  bool is_depth(std::size_t i) const { return i >= 2 * steps_; }

  Eigen::VectorXd pack(const PulseSequence& seq) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(size()));
    for (std::size_t k = 0; k < steps_; ++k) {
      x(2 * k) = seq.steps[k].t_on_us;
      x(2 * k + 1) = seq.steps[k].t_off_us;
      if (bounds_) x(2 * steps_ + k) = seq.steps[k].depth_er.value_or(nominal_);
    }
    return x;
  }

  PulseSequence unpack(const Eigen::VectorXd& x, const PulseSequence& like) const {
    PulseSequence seq = like;
    for (std::size_t k = 0; k < steps_; ++k) {
      seq.steps[k].t_on_us = x(2 * k);
      seq.steps[k].t_off_us = x(2 * k + 1);
      if (bounds_) seq.steps[k].depth_er = x(2 * steps_ + k);
    }
    return seq;
  }

  double lower(std::size_t i) const { return is_depth(i) ? bounds_->lo : min_duration_; }
  double upper(std::size_t i) const {
    return is_depth(i) ? bounds_->hi : std::numeric_limits<double>::infinity();
  }

  Eigen::VectorXd project(Eigen::VectorXd x) const {
    for (Eigen::Index i = 0; i < x.size(); ++i)
      x(i) = std::clamp(x(i), lower(static_cast<std::size_t>(i)), upper(static_cast<std::size_t>(i)));
    return x;
  }

 private:
  std::size_t steps_;
  std::optional<DepthBounds> bounds_;
  double nominal_;
  double min_duration_;
};

inline double rounded(double v, double quantum) {
  return quantum > 0.0 ? std::round(v / quantum) * quantum : v;
}

inline std::string describe(const Eigen::VectorXd& x) {
  std::ostringstream os;
  os << "[";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
  os << "]";
  return os.str();
}

inline OptimizeResult run_optimizer(const PulseSequence& seed, const PulseObjective& obj,
                                    const OptimizerOptions& opts, std::optional<DepthBounds> bounds) {
  opts.validate();
  seed.validate();
  if (bounds && !(bounds->lo <= bounds->hi && bounds->lo >= 0.0))
    throw ValidationError("depth bounds must satisfy 0 <= lo <= hi");
  if (bounds && !(bounds->lo <= obj.spec.depth_er && obj.spec.depth_er <= bounds->hi))
    throw ValidationError("depth bounds must contain the nominal lattice depth");

  SequenceEngine engine(obj.spec, obj.basis, obj.quasimomentum);
  const ParamSpace space(seed.steps.size(), bounds, obj.spec.depth_er, opts.min_duration);

  Eigen::VectorXd x = space.project(space.pack(seed));
  auto f = [&](const Eigen::VectorXd& v) {
    const double val = fidelity(space.unpack(v, seed), obj, engine);
    if (!std::isfinite(val))
      throw NumericalFailure("non-finite fidelity at parameters " + describe(v));
    return val;
  };

  OptimizeResult res;
  res.seed_fidelity = fidelity(seed, obj, engine);
  double fx = f(x);
  res.trace.push_back({0, fx, 0.0});
  double alpha = opts.learning_rate;
  constexpr double armijo = 1e-4;

  for (int it = 1; it <= opts.max_iters; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const auto iu = static_cast<std::size_t>(i);
      if (space.lower(iu) == space.upper(iu)) continue;
      const double h = opts.fd_step;
      Eigen::VectorXd xp = x, xm = x;
      xp(i) = std::min(x(i) + h, space.upper(iu));
      xm(i) = std::max(x(i) - h, space.lower(iu));
      grad(i) = (f(xp) - f(xm)) / (xp(i) - xm(i));
    }

    bool accepted = false;
    double step_norm = 0.0;
    while (alpha > 1e-10) {
      const Eigen::VectorXd xn = space.project(x + alpha * grad);
      const Eigen::VectorXd dx = xn - x;
      step_norm = dx.norm();
      if (step_norm == 0.0) break;
      const double fn = f(xn);
      if (fn >= fx + armijo * grad.dot(dx)) {
        x = xn;
        fx = fn;
        accepted = true;
        alpha = std::min(alpha * 2.0, 1e6);
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    res.trace.push_back({it, fx, step_norm});

    const auto w = static_cast<std::size_t>(opts.convergence_window);
    if (res.trace.size() > w &&
        res.trace.back().fidelity - res.trace[res.trace.size() - 1 - w].fidelity < opts.convergence_tol)
      break;
  }

  res.unrounded = space.unpack(x, seed);
  res.fidelity_unrounded = fx;

  Eigen::VectorXd xr = x;
  for (Eigen::Index i = 0; i < xr.size(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const double q = space.is_depth(iu) ? opts.depth_quantum : opts.grid_quantum;
    xr(i) = std::clamp(rounded(x(i), q), space.lower(iu), space.upper(iu));
  }
  const double fr = f(xr);
  if (fr >= res.seed_fidelity) {
    res.sequence = space.unpack(xr, seed);
    res.fidelity = fr;
  } else {
    res.sequence = seed;
    res.fidelity = res.seed_fidelity;
  }
  return res;
}

}  // namespace detail

/**
 * Projected gradient ascent on the step durations, with central finite
 * differences and Armijo backtracking (halving). The trace is monotone
 * non-decreasing. Final durations are rounded to `grid_quantum`; if rounding
 * would drop below the seed's fidelity the seed is returned instead.
 */
inline OptimizeResult optimize(const PulseSequence& seed, const PulseObjective& obj, const OptimizerOptions& opts) {
  return detail::run_optimizer(seed, obj, opts, std::nullopt);
}

/// Same as optimize(), with per-step lattice depths as extra parameters kept inside `bounds`.
inline OptimizeResult optimize_with_amplitudes(const PulseSequence& seed, const PulseObjective& obj,
                                               const OptimizerOptions& opts, DepthBounds bounds) {
  return detail::run_optimizer(seed, obj, opts, bounds);
}

/// Seed for restart `r`: durations uniform in [0, seed_on_max] / [0, seed_off_max].
inline PulseSequence random_seed_sequence(std::size_t n_steps, const OptimizerOptions& opts, int restart,
                                          std::optional<DepthBounds> bounds) {
  std::seed_seq seq{static_cast<std::uint32_t>(opts.rng_seed & 0xffffffffu),
                    static_cast<std::uint32_t>(opts.rng_seed >> 32), static_cast<std::uint32_t>(restart)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> on(0.0, opts.seed_on_max), off(0.0, opts.seed_off_max);
  PulseSequence out;
  for (std::size_t k = 0; k < n_steps; ++k) {
    PulseStep s;
    s.t_on_us = on(rng);
    s.t_off_us = off(rng);
    if (bounds) s.depth_er = std::uniform_real_distribution<double>(bounds->lo, bounds->hi)(rng);
    out.steps.push_back(s);
  }
  return out;
}

/// Multi-start design: best of `opts.restarts` optimizations from random seeds.
inline OptimizeResult design_sequence(const PulseObjective& obj, std::size_t n_steps, const OptimizerOptions& opts,
                                      std::optional<DepthBounds> bounds = std::nullopt) {
  opts.validate();
  if (n_steps < 1) throw ValidationError("need at least one pulse step");
  std::vector<OptimizeResult> results(static_cast<std::size_t>(opts.restarts));
  parallel_for(results.size(), opts.threads, [&](std::size_t r) {
    const PulseSequence seed = random_seed_sequence(n_steps, opts, static_cast<int>(r), bounds);
    results[r] = detail::run_optimizer(seed, obj, opts, bounds);
    results[r].restart = static_cast<int>(r);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < results.size(); ++r)
    if (results[r].fidelity > results[best].fidelity) best = r;
  return results[best];
}

}  // namespace blochri
