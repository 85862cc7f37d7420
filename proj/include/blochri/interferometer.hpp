#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "blochri/dynamics.hpp"
#include "blochri/error.hpp"
#include "blochri/lattice.hpp"
#include "blochri/parallel.hpp"
#include "blochri/shortcut.hpp"

namespace blochri {

struct FringeCurve {
  std::vector<double> times_us;
  std::vector<double> p_d;
  std::map<std::string, std::string> metadata;

  void validate() const {
    if (times_us.size() != p_d.size()) throw ValidationError("fringe times and values differ in length");
    for (std::size_t i = 1; i < times_us.size(); ++i)
      if (!(times_us[i] > times_us[i - 1])) throw ValidationError("fringe times must be strictly ascending");
  }
};

struct ContrastCurve {
  std::vector<double> times_us;  // window centres
  std::vector<double> contrast;
};

enum class Distribution { DeltaAtGamma, IsotropicGaussian };

/// How a measured momentum width maps onto the Gaussian sigma.
enum class WidthReading { Fwhm, TwoSigma };

inline double sigma_from_width(double width, WidthReading reading) {
  if (!(width >= 0.0)) throw ValidationError("momentum width must be non-negative");
  return reading == WidthReading::Fwhm ? width / (2.0 * std::sqrt(2.0 * std::numbers::ln2)) : width / 2.0;
}

struct WidthPoint {
  double t_us;
  double sigma_q;
};

struct EnsembleSpec {
  Distribution distribution = Distribution::DeltaAtGamma;
  double sigma_q = 0.0;  // hbar k
  int quadrature = 21;   // nodes per axis, odd
  std::vector<WidthPoint> width_schedule;  // optional piecewise-linear sigma(t)

  bool is_point() const {
    return distribution == Distribution::DeltaAtGamma || (sigma_q == 0.0 && width_schedule.empty());
  }

  void validate() const {
    if (!(sigma_q >= 0.0)) throw ValidationError("sigma_q must be non-negative");
    if (is_point()) return;
    if (quadrature % 2 == 0) throw ValidationError("quadrature size must be odd so Gamma is a node");
    if (quadrature < 5) throw CoarseQuadrature("quadrature grid below 5 nodes per axis");
    for (std::size_t i = 0; i < width_schedule.size(); ++i) {
      if (!(width_schedule[i].sigma_q > 0.0)) throw ValidationError("width schedule sigma must be positive");
      if (i > 0 && !(width_schedule[i].t_us > width_schedule[i - 1].t_us))
        throw ValidationError("width schedule times must be ascending");
    }
  }

  double sigma_at(double t_us) const {
    if (width_schedule.empty()) return sigma_q;
    if (t_us <= width_schedule.front().t_us) return width_schedule.front().sigma_q;
    if (t_us >= width_schedule.back().t_us) return width_schedule.back().sigma_q;
    for (std::size_t i = 1; i < width_schedule.size(); ++i) {
      const auto& a = width_schedule[i - 1];
      const auto& b = width_schedule[i];
      if (t_us <= b.t_us) return a.sigma_q + (b.sigma_q - a.sigma_q) * (t_us - a.t_us) / (b.t_us - a.t_us);
    }
    return width_schedule.back().sigma_q;
  }

  double sigma_max() const {
    double s = sigma_q;
    for (const auto& w : width_schedule) s = std::max(s, w.sigma_q);
    return s;
  }
};

/// A pulse is either the ideal S-D rotation or a shortcut sequence.
struct Pulse {
  PulseKind kind = PulseKind::HalfPi;
  std::optional<PulseSequence> sequence;  // empty: ideal

  static Pulse ideal(PulseKind k) { return {k, std::nullopt}; }
  static Pulse shortcut(PulseKind k, PulseSequence seq) { return {k, std::move(seq)}; }
  bool is_ideal() const { return !sequence.has_value(); }
};

struct PulseSet {
  Pulse half_pi = Pulse::ideal(PulseKind::HalfPi);
  Pulse pi = Pulse::ideal(PulseKind::Pi);
};

enum class InterferometerKind { Ramsey, Echo };

/// E_D - E_S in E_r at quasi-momentum q.
inline double band_gap(const LatticeSpec& spec, const PlaneWaveBasis& basis, const Vec2& q = Vec2::Zero()) {
  const BandSolution sol = solve_bands(hamiltonian_on(basis, spec, q, spec.depth_er));
  const QuantumState s = bloch_state(sol, 1, basis);
  const QuantumState d = bloch_state(sol, d_band_index(spec.geometry), basis);
  const auto energy = [&](const CVector& v) {
    return (sol.states.adjoint() * v).cwiseAbs2().dot(sol.energies);
  };
  return energy(d.amplitudes) - energy(s.amplitudes);
}

/// Fringe period h / gap, in microseconds.
inline double fringe_period_us(double gap_er, const LatticeSpec& spec) {
  if (!(gap_er > 0.0)) throw ValidationError("band gap must be positive");
  return 2.0 * std::numbers::pi / (gap_er * recoil_energy(spec).rad_per_us);
}

/// p_D(t) = (1 + cos(gap t / hbar)) / 2.
inline FringeCurve ideal_fringe(double gap_er, const std::vector<double>& times_us, const LatticeSpec& spec) {
  if (!(gap_er > 0.0)) throw ValidationError("band gap must be positive");
  const double w = gap_er * recoil_energy(spec).rad_per_us;
  FringeCurve out;
  out.times_us = times_us;
  for (double t : times_us) out.p_d.push_back(0.5 * (1.0 + std::cos(w * t)));
  out.metadata["model"] = "ideal_two_level";
  return out;
}

namespace detail {

struct DenseOp {
  CMatrix m;
};

// Identity outside span{s, d}; r acts on the (s, d) coefficients.
struct TwoLevelOp {
  CVector s, d;
  Eigen::Matrix2cd r;
};

using PulseOp = std::variant<DenseOp, TwoLevelOp>;

inline CVector apply_op(const PulseOp& op, const CVector& v, bool adjoint) {
  if (const auto* dense = std::get_if<DenseOp>(&op))
    return adjoint ? CVector(dense->m.adjoint() * v) : CVector(dense->m * v);
  const auto& tl = std::get<TwoLevelOp>(op);
  const cplx cs = tl.s.dot(v), cd = tl.d.dot(v);
  const Eigen::Matrix2cd r = adjoint ? Eigen::Matrix2cd(tl.r.adjoint()) : tl.r;
  const cplx ns = r(0, 0) * cs + r(0, 1) * cd;
  const cplx nd = r(1, 0) * cs + r(1, 1) * cd;
  return v + tl.s * (ns - cs) + tl.d * (nd - cd);
}

inline Eigen::Matrix2cd ideal_rotation(PulseKind kind) {
  Eigen::Matrix2cd r;
  const double h = std::sqrt(0.5);
  if (kind == PulseKind::HalfPi) {
    r << h, -h, h, h;  // S -> (S+D)/sqrt2, D -> (D-S)/sqrt2
  } else if (kind == PulseKind::Pi) {
    r << 0.0, -1.0, 1.0, 0.0;  // S -> D, D -> -S
  } else {
    throw ValidationError("no ideal operator for the loading pulse");
  }
  return r;
}

}  // namespace detail

/**
 * Interferometer at a single quasi-momentum. Everything is expressed in the
 * eigenbasis of the lattice-on Hamiltonian, where the hold evolution is a
 * diagonal phase over all bands.
 */
class QPointInterferometer {
 public:
  QPointInterferometer(const LatticeSpec& spec, const PlaneWaveBasis& basis, const Vec2& q, const PulseSet& pulses)
      : rate_(recoil_energy(spec).rad_per_us) {
    check_geometry(basis, spec);
    const BandSolution sol = solve_bands(hamiltonian_on(basis, spec, q, spec.depth_er));
    energies_ = sol.energies;
    s_ = sol.states.adjoint() * bloch_state(sol, 1, basis).amplitudes;
    d_ = sol.states.adjoint() * bloch_state(sol, d_band_index(spec.geometry), basis).amplitudes;

    std::optional<SequenceEngine> engine;
    auto build = [&](const Pulse& p) -> detail::PulseOp {
      if (p.is_ideal()) return detail::TwoLevelOp{s_, d_, detail::ideal_rotation(p.kind)};
      if (!engine) engine.emplace(spec, basis, q);
      p.sequence->validate();
      return detail::DenseOp{sol.states.adjoint() * engine->matrix(*p.sequence) * sol.states};
    };
    half_pi_ = build(pulses.half_pi);
    pi_ = build(pulses.pi);

    after_first_ = detail::apply_op(half_pi_, s_, false);
    before_last_ = detail::apply_op(half_pi_, d_, true);
  }

  double gap() const {
    return d_.cwiseAbs2().dot(energies_) - s_.cwiseAbs2().dot(energies_);
  }

  double ramsey(double t_hold_us) const {
    if (!(t_hold_us >= 0.0)) throw ValidationError("hold time must be non-negative");
    cplx amp = 0.0;
    for (Eigen::Index n = 0; n < energies_.size(); ++n)
      amp += std::conj(before_last_(n)) * after_first_(n) * phase(n, t_hold_us);
    return std::clamp(std::norm(amp), 0.0, 1.0);
  }

  /// Hold split into 2 n_echo equal segments with a pi pulse between each
  /// pair; `offset_us` is added to the last segment only.
  double echo(int n_echo, double t_hold_us, double offset_us = 0.0) const {
    if (n_echo < 1) throw ValidationError("n_echo must be >= 1");
    if (!(t_hold_us >= 0.0)) throw ValidationError("hold time must be non-negative");
    const double seg = t_hold_us / (2.0 * n_echo);
    if (!(seg + offset_us >= 0.0)) throw ValidationError("echo offset makes the last segment negative");
    CVector v = after_first_;
    for (int k = 0; k < n_echo; ++k) {
      evolve(v, seg);
      v = detail::apply_op(pi_, v, false);
      evolve(v, k + 1 == n_echo ? seg + offset_us : seg);
    }
    return std::clamp(std::norm(before_last_.dot(v)), 0.0, 1.0);
  }

 private:
  cplx phase(Eigen::Index n, double t) const { return std::exp(cplx(0.0, -energies_(n) * rate_ * t)); }

  void evolve(CVector& v, double t) const {
    if (t == 0.0) return;
    for (Eigen::Index n = 0; n < v.size(); ++n) v(n) *= phase(n, t);
  }

  double rate_;
  Eigen::VectorXd energies_;
  CVector s_, d_;
  detail::PulseOp half_pi_, pi_;
  CVector after_first_;   // R(pi/2)|S>
  CVector before_last_;   // R(pi/2)^dag |D>
};

/// R(pi/2) U(t_hold) R(pi/2) |S>, projected on the D band.
inline double ramsey_pd(const Pulse& half_pi, double t_hold_us, const Vec2& q, const LatticeSpec& spec,
                        const PlaneWaveBasis& basis) {
  return QPointInterferometer(spec, basis, q, {half_pi, Pulse::ideal(PulseKind::Pi)}).ramsey(t_hold_us);
}

inline double ramsey_pd(const PulseSequence& seq_pi2, double t_hold_us, const Vec2& q, const LatticeSpec& spec,
                        const PlaneWaveBasis& basis) {
  return ramsey_pd(Pulse::shortcut(PulseKind::HalfPi, seq_pi2), t_hold_us, q, spec, basis);
}

inline double echo_pd(const Pulse& half_pi, const Pulse& pi, int n_echo, double t_hold_us, const Vec2& q,
                      const LatticeSpec& spec, const PlaneWaveBasis& basis, double offset_us = 0.0) {
  return QPointInterferometer(spec, basis, q, {half_pi, pi}).echo(n_echo, t_hold_us, offset_us);
}

inline double echo_pd(const PulseSequence& seq_pi2, const PulseSequence& seq_pi, int n_echo, double t_hold_us,
                      const Vec2& q, const LatticeSpec& spec, const PlaneWaveBasis& basis, double offset_us = 0.0) {
  return echo_pd(Pulse::shortcut(PulseKind::HalfPi, seq_pi2), Pulse::shortcut(PulseKind::Pi, seq_pi), n_echo,
                 t_hold_us, q, spec, basis, offset_us);
}

struct QuadratureNode {
  Vec2 q;
  double r2;  // |q|^2
};

/// Tensor-product grid over [-3 sigma_max, 3 sigma_max] per axis (one axis in 1D), fixed order.
inline std::vector<QuadratureNode> quadrature_nodes(const EnsembleSpec& ens, Geometry geometry) {
  ens.validate();
  if (ens.is_point()) return {{Vec2::Zero(), 0.0}};
  const int n = ens.quadrature;
  const double half = 3.0 * ens.sigma_max();
  std::vector<double> axis(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) axis[static_cast<std::size_t>(i)] = -half + 2.0 * half * (i - 0.0) / (n - 1);
  axis[static_cast<std::size_t>(n / 2)] = 0.0;
  std::vector<QuadratureNode> out;
  if (geometry == Geometry::StandingWave1D) {
    for (double x : axis) out.push_back({Vec2(x, 0.0), x * x});
  } else {
    for (double x : axis)
      for (double y : axis) out.push_back({Vec2(x, y), x * x + y * y});
  }
  return out;
}

/// Normalised Gaussian weights of the nodes for width sigma.
inline std::vector<double> quadrature_weights(const std::vector<QuadratureNode>& nodes, double sigma) {
  std::vector<double> w(nodes.size(), 1.0);
  if (nodes.size() == 1) return w;
  if (!(sigma > 0.0)) {
    // zero width on a finite grid: all weight on Gamma
    for (std::size_t i = 0; i < nodes.size(); ++i) w[i] = nodes[i].r2 == 0.0 ? 1.0 : 0.0;
    return w;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    w[i] = std::exp(-nodes[i].r2 / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

struct EnsembleOptions {
  int n_echo = 2;
  /// Echo scan window; 0 means h / gap(Gamma).
  double echo_window_us = 0.0;
  unsigned threads = 1;
};

/**
 * Ensemble-averaged fringe p_D(t) = sum_q w(q) p_D(t; q). Pulse operators are
 * rebuilt at every node.
 *
 * An echo with equal segments fully rephases a single quasi-momentum, so the
 * echo fringe is scanned window by window: inside the window starting at
 * t_w = t_0 + k T, the pi pulses sit where they would for a total hold t_w and
 * only the last segment is stretched by (t - t_w).
 */
inline FringeCurve ensemble_fringe(InterferometerKind kind, const PulseSet& pulses, const std::vector<double>& times_us,
                                   const EnsembleSpec& ens, const LatticeSpec& spec, const PlaneWaveBasis& basis,
                                   const EnsembleOptions& opts = {}) {
  ens.validate();
  if (times_us.empty()) throw ValidationError("no sample times");
  for (std::size_t i = 0; i < times_us.size(); ++i) {
    if (!(times_us[i] >= 0.0)) throw ValidationError("sample times must be non-negative");
    if (i > 0 && !(times_us[i] > times_us[i - 1])) throw ValidationError("sample times must be strictly ascending");
  }
  if (kind == InterferometerKind::Echo && opts.n_echo < 1) throw ValidationError("n_echo must be >= 1");

  const auto nodes = quadrature_nodes(ens, spec.geometry);
  const std::size_t nt = times_us.size();
  double window = opts.echo_window_us;
  if (kind == InterferometerKind::Echo && window <= 0.0) window = fringe_period_us(band_gap(spec, basis), spec);

  std::vector<std::vector<double>> per_node(nodes.size());
  parallel_for(nodes.size(), opts.threads, [&](std::size_t i) {
    const QPointInterferometer qi(spec, basis, nodes[i].q, pulses);
    std::vector<double>& out = per_node[i];
    out.resize(nt);
    for (std::size_t j = 0; j < nt; ++j) {
      const double t = times_us[j];
      if (kind == InterferometerKind::Ramsey) {
        out[j] = qi.ramsey(t);
      } else {
        const double k = std::floor((t - times_us.front()) / window + 1e-12);
        const double t_ref = times_us.front() + k * window;
        out[j] = qi.echo(opts.n_echo, t_ref, t - t_ref);
      }
    }
  });

  FringeCurve curve;
  curve.times_us = times_us;
  curve.p_d.assign(nt, 0.0);
  const bool static_width = ens.width_schedule.empty();
  std::vector<double> w = quadrature_weights(nodes, ens.sigma_q);
  for (std::size_t j = 0; j < nt; ++j) {
    if (!static_width) w = quadrature_weights(nodes, ens.sigma_at(times_us[j]));
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) acc += w[i] * per_node[i][j];
    curve.p_d[j] = std::clamp(acc, 0.0, 1.0);
  }
  curve.metadata["kind"] = kind == InterferometerKind::Ramsey ? "ramsey" : "echo";
  curve.metadata["nodes"] = std::to_string(nodes.size());
  curve.metadata["sigma_q_hbar_k"] = std::to_string(ens.sigma_q);
  if (kind == InterferometerKind::Echo) {
    curve.metadata["n_echo"] = std::to_string(opts.n_echo);
    curve.metadata["echo_window_us"] = std::to_string(window);
  }
  return curve;
}

/// Single quasi-momentum fringe (the zero-width ensemble).
inline FringeCurve ramsey_fringe(const PulseSet& pulses, const std::vector<double>& times_us, const LatticeSpec& spec,
                                 const PlaneWaveBasis& basis) {
  return ensemble_fringe(InterferometerKind::Ramsey, pulses, times_us, EnsembleSpec{}, spec, basis);
}

/// Per-window contrast (max - min) / (max + min), windows of one period starting at the first sample.
inline ContrastCurve contrast_curve(const FringeCurve& fringe, double period_us) {
  fringe.validate();
  if (!(period_us > 0.0)) throw ValidationError("period must be positive");
  if (fringe.times_us.empty()) throw ValidationError("empty fringe");
  const double t0 = fringe.times_us.front();
  const double span = fringe.times_us.back() - t0;
  const auto windows = static_cast<std::size_t>(std::floor(span / period_us + 1e-9));
  if (windows < 2) throw ValidationError("fringe must span at least two periods");

  ContrastCurve out;
  std::size_t i = 0;
  for (std::size_t k = 0; k < windows; ++k) {
    const double lo = t0 + static_cast<double>(k) * period_us;
    const double hi = lo + period_us;
    double mx = -1.0, mn = 2.0;
    std::size_t count = 0;
    while (i < fringe.times_us.size() && fringe.times_us[i] < hi - 1e-9) {
      if (fringe.times_us[i] >= lo - 1e-9) {
        mx = std::max(mx, fringe.p_d[i]);
        mn = std::min(mn, fringe.p_d[i]);
        ++count;
      }
      ++i;
    }
    if (count < 8)
      throw ValidationError("fewer than 8 samples in contrast window " + std::to_string(k) +
                            "; reduce the time step below period/8");
    out.times_us.push_back(lo + 0.5 * period_us);
    out.contrast.push_back(mx + mn > 0.0 ? std::clamp((mx - mn) / (mx + mn), 0.0, 1.0) : 0.0);
  }
  return out;
}

struct CoherenceTime {
  std::optional<double> crossing_us;  // first 1/e crossing, linear interpolation
  double fit_tau_us = 0.0;            // least-squares fit of ln C = a - t / tau
};

inline CoherenceTime coherence_time(const ContrastCurve& curve) {
  if (curve.times_us.size() != curve.contrast.size() || curve.times_us.size() < 2)
    throw ValidationError("contrast curve needs at least two points");
  const double threshold = std::exp(-1.0);
  if (!(curve.contrast.front() > threshold)) throw ValidationError("contrast starts at or below 1/e");

  CoherenceTime out;
  for (std::size_t i = 1; i < curve.contrast.size(); ++i) {
    if (curve.contrast[i] < threshold) {
      const double c0 = curve.contrast[i - 1], c1 = curve.contrast[i];
      const double t0 = curve.times_us[i - 1], t1 = curve.times_us[i];
      out.crossing_us = t0 + (c0 - threshold) / (c0 - c1) * (t1 - t0);
      break;
    }
  }

  double st = 0, sy = 0, stt = 0, sty = 0;
  int n = 0;
  for (std::size_t i = 0; i < curve.contrast.size(); ++i) {
    if (curve.contrast[i] <= 1e-9) continue;
    const double t = curve.times_us[i], y = std::log(curve.contrast[i]);
    st += t;
    sy += y;
    stt += t * t;
    sty += t * y;
    ++n;
  }
  const double denom = n * stt - st * st;
  const double slope = (n >= 2 && denom != 0.0) ? (n * sty - st * sy) / denom : 0.0;
  out.fit_tau_us = slope < 0.0 ? -1.0 / slope : std::numeric_limits<double>::infinity();
  return out;
}

/// Mean spacing of upward crossings of the mid-level (max + min) / 2.
inline double measured_period_us(const FringeCurve& fringe) {
  fringe.validate();
  const auto [mn, mx] = std::minmax_element(fringe.p_d.begin(), fringe.p_d.end());
  const double mid = 0.5 * (*mn + *mx);
  std::vector<double> crossings;
  for (std::size_t i = 1; i < fringe.p_d.size(); ++i) {
    const double a = fringe.p_d[i - 1] - mid, b = fringe.p_d[i] - mid;
    if (a < 0.0 && b >= 0.0) {
      const double t0 = fringe.times_us[i - 1], t1 = fringe.times_us[i];
      crossings.push_back(t0 + (-a) / (b - a) * (t1 - t0));
    }
  }
  if (crossings.size() < 2) throw ValidationError("fringe has fewer than two full oscillations");
  return (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
}

/// Evenly spaced sample times [0, t_max] with step dt.
inline std::vector<double> time_grid(double t_max_us, double dt_us) {
  if (!(dt_us > 0.0) || !(t_max_us >= 0.0)) throw ValidationError("invalid time grid");
  const auto n = static_cast<std::size_t>(std::floor(t_max_us / dt_us + 1e-9)) + 1;
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i) * dt_us;
  return t;
}

}  // namespace blochri
