#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "blochri/error.hpp"
#include "blochri/lattice.hpp"

namespace blochri {

struct QuantumState {
  Vec2 quasimomentum = Vec2::Zero();
  CVector amplitudes;

  std::size_t size() const { return static_cast<std::size_t>(amplitudes.size()); }
  double norm() const { return amplitudes.norm(); }

  static QuantumState plane_wave(const PlaneWaveBasis& basis, const SiteIndex& site, const Vec2& q) {
    const auto idx = basis.index_of(site);
    if (!idx) throw ValidationError("plane-wave site outside the basis");
    QuantumState s{q, CVector::Zero(static_cast<Eigen::Index>(basis.size()))};
    s.amplitudes(static_cast<Eigen::Index>(*idx)) = 1.0;
    return s;
  }
};

inline cplx overlap(const QuantumState& bra, const QuantumState& ket) {
  return bra.amplitudes.dot(ket.amplitudes);  // conjugates bra
}

/// Rotates v so that its largest-magnitude component is real and positive.
inline void fix_phase(Eigen::Ref<CVector> v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  const double mag = std::abs(v(arg));
  if (mag > 0.0) v *= std::conj(v(arg)) / mag;
}

struct BandSolution {
  Vec2 quasimomentum = Vec2::Zero();
  Eigen::VectorXd energies;  // ascending, E_r
  CMatrix states;            // column n is band n+1

  std::size_t size() const { return static_cast<std::size_t>(energies.size()); }
};

inline BandSolution solve_bands(const Hamiltonian& h) {
  if (h.matrix.rows() != h.matrix.cols() || h.matrix.rows() == 0)
    throw ValidationError("Hamiltonian must be a non-empty square matrix");
  if (!h.matrix.allFinite()) throw NumericalFailure("Hamiltonian has non-finite entries");
  const double herm = h.hermiticity_error();
  if (herm >= 1e-12) {
    std::ostringstream msg;
    msg << "Hamiltonian is not Hermitian (max |H - H^dag| = " << herm << ")";
    throw ValidationError(msg.str());
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h.matrix);
  if (es.info() != Eigen::Success) throw NumericalFailure("Hermitian eigensolver failed");
  BandSolution sol{h.quasimomentum, es.eigenvalues(), es.eigenvectors()};
  for (Eigen::Index n = 0; n < sol.states.cols(); ++n) fix_phase(sol.states.col(n));
  return sol;
}

inline constexpr double kDegeneracyTolerance = 1e-6;  // E_r

/**
 * Band state `band_index` (1-based) from an existing solution. When the band
 * is (near-)degenerate, the returned vector is the member of the degenerate
 * subspace with maximal overlap onto the fully symmetric first-shell
 * combination, which is the only one the S band couples to at Gamma.
 */
inline QuantumState bloch_state(const BandSolution& sol, int band_index, const PlaneWaveBasis& basis) {
  if (band_index < 1 || static_cast<std::size_t>(band_index) > sol.size())
    throw ValidationError("band index " + std::to_string(band_index) + " out of range 1.." +
                          std::to_string(sol.size()));
  if (sol.size() != basis.size()) throw ValidationError("band solution does not match basis size");
  const Eigen::Index b = band_index - 1;
  const double e = sol.energies(b);

  std::vector<Eigen::Index> cluster;
  for (Eigen::Index j = 0; j < sol.energies.size(); ++j)
    if (std::abs(sol.energies(j) - e) < kDegeneracyTolerance) cluster.push_back(j);

  QuantumState out{sol.quasimomentum, sol.states.col(b)};
  if (cluster.size() < 2) return out;

  CVector sym = CVector::Zero(static_cast<Eigen::Index>(basis.size()));
  for (const auto& site : basis.first_shell())
    if (const auto i = basis.index_of(site)) sym(static_cast<Eigen::Index>(*i)) = 1.0;
  sym.normalize();

  CVector proj = CVector::Zero(sym.size());
  for (const auto j : cluster) proj += sol.states.col(j) * sol.states.col(j).dot(sym);
  if (proj.norm() < 1e-8) return out;
  proj.normalize();
  fix_phase(proj);
  out.amplitudes = proj;
  return out;
}

inline QuantumState bloch_state(int band_index, const Vec2& q, const LatticeSpec& spec,
                                const PlaneWaveBasis& basis) {
  return bloch_state(solve_bands(hamiltonian_on(basis, spec, q, spec.depth_er)), band_index, basis);
}

/// exp(-i H t / hbar) with t in microseconds.
inline CMatrix propagator(const Hamiltonian& h, double t_us) {
  if (!(t_us >= 0.0)) throw ValidationError("propagation time must be non-negative");
  const Eigen::Index n = h.matrix.rows();
  if (h.is_diagonal()) {
    CMatrix u = CMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      u(i, i) = std::exp(cplx(0.0, -h.matrix(i, i).real() * h.rad_per_us * t_us));
    return u;
  }
  const BandSolution sol = solve_bands(h);
  CVector phases(n);
  for (Eigen::Index i = 0; i < n; ++i)
    phases(i) = std::exp(cplx(0.0, -sol.energies(i) * h.rad_per_us * t_us));
  return sol.states * phases.asDiagonal() * sol.states.adjoint();
}

struct PulseStep {
  double t_on_us = 0.0;
  double t_off_us = 0.0;
  std::optional<double> depth_er;  // overrides the lattice depth for this step

  bool operator==(const PulseStep&) const = default;
};

struct PulseSequence {
  std::vector<PulseStep> steps;

  bool operator==(const PulseSequence&) const = default;

  void validate() const {
    if (steps.empty()) throw ValidationError("pulse sequence needs at least one step");
    for (const auto& s : steps) {
      if (!(s.t_on_us >= 0.0) || !(s.t_off_us >= 0.0) || !std::isfinite(s.t_on_us) ||
          !std::isfinite(s.t_off_us))
        throw ValidationError("pulse durations must be finite and non-negative");
      if (s.depth_er && (!(*s.depth_er >= 0.0) || !std::isfinite(*s.depth_er)))
        throw ValidationError("pulse depth must be finite and non-negative");
    }
  }

  double duration_us() const {
    double t = 0.0;
    for (const auto& s : steps) t += s.t_on_us + s.t_off_us;
    return t;
  }

  /// Flat (t1_on, t1_off, t2_on, ...) constructor; depths optional, one per step.
  static PulseSequence from_durations(const std::vector<double>& on_off,
                                      const std::vector<double>& depths = {}) {
    if (on_off.size() % 2 != 0) throw ValidationError("durations must come in on/off pairs");
    if (!depths.empty() && depths.size() * 2 != on_off.size())
      throw ValidationError("need exactly one depth per step");
    PulseSequence seq;
    for (std::size_t i = 0; i < on_off.size() / 2; ++i) {
      PulseStep s{on_off[2 * i], on_off[2 * i + 1], std::nullopt};
      if (!depths.empty()) s.depth_er = depths[i];
      seq.steps.push_back(s);
    }
    return seq;
  }
};

/**
 * Applies pulse sequences at one quasi-momentum. Lattice-on evolution is done
 * in the eigenbasis of the on-Hamiltonian for each depth (cached), lattice-off
 * evolution is diagonal in the plane-wave basis.
 *
 * The depth cache is mutable, so an engine must not be shared between threads.
 */
class SequenceEngine {
 public:
  SequenceEngine(LatticeSpec spec, PlaneWaveBasis basis, Vec2 q)
      : spec_(std::move(spec)), basis_(std::move(basis)), q_(std::move(q)) {
    check_geometry(basis_, spec_);
    rate_ = recoil_energy(spec_).rad_per_us;
    kinetic_.resize(static_cast<Eigen::Index>(basis_.size()));
    for (std::size_t i = 0; i < basis_.size(); ++i)
      kinetic_(static_cast<Eigen::Index>(i)) = (q_ + basis_.vector(i)).squaredNorm();
  }

  const LatticeSpec& spec() const { return spec_; }
  const PlaneWaveBasis& basis() const { return basis_; }
  const Vec2& quasimomentum() const { return q_; }
  double rad_per_us() const { return rate_; }

  const BandSolution& on_solution(double depth_er) {
    auto it = cache_.find(depth_er);
    if (it != cache_.end()) return it->second;
    if (cache_.size() > 64) cache_.clear();
    return cache_.emplace(depth_er, solve_bands(hamiltonian_on(basis_, spec_, q_, depth_er))).first->second;
  }

  CVector apply(const CVector& x, const PulseSequence& seq) { return run(x, seq, false); }
  CVector apply_adjoint(const CVector& x, const PulseSequence& seq) { return run(x, seq, true); }

  /// Full unitary of the sequence in the plane-wave basis.
  CMatrix matrix(const PulseSequence& seq) {
    const Eigen::Index n = static_cast<Eigen::Index>(basis_.size());
    CMatrix m = CMatrix::Identity(n, n);
    for (const auto& s : seq.steps) {
      if (s.t_on_us > 0.0) {
        const BandSolution& sol = on_solution(s.depth_er.value_or(spec_.depth_er));
        const CVector ph = phases(sol.energies, s.t_on_us, false);
        m = sol.states * (ph.asDiagonal() * (sol.states.adjoint() * m));
      }
      if (s.t_off_us > 0.0) m = phases(kinetic_, s.t_off_us, false).asDiagonal() * m;
    }
    return m;
  }

 private:
  CVector phases(const Eigen::VectorXd& e, double t, bool adjoint) const {
    const double sign = adjoint ? 1.0 : -1.0;
    CVector ph(e.size());
    for (Eigen::Index i = 0; i < e.size(); ++i) ph(i) = std::exp(cplx(0.0, sign * e(i) * rate_ * t));
    return ph;
  }

  CVector run(const CVector& x, const PulseSequence& seq, bool adjoint) {
    if (static_cast<std::size_t>(x.size()) != basis_.size())
      throw ValidationError("state dimension does not match basis size");
    seq.validate();
    CVector v = x;
    auto on = [&](const PulseStep& s) {
      if (s.t_on_us == 0.0) return;
      const BandSolution& sol = on_solution(s.depth_er.value_or(spec_.depth_er));
      CVector c = sol.states.adjoint() * v;
      c.array() *= phases(sol.energies, s.t_on_us, adjoint).array();
      v.noalias() = sol.states * c;
    };
    auto off = [&](const PulseStep& s) {
      if (s.t_off_us == 0.0) return;
      v.array() *= phases(kinetic_, s.t_off_us, adjoint).array();
    };
    if (!adjoint) {
      for (const auto& s : seq.steps) {
        on(s);
        off(s);
      }
    } else {
      for (auto it = seq.steps.rbegin(); it != seq.steps.rend(); ++it) {
        off(*it);
        on(*it);
      }
    }
    return v;
  }

  LatticeSpec spec_;
  PlaneWaveBasis basis_;
  Vec2 q_;
  double rate_ = 0.0;
  Eigen::VectorXd kinetic_;
  std::map<double, BandSolution> cache_;
};

/// Time-ordered product: each step is lattice-on for t_on, then lattice-off for t_off.
inline QuantumState apply_sequence(const QuantumState& state, const PulseSequence& seq,
                                   const LatticeSpec& spec, const PlaneWaveBasis& basis) {
  SequenceEngine engine(spec, basis, state.quasimomentum);
  return {state.quasimomentum, engine.apply(state.amplitudes, seq)};
}

/// |<v_n|state>|^2 for the first n_bands bands.
inline std::vector<double> band_populations(const QuantumState& state, const BandSolution& sol,
                                            std::size_t n_bands) {
  if (state.size() != sol.size()) throw ValidationError("state and band solution sizes differ");
  if ((state.quasimomentum - sol.quasimomentum).norm() > 1e-12)
    throw ValidationError("state and band solution are at different quasi-momenta");
  if (n_bands > sol.size()) throw ValidationError("requested more bands than the basis holds");
  std::vector<double> p(n_bands);
  for (std::size_t n = 0; n < n_bands; ++n)
    p[n] = std::norm(sol.states.col(static_cast<Eigen::Index>(n)).dot(state.amplitudes));
  return p;
}

}  // namespace blochri
