#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "blochri/error.hpp"

namespace blochri {

using cplx = std::complex<double>;
using Vec2 = Eigen::Vector2d;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

/// Integer coordinates (n1, n2) of a reciprocal-lattice vector G = n1*b1 + n2*b2.
using SiteIndex = std::array<int, 2>;

namespace constants {
inline constexpr double planck = 6.62607015e-34;  // J s
inline constexpr double hbar = planck / (2.0 * std::numbers::pi);
inline constexpr double rb87_mass = 1.4432e-25;  // kg
}  // namespace constants

enum class Geometry { Triangular3Beam, StandingWave1D };

/**
 * How the nominal depth V_OL maps onto the potential's Fourier coefficients.
 *
 * SingleBeam:   V(r) = -(V_OL/4) |sum_j exp(i k_j.r)|^2. Each beam pair
 *               interferes as it would in a 1D standing wave of depth V_OL.
 * PeakToTrough: V(r) = -(V_OL/9) |sum_j exp(i k_j.r)|^2, so the full
 *               modulation of the three-beam pattern equals V_OL.
 *
 * Both reduce to V(x) = -V_OL cos^2(kx) for the 1D standing wave.
 */
enum class PotentialConvention { SingleBeam, PeakToTrough };

inline std::string to_string(Geometry g) {
  return g == Geometry::Triangular3Beam ? "triangular" : "standing_wave_1d";
}

inline std::string to_string(PotentialConvention c) {
  return c == PotentialConvention::SingleBeam ? "single_beam" : "peak_to_trough";
}

struct LatticeSpec {
  Geometry geometry = Geometry::Triangular3Beam;
  double wavelength_m = 1064e-9;
  double depth_er = 5.0;
  double atom_mass_kg = constants::rb87_mass;
  PotentialConvention convention = PotentialConvention::SingleBeam;

  void validate() const {
    if (!(wavelength_m > 0.0) || !std::isfinite(wavelength_m))
      throw ValidationError("lattice wavelength must be positive");
    if (!(depth_er >= 0.0) || !std::isfinite(depth_er))
      throw ValidationError("lattice depth must be non-negative");
    if (!(atom_mass_kg > 0.0) || !std::isfinite(atom_mass_kg))
      throw ValidationError("atom mass must be positive");
  }

  double wavenumber() const { return 2.0 * std::numbers::pi / wavelength_m; }
};

struct RecoilEnergy {
  double joules;
  double hertz;
  /// Angular frequency of one recoil energy in rad/us: the factor that turns
  /// an energy in E_r into a phase rate.
  double rad_per_us;
};

inline RecoilEnergy recoil_energy(const LatticeSpec& spec) {
  spec.validate();
  const double k = spec.wavenumber();
  const double e = constants::hbar * constants::hbar * k * k / (2.0 * spec.atom_mass_kg);
  const double f = e / constants::planck;
  return {e, f, 2.0 * std::numbers::pi * f * 1e-6};
}

/// Beam wavevectors in units of k; first beam along +x.
inline std::array<Vec2, 3> beam_wavevectors(const LatticeSpec& spec) {
  if (spec.geometry != Geometry::Triangular3Beam)
    throw GeometryMismatch("beam_wavevectors requires the triangular three-beam geometry");
  const double s = std::sqrt(3.0) / 2.0;
  return {Vec2(1.0, 0.0), Vec2(-0.5, s), Vec2(-0.5, -s)};
}

/**
 * Truncated plane-wave basis. Sites are all (n1, n2) with |n1|, |n2| <= N
 * (n2 = 0 in 1D), ordered lexicographically. Reciprocal primitives are in
 * units of k: b1 = k1 - k2 and b2 = k1 - k3 for the triangular lattice,
 * b1 = 2 x-hat for the standing wave.
 */
class PlaneWaveBasis {
 public:
  PlaneWaveBasis(Geometry geometry, int shell_radius) : geometry_(geometry), radius_(shell_radius) {
    if (shell_radius < 1) throw ValidationError("shell_radius must be >= 1");
    if (geometry == Geometry::Triangular3Beam) {
      const double s = std::sqrt(3.0) / 2.0;
      primitives_ = {Vec2(1.5, -s), Vec2(1.5, s)};
      for (int n1 = -radius_; n1 <= radius_; ++n1)
        for (int n2 = -radius_; n2 <= radius_; ++n2) sites_.push_back({n1, n2});
    } else {
      primitives_ = {Vec2(2.0, 0.0), Vec2(0.0, 0.0)};
      for (int n1 = -radius_; n1 <= radius_; ++n1) sites_.push_back({n1, 0});
    }
    vectors_.reserve(sites_.size());
    for (const auto& s : sites_) vectors_.push_back(reciprocal_vector(s));
  }

  Geometry geometry() const { return geometry_; }
  int shell_radius() const { return radius_; }
  std::size_t size() const { return sites_.size(); }
  const std::vector<SiteIndex>& sites() const { return sites_; }
  const std::array<Vec2, 2>& reciprocal_primitives() const { return primitives_; }
  /// Cartesian G for site i, units of k.
  const Vec2& vector(std::size_t i) const { return vectors_[i]; }

  Vec2 reciprocal_vector(const SiteIndex& s) const {
    return s[0] * primitives_[0] + s[1] * primitives_[1];
  }

  std::optional<std::size_t> index_of(const SiteIndex& s) const {
    if (std::abs(s[0]) > radius_ || std::abs(s[1]) > radius_) return std::nullopt;
    if (geometry_ == Geometry::StandingWave1D) {
      if (s[1] != 0) return std::nullopt;
      return static_cast<std::size_t>(s[0] + radius_);
    }
    const int width = 2 * radius_ + 1;
    return static_cast<std::size_t>((s[0] + radius_) * width + (s[1] + radius_));
  }

  std::size_t origin() const { return *index_of({0, 0}); }

  /// Smallest non-zero reciprocal vectors: six for the triangular lattice, two in 1D.
  std::vector<SiteIndex> first_shell() const {
    if (geometry_ == Geometry::StandingWave1D) return {{-1, 0}, {1, 0}};
    return {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {-1, 1}, {1, -1}};
  }

 private:
  Geometry geometry_;
  int radius_;
  std::array<Vec2, 2> primitives_;
  std::vector<SiteIndex> sites_;
  std::vector<Vec2> vectors_;
};

inline PlaneWaveBasis build_basis(const LatticeSpec& spec, int shell_radius) {
  spec.validate();
  return PlaneWaveBasis(spec.geometry, shell_radius);
}

/// Fourier coefficients V_G of the lattice potential, in E_r. Includes G = 0.
using PotentialFourier = std::map<SiteIndex, cplx>;

inline PotentialFourier potential_fourier(const LatticeSpec& spec, double depth_er) {
  if (!(depth_er >= 0.0)) throw ValidationError("depth must be non-negative");
  PotentialFourier out;
  if (spec.geometry == Geometry::StandingWave1D) {
    // -V cos^2(kx) = -V/2 - (V/4)(e^{2ikx} + e^{-2ikx})
    out[{0, 0}] = -depth_er / 2.0;
    out[{1, 0}] = -depth_er / 4.0;
    out[{-1, 0}] = -depth_er / 4.0;
    return out;
  }
  const double scale = spec.convention == PotentialConvention::SingleBeam ? 4.0 : 9.0;
  // |sum_j e^{i k_j.r}|^2 = 3 + sum_{i != j} e^{i (k_i - k_j).r}
  // k1-k2 = b1, k1-k3 = b2, k2-k3 = b2-b1
  const double c = -depth_er / scale;
  out[{0, 0}] = 3.0 * c;
  for (const SiteIndex& g : {SiteIndex{1, 0}, SiteIndex{-1, 0}, SiteIndex{0, 1}, SiteIndex{0, -1},
                             SiteIndex{-1, 1}, SiteIndex{1, -1}})
    out[g] = c;
  return out;
}

struct Hamiltonian {
  CMatrix matrix;    // E_r
  Vec2 quasimomentum;  // hbar k
  double depth_er = 0.0;
  double rad_per_us = 0.0;

  bool is_diagonal() const {
    const CMatrix off = matrix - CMatrix(matrix.diagonal().asDiagonal());
    return off.cwiseAbs().maxCoeff() == 0.0;
  }

  double hermiticity_error() const { return (matrix - matrix.adjoint()).cwiseAbs().maxCoeff(); }
};

inline void check_geometry(const PlaneWaveBasis& basis, const LatticeSpec& spec) {
  if (basis.geometry() != spec.geometry)
    throw GeometryMismatch("basis geometry " + to_string(basis.geometry()) +
                           " does not match lattice geometry " + to_string(spec.geometry));
}

inline Hamiltonian hamiltonian_on(const PlaneWaveBasis& basis, const LatticeSpec& spec, const Vec2& q,
                                  double depth_er) {
  check_geometry(basis, spec);
  const std::size_t n = basis.size();
  Hamiltonian h{CMatrix::Zero(n, n), q, depth_er, recoil_energy(spec).rad_per_us};
  for (std::size_t i = 0; i < n; ++i) h.matrix(i, i) = (q + basis.vector(i)).squaredNorm();
  if (depth_er == 0.0) return h;

  const PotentialFourier vg = potential_fourier(spec, depth_er);
  for (std::size_t i = 0; i < n; ++i) {
    const SiteIndex& si = basis.sites()[i];
    for (const auto& [g, coeff] : vg) {
      // <G_i| V |G_j> = V_{G_i - G_j}
      const auto j = basis.index_of({si[0] - g[0], si[1] - g[1]});
      if (j) h.matrix(i, *j) += coeff;
    }
  }
  return h;
}

inline Hamiltonian hamiltonian_off(const PlaneWaveBasis& basis, const LatticeSpec& spec, const Vec2& q) {
  return hamiltonian_on(basis, spec, q, 0.0);
}

/// Maps q back into the first Brillouin zone by subtracting the nearest reciprocal vector.
inline Vec2 fold_to_first_zone(const Vec2& q, const PlaneWaveBasis& basis) {
  const auto& b = basis.reciprocal_primitives();
  Vec2 best = q;
  double best_norm = q.squaredNorm();
  // a few sweeps handle q several zones away
  for (int sweep = 0; sweep < 8; ++sweep) {
    bool moved = false;
    const Vec2 start = best;
    for (int n1 = -1; n1 <= 1; ++n1) {
      for (int n2 = -1; n2 <= 1; ++n2) {
        if (basis.geometry() == Geometry::StandingWave1D && n2 != 0) continue;
        const Vec2 cand = start - (n1 * b[0] + n2 * b[1]);
        if (cand.squaredNorm() < best_norm - 1e-14) {
          best = cand;
          best_norm = cand.squaredNorm();
          moved = true;
        }
      }
    }
    if (!moved) break;
  }
  return best;
}

/// Index of the D band counted from 1: fourth band on the triangular lattice, third in 1D.
inline int d_band_index(Geometry g) { return g == Geometry::Triangular3Beam ? 4 : 3; }

}  // namespace blochri
