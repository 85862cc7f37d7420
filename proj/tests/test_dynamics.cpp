#include <gtest/gtest.h>

#include <random>

#include "blochri/dynamics.hpp"

using namespace blochri;

namespace {

LatticeSpec spec5() { return LatticeSpec{}; }

// exp(A) by scaling and squaring with a truncated Taylor series.
CMatrix expm_series(const CMatrix& a) {
  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  while (norm / std::pow(2.0, squarings) > 0.25) ++squarings;
  const CMatrix x = a / std::pow(2.0, squarings);
  const Eigen::Index n = a.rows();
  CMatrix term = CMatrix::Identity(n, n), sum = CMatrix::Identity(n, n);
  for (int k = 1; k <= 30; ++k) {
    term = term * x / double(k);
    sum += term;
  }
  for (int s = 0; s < squarings; ++s) sum = sum * sum;
  return sum;
}

PulseSequence random_sequence(std::mt19937_64& rng, int steps, bool depths) {
  std::uniform_real_distribution<double> t(0.0, 40.0), v(2.0, 7.0);
  PulseSequence seq;
  for (int k = 0; k < steps; ++k) {
    PulseStep s{t(rng), t(rng), std::nullopt};
    if (depths) s.depth_er = v(rng);
    seq.steps.push_back(s);
  }
  return seq;
}

double unitarity_error(const CMatrix& u) {
  return (u.adjoint() * u - CMatrix::Identity(u.rows(), u.cols())).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(Propagator, MatchesSeriesExpansionOnSmallBasis) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 1);
  for (const Vec2& q : {Vec2(0, 0), Vec2(0.3, -0.2)}) {
    for (double t : {0.7, 13.0, 55.5}) {
      const Hamiltonian h = hamiltonian_on(basis, spec, q, 5.0);
      const CMatrix expected = expm_series(cplx(0.0, -h.rad_per_us * t) * h.matrix);
      EXPECT_LT((propagator(h, t) - expected).cwiseAbs().maxCoeff(), 1e-9) << "t = " << t;
      const Hamiltonian h0 = hamiltonian_off(basis, spec, q);
      const CMatrix expected0 = expm_series(cplx(0.0, -h0.rad_per_us * t) * h0.matrix);
      EXPECT_LT((propagator(h0, t) - expected0).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Propagator, GroupPropertyAndIdentityAtZero) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 3);
  const Hamiltonian h = hamiltonian_on(basis, spec, Vec2(0.1, 0.05), 5.0);
  const CMatrix u1 = propagator(h, 7.0), u2 = propagator(h, 11.0), u12 = propagator(h, 18.0);
  EXPECT_LT((u2 * u1 - u12).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((propagator(h, 0.0) - CMatrix::Identity(h.matrix.rows(), h.matrix.cols())).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(propagator(h, -1.0), ValidationError);
}

TEST(Propagator, UnitaryOnProductionBasis) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 5);
  for (double t : {1.0, 50.0, 500.0}) {
    EXPECT_LT(unitarity_error(propagator(hamiltonian_on(basis, spec, Vec2(0.2, 0.4), 5.0), t)), 1e-10);
    EXPECT_LT(unitarity_error(propagator(hamiltonian_off(basis, spec, Vec2(0.2, 0.4)), t)), 1e-10);
  }
}

TEST(SolveBands, RejectsNonHermitianMatrix) {
  const LatticeSpec spec = spec5();
  Hamiltonian h = hamiltonian_on(build_basis(spec, 1), spec, Vec2::Zero(), 5.0);
  h.matrix(0, 1) += cplx(0.0, 1e-6);
  EXPECT_THROW(solve_bands(h), ValidationError);
}

TEST(SolveBands, EigenpairsAndOrthonormality) {
  const LatticeSpec spec = spec5();
  const Hamiltonian h = hamiltonian_on(build_basis(spec, 4), spec, Vec2(0.3, 0.1), 5.0);
  const BandSolution sol = solve_bands(h);
  EXPECT_LT(unitarity_error(sol.states), 1e-12);
  for (Eigen::Index n = 1; n < sol.energies.size(); ++n) EXPECT_LE(sol.energies(n - 1), sol.energies(n));
  EXPECT_LT((h.matrix * sol.states - sol.states * sol.energies.asDiagonal()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BlochState, SAndDAreNormalisedEigenstatesAtGamma) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 5);
  const Hamiltonian h = hamiltonian_on(basis, spec, Vec2::Zero(), 5.0);
  const BandSolution sol = solve_bands(h);
  for (int band : {1, 4}) {
    const QuantumState s = bloch_state(sol, band, basis);
    EXPECT_NEAR(s.norm(), 1.0, 1e-12);
    EXPECT_LT((h.matrix * s.amplitudes - sol.energies(band - 1) * s.amplitudes).norm(), 1e-9);
  }
  EXPECT_NEAR(std::abs(overlap(bloch_state(sol, 1, basis), bloch_state(sol, 4, basis))), 0.0, 1e-12);
  EXPECT_THROW(bloch_state(sol, 0, basis), ValidationError);
  EXPECT_THROW(bloch_state(sol, int(basis.size()) + 1, basis), ValidationError);
}

TEST(BlochState, SAndDAreInvariantUnderSixFoldPermutation) {
  // Rotation by 60 degrees maps b1 -> b2, b2 -> b2 - b1, i.e. (n1, n2) -> (-n2, n1 + n2).
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 5);
  for (int band : {1, 4}) {
    const QuantumState s = bloch_state(band, Vec2::Zero(), spec, basis);
    double worst = 0.0;
    for (std::size_t i = 0; i < basis.size(); ++i) {
      const auto& site = basis.sites()[i];
      const auto j = basis.index_of({-site[1], site[0] + site[1]});
      if (!j) continue;  // the rhombic cut is not six-fold symmetric at its edge
      if (std::abs(site[0]) + std::abs(site[1]) + std::abs(site[0] + site[1]) > 2 * 4) continue;
      worst = std::max(worst, std::abs(s.amplitudes(i) - s.amplitudes(*j)));
    }
    EXPECT_LT(worst, 1e-6) << "band " << band;
  }
}

TEST(BlochState, DegenerateBandPicksSymmetricCombination) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 4);
  const BandSolution sol = solve_bands(hamiltonian_on(basis, spec, Vec2::Zero(), 5.0));
  ASSERT_NEAR(sol.energies(4), sol.energies(5), 1e-6);
  const QuantumState s5 = bloch_state(sol, 5, basis);
  EXPECT_NEAR(s5.norm(), 1.0, 1e-12);
  const double in_subspace = std::norm(sol.states.col(4).dot(s5.amplitudes)) + std::norm(sol.states.col(5).dot(s5.amplitudes));
  EXPECT_NEAR(in_subspace, 1.0, 1e-9);
}

TEST(FixPhase, LargestComponentBecomesRealPositive) {
  CVector v(3);
  v << cplx(0.1, 0.2), cplx(-0.3, -0.9), cplx(0.05, 0.0);
  const double before = v.norm();
  fix_phase(v);
  EXPECT_NEAR(v(1).imag(), 0.0, 1e-15);
  EXPECT_GT(v(1).real(), 0.0);
  EXPECT_NEAR(v.norm(), before, 1e-15);
}

TEST(PulseSequence, ValidationAndDuration) {
  const PulseSequence seq = PulseSequence::from_durations({1, 2, 3, 4}, {4.5, 5.5});
  EXPECT_EQ(seq.steps.size(), 2u);
  EXPECT_DOUBLE_EQ(seq.duration_us(), 10.0);
  EXPECT_EQ(*seq.steps[1].depth_er, 5.5);
  EXPECT_THROW(PulseSequence::from_durations({1, 2, 3}), ValidationError);
  EXPECT_THROW(PulseSequence::from_durations({1, 2}, {1, 2}), ValidationError);
  EXPECT_THROW(PulseSequence::from_durations({-1, 2}).validate(), ValidationError);
  EXPECT_THROW(PulseSequence{}.validate(), ValidationError);
  EXPECT_THROW(PulseSequence::from_durations({1, 2}, {-1}).validate(), ValidationError);
}

TEST(SequenceEngine, UnitaryAndNormPreservingForRandomSequences) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 5);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 4; ++trial) {
    const Vec2 q(0.1 * trial, -0.05 * trial);
    SequenceEngine engine(spec, basis, q);
    const PulseSequence seq = random_sequence(rng, 5, trial % 2 == 1);
    EXPECT_LT(unitarity_error(engine.matrix(seq)), 1e-10);
    const QuantumState s = bloch_state(1, q, spec, basis);
    const QuantumState out = apply_sequence(s, seq, spec, basis);
    EXPECT_NEAR(out.norm(), 1.0, 1e-9);
  }
}

TEST(SequenceEngine, ApplyMatchesPropagatorProduct) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 2);
  const Vec2 q(0.15, 0.05);
  const PulseSequence seq = PulseSequence::from_durations({3.0, 5.0, 7.0, 2.0}, {4.0, 5.5});
  CMatrix u = CMatrix::Identity(basis.size(), basis.size());
  for (const auto& s : seq.steps) {
    u = propagator(hamiltonian_on(basis, spec, q, *s.depth_er), s.t_on_us) * u;
    u = propagator(hamiltonian_off(basis, spec, q), s.t_off_us) * u;
  }
  SequenceEngine engine(spec, basis, q);
  EXPECT_LT((engine.matrix(seq) - u).cwiseAbs().maxCoeff(), 1e-10);
  CVector x = CVector::Random(basis.size());
  EXPECT_LT((engine.apply(x, seq) - u * x).norm(), 1e-10);
  EXPECT_LT((engine.apply_adjoint(x, seq) - u.adjoint() * x).norm(), 1e-10);
}

TEST(SequenceEngine, LatticeOnThenOffOrdering) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 2);
  const PulseSequence seq = PulseSequence::from_durations({4.0, 9.0});
  const CMatrix on = propagator(hamiltonian_on(basis, spec, Vec2::Zero(), 5.0), 4.0);
  const CMatrix off = propagator(hamiltonian_off(basis, spec, Vec2::Zero()), 9.0);
  SequenceEngine engine(spec, basis, Vec2::Zero());
  EXPECT_LT((engine.matrix(seq) - off * on).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((engine.matrix(seq) - on * off).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(SequenceEngine, ZeroLengthSequenceIsIdentity) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 2);
  SequenceEngine engine(spec, basis, Vec2::Zero());
  const CMatrix u = engine.matrix(PulseSequence::from_durations({0.0, 0.0}));
  EXPECT_LT((u - CMatrix::Identity(u.rows(), u.cols())).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SequenceEngine, RejectsDimensionMismatch) {
  const LatticeSpec spec = spec5();
  SequenceEngine engine(spec, build_basis(spec, 2), Vec2::Zero());
  EXPECT_THROW(engine.apply(CVector::Zero(3), PulseSequence::from_durations({1, 1})), ValidationError);
}

TEST(BandPopulations, SumToOneOverAllBands) {
  const LatticeSpec spec = spec5();
  const PlaneWaveBasis basis = build_basis(spec, 3);
  const BandSolution sol = solve_bands(hamiltonian_on(basis, spec, Vec2::Zero(), 5.0));
  const QuantumState pw = QuantumState::plane_wave(basis, {0, 0}, Vec2::Zero());
  const auto p = band_populations(pw, sol, basis.size());
  double sum = 0.0;
  for (double x : p) sum += x;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  const auto ps = band_populations(bloch_state(sol, 1, basis), sol, 4);
  EXPECT_NEAR(ps[0], 1.0, 1e-12);
  EXPECT_THROW(band_populations(QuantumState::plane_wave(basis, {0, 0}, Vec2(0.1, 0)), sol, 2), ValidationError);
}
