// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "blochri/blochri.hpp"
#include "blochri/io.hpp"

using namespace blochri;

namespace {

const std::filesystem::path kData = BLOCHRI_DATA_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool within(double value, double target, double tol) { return std::abs(value - target) <= tol; }

struct Setup {
  LatticeSpec spec;
  PlaneWaveBasis basis = build_basis(spec, 5);
  double gap = band_gap(spec, basis);
  double period = fringe_period_us(gap, spec);
};

const Setup& setup() {
  static const Setup s;
  return s;
}

PulseSequence paper(const std::string& name) { return io::load_sequence(kData / "sequences" / (name + ".json")).sequence; }

EnsembleSpec gaussian(double fwhm, int nodes = 21) {
  EnsembleSpec e;
  e.distribution = Distribution::IsotropicGaussian;
  e.sigma_q = sigma_from_width(fwhm, WidthReading::Fwhm);
  e.quadrature = nodes;
  return e;
}

FringeCurve fringe(InterferometerKind kind, const PulseSet& pulses, double t_max, double dt, const EnsembleSpec& ens,
                   unsigned threads = 1) {
  EnsembleOptions eo;
  eo.n_echo = 2;
  eo.echo_window_us = setup().period;
  eo.threads = threads;
  return ensemble_fringe(kind, pulses, time_grid(t_max, dt), ens, setup().spec, setup().basis, eo);
}

CoherenceTime coherence(const FringeCurve& f) { return coherence_time(contrast_curve(f, setup().period)); }

std::string crossing_text(const CoherenceTime& c) {
  return c.crossing_us ? fmt("%.1f us", *c.crossing_us) : std::string("not reached");
}

Outcome fidelity_check(const std::string& file, PulseKind kind, double target, double tol) {
  const auto t0 = std::chrono::steady_clock::now();
  const double f = fidelity(paper(file), make_objective(kind, setup().spec, setup().basis));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {within(f, target, tol) && secs < 1.0,
          fmt("fidelity %.6f (target %.3f +/- %.3f), %.3f s (limit 1 s)", f, target, tol, secs)};
}

Outcome criterion5() {
  PulseSet p;
  p.half_pi = Pulse::shortcut(PulseKind::HalfPi, paper("paper_pi2"));
  const FringeCurve f = fringe(InterferometerKind::Ramsey, p, 1000.0, 0.5, EnsembleSpec{});
  const double measured = measured_period_us(f);
  const double rel_paper = std::abs(measured / 88.8 - 1.0);
  const double rel_gap = std::abs(measured / setup().period - 1.0);
  return {rel_paper <= 0.02 && rel_gap <= 0.005,
          fmt("period %.3f us vs 88.8 us (%.2f%%, limit 2%%); h/gap %.3f us (%.3f%%, limit 0.5%%)", measured,
              100 * rel_paper, setup().period, 100 * rel_gap)};
}

Outcome criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  const CoherenceTime a = coherence(fringe(InterferometerKind::Ramsey, PulseSet{}, 2000.0, 2.0, gaussian(0.72)));
  const CoherenceTime b = coherence(fringe(InterferometerKind::Ramsey, PulseSet{}, 2500.0, 2.0, gaussian(0.56)));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pa = a.crossing_us && within(*a.crossing_us, 630.0, 0.25 * 630.0);
  const bool pb = b.crossing_us && within(*b.crossing_us, 960.0, 0.25 * 960.0);
  return {pa && pb && secs < 180.0,
          fmt("dq 0.72: %s (630 +/- 25%%) %s; dq 0.56: %s (960 +/- 25%%) %s; %.1f s (limit 180 s)",
              crossing_text(a).c_str(), pa ? "ok" : "out of range", crossing_text(b).c_str(),
              pb ? "ok" : "out of range", secs)};
}

Outcome criterion7() {
  const CoherenceTime c = coherence(fringe(InterferometerKind::Ramsey, PulseSet{}, 12000.0, 2.0, gaussian(0.20)));
  const bool ok = c.crossing_us && within(*c.crossing_us, 6300.0, 0.25 * 6300.0);
  return {ok, fmt("dq 0.20: %s (6300 +/- 25%%)", crossing_text(c).c_str())};
}

Outcome criterion8() {
  PulseSet p;
  p.half_pi = Pulse::shortcut(PulseKind::HalfPi, paper("paper_pi2"));
  p.pi = Pulse::shortcut(PulseKind::Pi, paper("paper_pi"));
  const EnsembleSpec ens = gaussian(0.72);
  const CoherenceTime r = coherence(fringe(InterferometerKind::Ramsey, p, 2000.0, 2.0, ens));
  const CoherenceTime e = coherence(fringe(InterferometerKind::Echo, p, 2000.0, 2.0, ens));
  const double ratio = (r.crossing_us && e.crossing_us) ? *e.crossing_us / *r.crossing_us
                       : (r.crossing_us && !e.crossing_us) ? std::numeric_limits<double>::infinity()
                                                           : 0.0;

  const ContrastCurve ri = contrast_curve(fringe(InterferometerKind::Ramsey, PulseSet{}, 2000.0, 2.0, ens), setup().period);
  const ContrastCurve ei = contrast_curve(fringe(InterferometerKind::Echo, PulseSet{}, 2000.0, 2.0, ens), setup().period);
  const std::size_t n = std::min(ri.contrast.size(), ei.contrast.size());
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) worst = std::min(worst, ei.contrast[i] - ri.contrast[i]);
  const bool ideal_ok = worst >= -1e-9;
  return {ratio > 2.0 && ideal_ok,
          fmt("paper pulses: echo %s / ramsey %s = %.2f (need > 2); ideal pulses: min(echo - ramsey contrast) = %.3g "
              "over %zu windows",
              crossing_text(e).c_str(), crossing_text(r).c_str(), ratio, worst, n)};
}

CMatrix expm_series(const CMatrix& a) {
  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  while (norm / std::pow(2.0, squarings) > 0.25) ++squarings;
  const CMatrix x = a / std::pow(2.0, squarings);
  CMatrix term = CMatrix::Identity(a.rows(), a.cols()), sum = term;
  for (int k = 1; k <= 30; ++k) {
    term = term * x / double(k);
    sum += term;
  }
  for (int s = 0; s < squarings; ++s) sum = sum * sum;
  return sum;
}

Outcome criterion9() {
  const Setup& s = setup();
  std::vector<std::string> failed;
  std::string notes;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> dur(0.0, 40.0);
  auto random_seq = [&](int steps) {
    PulseSequence q;
    for (int k = 0; k < steps; ++k) q.steps.push_back({dur(rng), dur(rng), std::nullopt});
    return q;
  };

  SequenceEngine engine(s.spec, s.basis, Vec2(0.1, -0.05));
  double unitarity = 0.0, norm_err = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const PulseSequence q = random_seq(4);
    const CMatrix u = engine.matrix(q);
    unitarity = std::max(unitarity, (u.adjoint() * u - CMatrix::Identity(u.rows(), u.cols())).norm());
    const QuantumState st = bloch_state(1, Vec2(0.1, -0.05), s.spec, s.basis);
    norm_err = std::max(norm_err, std::abs(engine.apply(st.amplitudes, q).norm() - 1.0));
  }
  if (!(unitarity < 1e-10)) failed.push_back("unitarity");
  if (!(norm_err < 1e-9)) failed.push_back("norm");
  notes += fmt("unitarity %.2g, norm %.2g", unitarity, norm_err);

  double phase_err = 0.0;
  bool in_range = true;
  for (auto kind : {PulseKind::HalfPi, PulseKind::Pi, PulseKind::Load}) {
    const PulseObjective obj = make_objective(kind, s.spec, s.basis);
    PulseObjective rot = obj;
    const cplx ph = std::exp(cplx(0.0, 0.77));
    rot.s_state *= ph;
    rot.d_state *= ph;
    for (auto& p : rot.pairs) {
      p.target *= ph;
      if (kind != PulseKind::Load) p.initial *= ph;
    }
    for (int trial = 0; trial < 3; ++trial) {
      const PulseSequence q = random_seq(3);
      const double a = fidelity(q, obj), b = fidelity(q, rot);
      in_range = in_range && a >= 0.0 && a <= 1.0;
      phase_err = std::max(phase_err, std::abs(a - b));
    }
  }
  if (!in_range || !(phase_err < 1e-12)) failed.push_back("fidelity range/phase");
  notes += fmt(", phase invariance %.2g", phase_err);

  OptimizerOptions oo;
  oo.max_iters = 30;
  const OptimizeResult opt =
      optimize(PulseSequence::from_durations({10.0, 20.0, 80.0, 10.0}), make_objective(PulseKind::Load, s.spec, s.basis), oo);
  bool monotone = true;
  for (std::size_t i = 1; i < opt.trace.size(); ++i) monotone = monotone && opt.trace[i].fidelity >= opt.trace[i - 1].fidelity;
  if (!monotone) failed.push_back("trace monotone");

  const PlaneWaveBasis b1 = build_basis(s.spec, 1);
  double series_err = 0.0;
  for (double t : {0.5, 7.0, 33.0}) {
    const Hamiltonian h = hamiltonian_on(b1, s.spec, Vec2(0.2, 0.1), s.spec.depth_er);
    series_err = std::max(series_err, (propagator(h, t) - expm_series(cplx(0.0, -h.rad_per_us * t) * h.matrix)).norm());
  }
  if (!(series_err < 1e-9)) failed.push_back("series oracle");
  notes += fmt(", series oracle %.2g", series_err);

  PulseSet ps;
  ps.half_pi = Pulse::shortcut(PulseKind::HalfPi, paper("paper_pi2"));
  EnsembleSpec zero = gaussian(0.0);
  const FringeCurve fz = fringe(InterferometerKind::Ramsey, ps, 400.0, 2.0, zero);
  const QPointInterferometer qi(s.spec, s.basis, Vec2::Zero(), ps);
  bool exact = true;
  for (std::size_t i = 0; i < fz.times_us.size(); ++i) exact = exact && fz.p_d[i] == qi.ramsey(fz.times_us[i]);
  if (!exact) failed.push_back("zero-width ensemble");

  const FringeCurve q21 = fringe(InterferometerKind::Ramsey, PulseSet{}, 2000.0, 2.0, gaussian(0.72, 21));
  const FringeCurve q31 = fringe(InterferometerKind::Ramsey, PulseSet{}, 2000.0, 2.0, gaussian(0.72, 31));
  double refine = 0.0;
  for (std::size_t i = 0; i < q21.p_d.size(); ++i) refine = std::max(refine, std::abs(q21.p_d[i] - q31.p_d[i]));
  if (!(refine < 1e-3)) failed.push_back("quadrature refinement");
  notes += fmt(", quadrature 21->31 %.3g (limit 1e-3)", refine);

  const FringeCurve d1 = fringe(InterferometerKind::Echo, ps, 300.0, 2.0, gaussian(0.72, 9), 1);
  const FringeCurve d3 = fringe(InterferometerKind::Echo, ps, 300.0, 2.0, gaussian(0.72, 9), 3);
  if (d1.p_d != d3.p_d) failed.push_back("thread determinism");

  std::string failed_text;
  for (const auto& f : failed) failed_text += (failed_text.empty() ? "" : ", ") + f;
  return {failed.empty(), notes + (failed.empty() ? "" : "; failing: " + failed_text)};
}

Outcome criterion10() {
  const auto t0 = std::chrono::steady_clock::now();
  OptimizerOptions o;
  o.restarts = 10;
  o.max_iters = 200;
  o.rng_seed = 1;
  const OptimizeResult r = design_sequence(make_objective(PulseKind::HalfPi, setup().spec, setup().basis), 5, o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {r.fidelity > 0.98 && secs < 300.0,
          fmt("best fidelity %.5f from 10 restarts (need > 0.98), %.1f s (limit 300 s)", r.fidelity, secs)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"pi/2 fidelity", [] { return fidelity_check("paper_pi2", PulseKind::HalfPi, 0.983, 0.010); }},
      {"loading fidelity", [] { return fidelity_check("paper_load", PulseKind::Load, 0.993, 0.010); }},
      {"pi fidelity", [] { return fidelity_check("paper_pi", PulseKind::Pi, 0.930, 0.015); }},
      {"variable-amplitude pi fidelity", [] { return fidelity_check("paper_pi_variable", PulseKind::Pi, 0.992, 0.010); }},
      {"fringe period", criterion5},
      {"dephasing coherence times", criterion6},
      {"narrow-ensemble coherence time", criterion7},
      {"echo improvement", criterion8},
      {"property suite", criterion9},
      {"optimizer reproduction", criterion10},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2zu %-32s %s  %s\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
