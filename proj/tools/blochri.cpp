#include <CLI11.hpp>

#include <iostream>

#include "blochri/cli.hpp"

namespace {

void add_common(CLI::App* app, blochri::cli::CommonOptions& c) {
  app->add_option("--config", c.config_path, "Run config (JSON); defaults to $BLOCHRI_CONFIG");
  app->add_option("--out", c.out_dir, "Output directory");
  app->add_option("--seed", c.seed, "RNG seed");
  app->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
}

blochri::PulseKind kind_from(const std::string& s) { return blochri::parse_pulse_kind(s); }

}  // namespace

int main(int argc, char** argv) {
  using namespace blochri::cli;

  CLI::App app{"Bloch-band shortcut pulse design and Ramsey interferometry in optical lattices"};
  app.require_subcommand(1);
  CommonOptions common;

  BandsOptions bands;
  auto* c_bands = app.add_subcommand("bands", "Band energies along a Brillouin-zone path");
  add_common(c_bands, common);
  c_bands->add_option("--path", bands.path, "Waypoints: G, M, K (triangular), X (1D) or qx:qy")->delimiter(',');
  c_bands->add_option("--samples", bands.samples, "Samples per path segment");
  c_bands->add_option("--bands", bands.n_bands, "Number of bands to report");

  DesignOptions design;
  std::string design_kind = "pi2";
  auto* c_design = app.add_subcommand("design", "Optimize a shortcut pulse sequence");
  add_common(c_design, common);
  c_design->add_option("--kind", design_kind, "pi2, pi or load")->check(CLI::IsMember({"pi2", "pi", "load"}));
  c_design->add_option("--steps", design.steps, "Number of on/off steps");
  c_design->add_flag("--variable-amplitude", design.variable_amplitude, "Optimize per-step lattice depths");
  c_design->add_option("--depth-min", design.depth_min_er, "Lower depth bound (Er)");
  c_design->add_option("--depth-max", design.depth_max_er, "Upper depth bound (Er)");
  c_design->add_option("--threshold", design.threshold, "Fidelity required for exit code 0");

  EvalOptions eval;
  std::string eval_kind;
  auto* c_eval = app.add_subcommand("eval", "Fidelity report for a sequence file");
  add_common(c_eval, common);
  c_eval->add_option("sequence", eval.sequence_path, "Sequence file")->required();
  c_eval->add_option("--kind", eval_kind, "pi2, pi or load (default: from the file)");

  FringeOptions fringe;
  auto add_fringe = [&](CLI::App* sub, bool echo) {
    add_common(sub, common);
    sub->add_option("--pi2", fringe.pi2, "pi/2 sequence file or 'ideal'");
    if (echo) {
      sub->add_option("--pi", fringe.pi, "pi sequence file or 'ideal'");
      sub->add_option("--n-echo", fringe.n_echo, "Number of pi pulses");
    }
    sub->add_option("--t-max-us", fringe.t_max_us, "Longest hold time (us)");
    sub->add_option("--dt-us", fringe.dt_us, "Hold-time step (us)");
    sub->add_option("--period-us", fringe.period_us, "Contrast window (default h / gap at Gamma)");
    sub->add_flag("--single-q", fringe.single_q, "Ignore the ensemble and simulate q = 0 only");
  };
  auto* c_ramsey = app.add_subcommand("ramsey", "Ramsey fringe, contrast and coherence time");
  add_fringe(c_ramsey, false);
  auto* c_echo = app.add_subcommand("echo", "Echo-Ramsey fringe, contrast and coherence time");
  add_fringe(c_echo, true);

  CoherenceOptions coherence;
  auto* c_coh = app.add_subcommand("coherence", "Contrast and coherence time of an existing fringe CSV");
  add_common(c_coh, common);
  c_coh->add_option("fringe", coherence.fringe_path, "Fringe CSV (t_us,p_d)")->required();
  c_coh->add_option("--period-us", coherence.period_us, "Contrast window (default h / gap at Gamma)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidation;
  }

  return guarded(
      [&]() -> int {
        if (c_bands->parsed()) return cmd_bands(common, bands, std::cout);
        if (c_design->parsed()) {
          design.kind = kind_from(design_kind);
          return cmd_design(common, design, std::cout);
        }
        if (c_eval->parsed()) {
          if (!eval_kind.empty()) eval.kind = kind_from(eval_kind);
          return cmd_eval(common, eval, std::cout);
        }
        if (c_ramsey->parsed()) return cmd_ramsey(common, fringe, std::cout);
        if (c_echo->parsed()) return cmd_echo(common, fringe, std::cout);
        return cmd_coherence(common, coherence, std::cout);
      },
      std::cerr);
}
