// odefilter: command-line front end for the filtering ODE solvers.
//
//   odefilter solve     --problem logistic --variant ekf --q 2 --h 0.01
//   odefilter benchmark --problem linear --q 2
//   odefilter pf        --problem bernoulli --particles 1000 --seed 3
//   odefilter stability --q 1,2 --h 0.1
//
// Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>

#include "odefilter/harness.hpp"

namespace {

using odefilter::Error;
namespace harness = odefilter::harness;

bool write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
  return static_cast<bool>(out);
}

std::string kde_path_for(const std::string& out) {
  const auto dot = out.rfind('.');
  const auto slash = out.find_last_of("/\\");
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return out + "_kde.csv";
  return out.substr(0, dot) + "_kde" + out.substr(dot);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic ODE solvers as Bayesian filters"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags take precedence");
  app.require_subcommand(1, 1);
  app.fallthrough();

  harness::ExperimentConfig cfg;
  std::string out_path;
  std::string kde_out;
  double t_end = 0.0;
  double r = 0.0;
  std::string init;
  bool no_calibrate = false;
  bool no_timing = false;

  app.add_option("--problem", cfg.problem, "linear | logistic | fitzhugh | bernoulli");
  auto* variant_opt = app.add_option("--variant", cfg.variants, "kf, ek0 (sch), ekf, ukf, ker, pf1, pf2")
                          ->delimiter(',');
  app.add_option("--q", cfg.qs, "IWP order(s)")->delimiter(',');
  app.add_option("--h", cfg.hs, "step size(s)")->delimiter(',');
  auto* t_end_opt = app.add_option("--t-end", t_end, "end of the integration interval");
  auto* r_opt = app.add_option("--r", r, "fixed measurement noise R = r I (default 0)");
  app.add_option("--kappa", cfg.kappas, "R = kappa h^(2q+1) I")->delimiter(',');
  app.add_option("--particles", cfg.particles, "particle count J")->capture_default_str();
  app.add_option("--seed", cfg.seed, "base RNG seed")->capture_default_str();
  app.add_option("--reps", cfg.reps, "repetitions (pf: seeds seed..seed+reps-1; benchmark: timing)")
      ->capture_default_str();
  auto* init_opt = app.add_option("--init", init, "exact-2 | exact-3 | exact-affine");
  app.add_option("--jobs", cfg.jobs, "worker threads (0: all cores)")->capture_default_str();
  app.add_option("--lambda1", cfg.lambda1s, "stability grid, real parts")->delimiter(',');
  app.add_option("--lambda2", cfg.lambda2s, "stability grid, imaginary parts")->delimiter(',');
  app.add_option("--kde-times", cfg.kde_times, "pf KDE times")->delimiter(',');
  app.add_option("--out", out_path, "output CSV (default: standard output)");
  app.add_option("--kde-out", kde_out, "pf KDE CSV (default: <out>_kde.csv when --out is set)");
  app.add_flag("--no-calibrate", no_calibrate, "keep sigma^2 = 1 instead of the ML estimate");
  app.add_flag("--no-timing", no_timing, "write nan in runtime_ns so benchmark output is reproducible");

  auto* solve = app.add_subcommand("solve", "single filter run; per-step CSV");
  auto* benchmark = app.add_subcommand("benchmark", "RMSE / chi2 sweep over variants, q and h");
  auto* pf = app.add_subcommand("pf", "particle-filter mean estimates and KDEs");
  auto* stability = app.add_subcommand("stability", "Riccati-limit spectral radius sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (t_end_opt->count()) cfg.t_end = t_end;
  if (r_opt->count()) cfg.r = r;
  if (init_opt->count()) cfg.init = init;
  cfg.variants_given = variant_opt->count() > 0;
  cfg.calibrate = !no_calibrate;
  cfg.timing = !no_timing;

  harness::Command command = harness::Command::kSolve;
  if (benchmark->parsed()) command = harness::Command::kBenchmark;
  else if (pf->parsed()) command = harness::Command::kPf;
  else if (stability->parsed()) command = harness::Command::kStability;
  else if (!solve->parsed()) return 2;

  try {
    harness::resolve(cfg, command);
  } catch (const Error& e) {
    std::cerr << "odefilter " << harness::to_string(command) << ": " << e.what() << "\n"
              << "Run with --help for usage.\n";
    return 2;
  }

  harness::CommandOutput result;
  try {
    result = harness::run_command(command, cfg);
  } catch (const Error& e) {
    std::cerr << "odefilter " << harness::to_string(command) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "odefilter " << harness::to_string(command) << ": " << e.what() << "\n";
    return 1;
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

  const std::string body = result.table.to_csv();
  if (out_path.empty()) {
    std::cout << body;
  } else if (!write_file(out_path, body)) {
    std::cerr << "odefilter: cannot write " << out_path << "\n";
    return 1;
  }
  if (result.kde) {
    if (kde_out.empty() && !out_path.empty()) kde_out = kde_path_for(out_path);
    if (!kde_out.empty() && !write_file(kde_out, result.kde->to_csv())) {
      std::cerr << "odefilter: cannot write " << kde_out << "\n";
      return 1;
    }
  }
  return 0;
}
