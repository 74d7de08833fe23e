#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "odefilter/calibration.hpp"
#include "odefilter/diagnostics.hpp"
#include "odefilter/errors.hpp"
#include "odefilter/gaussian_filter.hpp"
#include "odefilter/particle_filter.hpp"
#include "odefilter/prior.hpp"
#include "odefilter/problems.hpp"

namespace odefilter::harness {

enum class Command { kSolve, kBenchmark, kPf, kStability };

inline const char* to_string(Command c) {
  switch (c) {
    case Command::kSolve: return "solve";
    case Command::kBenchmark: return "benchmark";
    case Command::kPf: return "pf";
    case Command::kStability: return "stability";
  }
  return "unknown";
}

/// Everything a command needs. Empty lists and unset optionals mean "use the
/// defaults for this problem and command" (see resolve()).
struct ExperimentConfig {
  std::string problem;
  std::vector<std::string> variants;
  bool variants_given = false;  // set by the front end when --variant was passed
  std::vector<int> qs;
  std::vector<double> hs;
  std::optional<double> t_end;
  std::optional<double> r;     // fixed R = r·I
  std::vector<double> kappas;  // R = κ h^{2q+1} I
  std::size_t particles = 1000;
  std::uint64_t seed = 0;
  std::size_t reps = 1;
  std::optional<std::string> init;
  bool calibrate = true;
  bool timing = true;
  std::size_t jobs = 0;  // 0: hardware concurrency
  std::vector<double> lambda1s;
  std::vector<double> lambda2s;
  std::vector<double> kde_times;
};

// ---------------------------------------------------------------------------
// CSV

inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::string to_csv() const {
    std::string out;
    const auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += csv_field(cells[i]);
      }
      out += '\n';
    };
    line(header);
    for (const auto& row : rows) line(row);
    return out;
  }
};

struct CommandOutput {
  Table table;
  std::optional<Table> kde;  // pf only
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Defaults and validation

struct ProblemDefaults {
  std::vector<std::string> variants;
  std::vector<int> qs;
  InitMode init;
};

inline ProblemDefaults defaults_for(const std::string& problem) {
  if (problem == "linear") return {{"kf", "sch", "ker"}, {1, 2, 3, 4, 5, 6}, InitMode::kExactAffine};
  if (problem == "logistic") return {{"sch", "ekf", "ker", "ukf"}, {1, 2, 3, 4}, InitMode::kExact3};
  if (problem == "fitzhugh") return {{"sch", "ekf"}, {1, 2, 3, 4}, InitMode::kExact3};
  if (problem == "bernoulli") return {{"ekf", "ukf"}, {1, 2}, InitMode::kExact2};
  throw Error(ErrorKind::kInvalidArgument, "unknown problem '" + problem + "'");
}

/// 10 step sizes uniformly spaced on [1e-3, 1e-1].
inline std::vector<double> default_step_sizes() {
  std::vector<double> hs;
  for (int k = 0; k < 10; ++k) hs.push_back(1e-3 + k * (1e-1 - 1e-3) / 9.0);
  return hs;
}

inline bool is_particle_variant(const std::string& v) { return v == "pf1" || v == "pf2"; }

inline std::string canonical_variant(const std::string& v) {
  if (is_particle_variant(v)) return v;
  return to_string(parse_variant(v));
}

/// Fills defaults for `command` and validates. Throws Error with
/// kInvalidArgument or kConfiguration on bad input.
inline ExperimentConfig resolve(ExperimentConfig c, Command command) {
  const auto invalid = [](const std::string& what) { return Error(ErrorKind::kInvalidArgument, what); };
  if (c.problem.empty()) {
    c.problem = command == Command::kPf ? "bernoulli" : command == Command::kStability ? "linear" : "";
  }
  if (c.problem.empty()) throw invalid("--problem is required");
  const ProblemDefaults defaults = defaults_for(c.problem);

  std::erase(c.variants, std::string());
  if (c.variants_given && c.variants.empty()) throw invalid("empty variant list");
  if (c.variants.empty()) {
    if (command == Command::kPf) {
      c.variants = {"pf1", "pf2"};
    } else if (command == Command::kSolve) {
      c.variants = {defaults.variants.front() == "sch" ? defaults.variants.at(1) : defaults.variants.front()};
    } else {
      c.variants = defaults.variants;
    }
  }
  for (auto& v : c.variants) {
    if (is_particle_variant(v)) {
      if (command != Command::kPf) throw invalid("variant '" + v + "' is only available for pf");
      continue;
    }
    v = canonical_variant(v);  // throws on unknown names
  }
  if (command == Command::kSolve && c.variants.size() != 1) throw invalid("solve takes exactly one variant");

  if (c.qs.empty()) {
    if (command == Command::kSolve) c.qs = {2};
    else if (command == Command::kPf) c.qs = {1};
    else if (command == Command::kStability) c.qs = {1, 2, 3, 4};
    else c.qs = defaults.qs;
  }
  for (int q : c.qs) {
    if (q < 1) throw invalid("q must be at least 1");
  }
  if (c.hs.empty()) {
    if (command == Command::kSolve) c.hs = {0.01};
    else if (command == Command::kPf) c.hs = {0.1};
    else if (command == Command::kStability) c.hs = {0.01, 0.1, 1.0};
    else c.hs = default_step_sizes();
  }
  for (double h : c.hs) {
    if (!(h > 0.0) || !std::isfinite(h)) throw invalid("step size must be positive and finite");
  }
  if (command == Command::kSolve && (c.qs.size() != 1 || c.hs.size() != 1)) {
    throw invalid("solve takes a single q and a single h");
  }
  if (c.t_end && !std::isfinite(*c.t_end)) throw invalid("--t-end must be finite");
  if (c.r && (!(*c.r >= 0.0) || !std::isfinite(*c.r))) throw invalid("--r must be non-negative");
  for (double k : c.kappas) {
    if (!(k > 0.0) || !std::isfinite(k)) throw invalid("kappa must be positive");
  }
  if (command == Command::kPf) {
    if (c.r) throw invalid("pf uses the kappa-scaled R; --r is not accepted");
    if (c.kappas.empty()) c.kappas = {1.0};
    if (c.particles < 2) throw invalid("at least two particles are required");
    if (c.kde_times.empty()) c.kde_times = {1.0, 3.0, 5.0};
  } else if (command != Command::kStability) {
    if (c.r && !c.kappas.empty()) throw invalid("--r and --kappa are mutually exclusive");
    if (c.kappas.size() > 1) throw invalid("only one kappa per Gaussian run");
  }
  if (c.reps < 1) throw invalid("--reps must be at least 1");
  if (c.init) parse_init_mode(*c.init);

  if (command == Command::kStability) {
    if (c.lambda1s.empty()) c.lambda1s = {-2, -1, 0, 1, 2};
    if (c.lambda2s.empty()) c.lambda2s = {-2, -1, 0, 1, 2};
  } else {
    OdeProblem p = make_problem(c.problem);
    const double t_end = c.t_end.value_or(p.t_end);
    if (!(t_end > p.t0)) throw invalid("--t-end must exceed the initial time");
    for (double h : c.hs) {
      if (h > t_end - p.t0) throw invalid("step size exceeds the integration span");
    }
    for (const auto& v : c.variants) {
      if (v == "kf" && !p.affine) {
        throw Error(ErrorKind::kConfiguration, "variant kf needs an affine problem; '" + c.problem + "' is not");
      }
    }
  }
  return c;
}

inline OdeProblem problem_for(const ExperimentConfig& c) {
  OdeProblem p = make_problem(c.problem);
  if (c.t_end) p.t_end = *c.t_end;
  return p;
}

inline InitMode init_for(const ExperimentConfig& c) {
  return c.init ? parse_init_mode(*c.init) : defaults_for(c.problem).init;
}

/// Measurement noise for a Gaussian run; empty means R = 0.
inline Matrix measurement_noise(const ExperimentConfig& c, int q, double h, Index d) {
  if (c.r) return *c.r * Matrix::Identity(d, d);
  if (!c.kappas.empty()) {
    return c.kappas.front() * std::pow(h, 2.0 * q + 1.0) * Matrix::Identity(d, d);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Worker pool: runs fn(i) for i in [0, n); results are stored by index by the
// caller, so output order does not depend on scheduling. The first exception
// is rethrown after all workers stop.

template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Gaussian runs

struct GaussianRun {
  FilterTrace trace;
  double sigma2_hat = std::numeric_limits<double>::quiet_NaN();
  double runtime_ns = 0.0;
};

/// One filter run at unit σ², followed by maximum-likelihood calibration
/// when R = 0 and `calibrate` is set.
inline GaussianRun run_gaussian(const OdeProblem& problem, const std::string& variant, int q,
                                double h, InitMode init, const Matrix& r, bool calibrate) {
  const IwpSpec spec = IwpSpec::isotropic(q, problem.d);
  UpdateConfig config;
  config.variant = parse_variant(variant);
  config.R = r;
  GaussianRun out;
  const auto start = std::chrono::steady_clock::now();
  out.trace = solve(problem, spec, config, h, init);
  if (calibrate && out.trace.zero_measurement_noise()) {
    const CalibrationResult cal = config.variant == Variant::kAffineExact
                                      ? calibrate_sigma2(out.trace)
                                      : quasi_ml_calibrate(out.trace);
    out.sigma2_hat = cal.sigma2_hat;
    out.trace = rescale(out.trace, cal.sigma2_hat);
  }
  out.runtime_ns = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline std::string run_label(const std::string& variant, int q, double h) {
  return "variant " + variant + " (q=" + std::to_string(q) + ", h=" + format_number(h) + ")";
}

// ---------------------------------------------------------------------------
// Commands

/// Per-step filtered solution: t, mean_i, std_i, residual_norm, chi2. The
/// first row is the initial belief at t0 (no measurement, residual 0).
inline CommandOutput cmd_solve(const ExperimentConfig& raw) {
  const ExperimentConfig c = resolve(raw, Command::kSolve);
  const OdeProblem problem = problem_for(c);
  const std::string& variant = c.variants.front();
  const int q = c.qs.front();
  const double h = c.hs.front();
  const Index d = problem.d;

  GaussianRun run;
  try {
    run = run_gaussian(problem, variant, q, h, init_for(c), measurement_noise(c, q, h, d), c.calibrate);
  } catch (const Error& e) {
    throw Error(e.kind(), run_label(variant, q, h) + ": " + e.detail(), e.step());
  }

  CommandOutput out;
  out.table.header.push_back("t");
  for (Index i = 1; i <= d; ++i) out.table.header.push_back("mean_" + std::to_string(i));
  for (Index i = 1; i <= d; ++i) out.table.header.push_back("std_" + std::to_string(i));
  out.table.header.push_back("residual_norm");
  out.table.header.push_back("chi2");

  bool chi2_failed = false;
  const auto emit = [&](double t, const GaussBelief& b, double residual_norm) {
    std::vector<std::string> row{format_number(t)};
    const Vector mean = b.mean.segment(0, d);
    const Matrix cov = b.cov.block(0, 0, d, d);
    for (Index i = 0; i < d; ++i) row.push_back(format_number(mean(i)));
    for (Index i = 0; i < d; ++i) row.push_back(format_number(std::sqrt(std::max(cov(i, i), 0.0))));
    row.push_back(format_number(residual_norm));
    double chi2 = std::numeric_limits<double>::quiet_NaN();
    if (problem.has_reference()) {
      try {
        chi2 = chi2_statistic(problem.reference(t) - mean, cov);
      } catch (const Error&) {
        chi2_failed = true;
      }
    }
    row.push_back(format_number(chi2));
    out.table.rows.push_back(std::move(row));
  };
  emit(run.trace.t0, run.trace.initial, 0.0);
  for (const auto& step : run.trace.steps) emit(step.t, step.filtered, step.residual.norm());
  if (chi2_failed) out.warnings.push_back("chi2 is nan where the solution covariance was singular");
  for (const auto& note : run.trace.notes) out.warnings.push_back(note);
  return out;
}

/// One row per (variant, q, h) with RMSE, average χ², σ̂² and wall-clock time
/// (median over --reps). A run that throws or produces non-finite output
/// records rmse = inf.
inline CommandOutput cmd_benchmark(const ExperimentConfig& raw) {
  const ExperimentConfig c = resolve(raw, Command::kBenchmark);
  const OdeProblem problem = problem_for(c);
  const InitMode init = init_for(c);
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  struct Job {
    std::string variant;
    int q;
    double h;
  };
  std::vector<Job> jobs;
  for (const auto& v : c.variants) {
    for (int q : c.qs) {
      for (double h : c.hs) jobs.push_back({v, q, h});
    }
  }
  struct Result {
    double rmse = std::numeric_limits<double>::infinity();
    double chi2_bar = kNaN;
    double sigma2_hat = kNaN;
    double runtime_ns = kNaN;
    std::string warning;
  };
  std::vector<Result> results(jobs.size());

  parallel_for(jobs.size(), c.jobs, [&](std::size_t i) {
    const Job& job = jobs[i];
    Result& res = results[i];
    const Matrix r = measurement_noise(c, job.q, job.h, problem.d);
    try {
      std::vector<double> times;
      GaussianRun run;
      for (std::size_t rep = 0; rep < c.reps; ++rep) {
        run = run_gaussian(problem, job.variant, job.q, job.h, init, r, c.calibrate);
        times.push_back(run.runtime_ns);
      }
      std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
      res.runtime_ns = c.timing ? times[times.size() / 2] : kNaN;
      res.sigma2_hat = run.sigma2_hat;
      try {
        const RunMetrics m = compute_metrics(run.trace, problem.reference);
        res.rmse = m.rmse;
        res.chi2_bar = m.chi2_bar;
      } catch (const Error& e) {
        double sq = 0.0;
        for (const auto& step : run.trace.steps) {
          sq += (problem.reference(step.t) - step.filtered.mean.segment(0, problem.d)).squaredNorm();
        }
        res.rmse = std::sqrt(sq / static_cast<double>(run.trace.steps.size()));
        res.warning = run_label(job.variant, job.q, job.h) + ": chi2 unavailable: " + e.what();
      }
      if (!std::isfinite(res.rmse)) {
        res.rmse = std::numeric_limits<double>::infinity();
        if (res.warning.empty()) res.warning = run_label(job.variant, job.q, job.h) + ": diverged";
      }
    } catch (const Error& e) {
      res = Result{};
      res.warning = run_label(job.variant, job.q, job.h) + ": diverged: " + e.what();
    }
  });

  CommandOutput out;
  out.table.header = {"variant", "q", "h", "rmse", "chi2_bar", "sigma2_hat", "runtime_ns"};
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Result& res = results[i];
    out.table.rows.push_back({jobs[i].variant, std::to_string(jobs[i].q), format_number(jobs[i].h),
                              format_number(res.rmse), format_number(res.chi2_bar),
                              format_number(res.sigma2_hat), format_number(res.runtime_ns)});
    if (!res.warning.empty()) out.warnings.push_back(res.warning);
  }
  return out;
}

/// Mean estimate of y(T) per (variant, h, κ, q, seed) and, for the particle
/// variants, weighted KDEs of the first solution component at the requested
/// times. Rep k uses seed + k; every row with the same seed shares it.
inline CommandOutput cmd_pf(const ExperimentConfig& raw) {
  const ExperimentConfig c = resolve(raw, Command::kPf);
  const OdeProblem problem = problem_for(c);
  const InitMode init = init_for(c);
  const Index d = problem.d;
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  struct Job {
    std::string variant;
    double h;
    double kappa;
    int q;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& v : c.variants) {
    for (double h : c.hs) {
      for (double kappa : c.kappas) {
        for (int q : c.qs) {
          for (std::size_t rep = 0; rep < c.reps; ++rep) jobs.push_back({v, h, kappa, q, c.seed + rep});
        }
      }
    }
  }
  struct Result {
    Vector mean;
    std::vector<std::vector<std::string>> kde_rows;
    std::vector<std::string> warnings;
  };
  std::vector<Result> results(jobs.size());

  parallel_for(jobs.size(), c.jobs, [&](std::size_t i) {
    const Job& job = jobs[i];
    Result& res = results[i];
    res.mean = Vector::Constant(d, kNaN);
    const IwpSpec spec = IwpSpec::isotropic(job.q, d);
    const std::string label = run_label(job.variant, job.q, job.h) + " kappa=" + format_number(job.kappa) +
                              " seed=" + std::to_string(job.seed);
    try {
      const DiscretePrior prior = discretize_iwp(spec, job.h);
      const GaussBelief initial = initial_belief(spec, problem, init);
      const std::size_t steps = steps_for(problem, job.h);
      if (!is_particle_variant(job.variant)) {
        UpdateConfig config;
        config.variant = parse_variant(job.variant);
        config.R = job.kappa * std::pow(job.h, 2.0 * job.q + 1.0) * Matrix::Identity(d, d);
        const FilterTrace trace = run_filter(problem, prior, config, steps, initial);
        res.mean = trace.steps.back().filtered.mean.segment(0, d);
        return;
      }
      ParticleFilterConfig config;
      config.kind = parse_proposal(job.variant);
      config.particles = c.particles;
      config.kappa = job.kappa;
      config.snapshot_times = c.kde_times;
      Rng rng(job.seed);
      const ParticleRun run = run_pf(problem, prior, initial, config, steps, rng);
      res.mean = run.snapshots.back().ensemble.weighted_mean().segment(0, d);
      for (double tau : c.kde_times) {
        if (tau < problem.t0 || tau > problem.t_end + 1e-9) continue;
        const ParticleSnapshot& snap = run.at_time(tau);
        const ParticleEnsemble& e = snap.ensemble;
        std::vector<double> xs(e.particles.col(0).data(), e.particles.col(0).data() + e.size());
        std::vector<double> ws(e.weights.data(), e.weights.data() + e.size());
        try {
          const DensityGrid grid = kde_estimate(xs, ws);
          for (std::size_t k = 0; k < grid.x.size(); ++k) {
            res.kde_rows.push_back({job.variant, format_number(job.h), format_number(job.kappa),
                                    std::to_string(job.q), std::to_string(job.seed), format_number(snap.t),
                                    format_number(grid.x[k]), format_number(grid.density[k])});
          }
        } catch (const Error& e) {
          res.warnings.push_back(label + ": no KDE at t=" + format_number(snap.t) + ": " + e.what());
        }
      }
    } catch (const Error& e) {
      res.mean = Vector::Constant(d, kNaN);
      res.kde_rows.clear();
      res.warnings.push_back(label + ": " + e.what());
    }
  });

  CommandOutput out;
  out.table.header = {"variant", "h", "kappa", "q", "seed"};
  if (d == 1) {
    out.table.header.push_back("mean_estimate");
  } else {
    for (Index i = 1; i <= d; ++i) out.table.header.push_back("mean_estimate_" + std::to_string(i));
  }
  Table kde;
  kde.header = {"variant", "h", "kappa", "q", "seed", "t", "y", "density"};
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& job = jobs[i];
    std::vector<std::string> row{job.variant, format_number(job.h), format_number(job.kappa),
                                 std::to_string(job.q), std::to_string(job.seed)};
    for (Index k = 0; k < d; ++k) row.push_back(format_number(results[i].mean(k)));
    out.table.rows.push_back(std::move(row));
    for (auto& r : results[i].kde_rows) kde.rows.push_back(std::move(r));
    for (auto& w : results[i].warnings) out.warnings.push_back(std::move(w));
  }
  out.kde = std::move(kde);
  return out;
}

/// Riccati-limit spectral radius for y' = Λ_test(λ₁, λ₂) y over the grid.
/// The origin is skipped (Λ is singular there); non-convergence is reported
/// as certified = unknown.
inline CommandOutput cmd_stability(const ExperimentConfig& raw) {
  const ExperimentConfig c = resolve(raw, Command::kStability);
  struct Job {
    double l1, l2;
    int q;
    double h;
  };
  std::vector<Job> jobs;
  CommandOutput out;
  for (double l1 : c.lambda1s) {
    for (double l2 : c.lambda2s) {
      if (l1 == 0.0 && l2 == 0.0) {
        out.warnings.push_back("excluded (lambda1, lambda2) = (0, 0): the test matrix is singular");
        continue;
      }
      for (int q : c.qs) {
        for (double h : c.hs) jobs.push_back({l1, l2, q, h});
      }
    }
  }
  struct Result {
    double radius = std::numeric_limits<double>::quiet_NaN();
    std::string certified = "unknown";
    std::string warning;
  };
  std::vector<Result> results(jobs.size());
  parallel_for(jobs.size(), c.jobs, [&](std::size_t i) {
    const Job& job = jobs[i];
    try {
      const StabilityCertificate cert =
          certify_stability(test_matrix(job.l1, job.l2), IwpSpec::isotropic(job.q, 2), job.h);
      results[i].radius = cert.spectral_radius;
      results[i].certified = cert.certified ? "true" : "false";
    } catch (const Error& e) {
      results[i].warning = "lambda=(" + format_number(job.l1) + ", " + format_number(job.l2) +
                           ") q=" + std::to_string(job.q) + " h=" + format_number(job.h) + ": " + e.what();
    }
  });
  out.table.header = {"lambda1", "lambda2", "q", "h", "spectral_radius", "certified"};
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& job = jobs[i];
    out.table.rows.push_back({format_number(job.l1), format_number(job.l2), std::to_string(job.q),
                              format_number(job.h), format_number(results[i].radius), results[i].certified});
    if (!results[i].warning.empty()) out.warnings.push_back(results[i].warning);
  }
  return out;
}

inline CommandOutput run_command(Command command, const ExperimentConfig& config) {
  switch (command) {
    case Command::kSolve: return cmd_solve(config);
    case Command::kBenchmark: return cmd_benchmark(config);
    case Command::kPf: return cmd_pf(config);
    case Command::kStability: return cmd_stability(config);
  }
  throw Error(ErrorKind::kConfiguration, "unknown command");
}

}  // namespace odefilter::harness
