#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "odefilter/belief.hpp"
#include "odefilter/errors.hpp"
#include "odefilter/linalg.hpp"
#include "odefilter/prior.hpp"
#include "odefilter/problems.hpp"

namespace odefilter {

/// Random stream threaded through every stochastic operation.
using Rng = std::mt19937_64;

/// J weighted particles; rows are states.
struct ParticleEnsemble {
  Matrix particles;
  Vector weights;

  [[nodiscard]] Index size() const { return particles.rows(); }
  [[nodiscard]] double ess() const { return 1.0 / weights.squaredNorm(); }
  [[nodiscard]] Vector weighted_mean() const { return particles.transpose() * weights; }
};

enum class ProposalKind { kEK0, kEKF };

inline const char* to_string(ProposalKind k) { return k == ProposalKind::kEK0 ? "pf1" : "pf2"; }

inline ProposalKind parse_proposal(std::string_view s) {
  if (s == "pf1" || s == "ek0") return ProposalKind::kEK0;
  if (s == "pf2" || s == "ekf") return ProposalKind::kEKF;
  throw Error(ErrorKind::kInvalidArgument, "unknown particle proposal '" + std::string(s) + "'");
}

/// Locally linearized Gaussian approximation of the optimal importance
/// density for one transition, with Q(h) playing the role of Σᴾ.
struct ProposalDistribution {
  Vector mean;
  Matrix cov;
};

inline ProposalDistribution proposal_distribution(const Vector& x_prev, const DiscretePrior& prior,
                                                  const OdeProblem& problem, double t,
                                                  ProposalKind kind, const Matrix& r) {
  const Index d = prior.d();
  const Vector x_pred = prior.A * x_prev + prior.xi;
  const Vector y = x_pred.segment(0, d);
  const Vector zhat = x_pred.segment(d, d) - problem.f(y, t);
  Matrix h = prior.Cdot;
  if (kind == ProposalKind::kEKF) {
    if (!problem.has_jacobian()) {
      throw Error(ErrorKind::kConfiguration, "EKF proposal needs the Jacobian of '" + problem.name + "'");
    }
    h.block(0, 0, d, d) -= problem.jacobian(y, t);
  }
  const Matrix cross = prior.Q * h.transpose();
  const Matrix s = linalg::symmetrize(h * cross + r);
  const auto llt = linalg::innovation_cholesky(s);
  const Matrix gain = llt.solve(cross.transpose()).transpose();
  const Index m = prior.state_dim();
  const Matrix ikh = Matrix::Identity(m, m) - gain * h;
  return {x_pred - gain * zhat,
          linalg::symmetrize(ikh * prior.Q * ikh.transpose() + gain * r * gain.transpose())};
}

struct ProposalSample {
  Vector state;
  double log_density = 0.0;
};

/// Draws one state from the proposal and returns its log-density under the
/// (factored) proposal covariance.
inline ProposalSample propose(const Vector& x_prev, const DiscretePrior& prior,
                              const OdeProblem& problem, double t, ProposalKind kind,
                              const Matrix& r, Rng& rng) {
  const ProposalDistribution dist = proposal_distribution(x_prev, prior, problem, t, kind, r);
  const linalg::CholeskyFactor factor = linalg::jittered_cholesky(dist.cov);
  std::normal_distribution<double> normal;
  Vector white(dist.mean.size());
  for (Index i = 0; i < white.size(); ++i) white(i) = normal(rng);
  const Vector sample = dist.mean + factor.lower * white;
  const double log_det = 2.0 * factor.lower.diagonal().array().log().sum();
  const double log_density =
      -0.5 * (white.squaredNorm() + log_det +
              static_cast<double>(white.size()) * std::log(2.0 * std::numbers::pi));
  return {sample, log_density};
}

/// Transition density N(x; A x_prev + ξ, Q). Uses a Cholesky factor of Q when
/// Q is positive definite and otherwise a density restricted to Q's range.
class TransitionDensity {
 public:
  explicit TransitionDensity(const DiscretePrior& prior) : prior_(&prior) {
    Eigen::LLT<Matrix> llt(prior.Q);
    if (llt.info() == Eigen::Success && Matrix(llt.matrixL()).diagonal().minCoeff() > 0.0) {
      lower_ = llt.matrixL();
      return;
    }
    restricted_ = true;
    Eigen::SelfAdjointEigenSolver<Matrix> es(prior.Q);
    const double tol = 1e-12 * es.eigenvalues().cwiseAbs().maxCoeff();
    std::vector<Index> keep;
    for (Index i = 0; i < es.eigenvalues().size(); ++i) {
      if (es.eigenvalues()(i) > tol) keep.push_back(i);
    }
    basis_.resize(prior.Q.rows(), static_cast<Index>(keep.size()));
    variances_.resize(static_cast<Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      basis_.col(static_cast<Index>(k)) = es.eigenvectors().col(keep[k]);
      variances_(static_cast<Index>(k)) = es.eigenvalues()(keep[k]);
    }
  }

  [[nodiscard]] bool range_restricted() const { return restricted_; }

  [[nodiscard]] double log_density(const Vector& x_new, const Vector& x_prev) const {
    const Vector mean = prior_->A * x_prev + prior_->xi;
    if (!restricted_) return linalg::gaussian_logpdf_chol(x_new, mean, lower_);
    const Vector proj = basis_.transpose() * (x_new - mean);
    const double quad = (proj.array().square() / variances_.array()).sum();
    const double log_det = variances_.array().log().sum();
    return -0.5 * (quad + log_det +
                   static_cast<double>(variances_.size()) * std::log(2.0 * std::numbers::pi));
  }

 private:
  const DiscretePrior* prior_;
  bool restricted_ = false;
  Matrix lower_;
  Matrix basis_;
  Vector variances_;
};

/// log N(0; Ċx − f(Cx, t), R).
inline double measurement_log_likelihood(const Vector& x, const StateLayout& layout,
                                         const OdeProblem& problem, double t, const Matrix& r) {
  const Index d = layout.d;
  const Vector z = x.segment(d, d) - problem.f(x.segment(0, d), t);
  return linalg::gaussian_logpdf(z, Vector::Zero(d), r);
}

/// log ρ = log p(z=0 | x_new) + log p(x_new | x_prev) − log g(x_new | x_prev).
inline double log_weight_increment(const Vector& x_new, const Vector& x_prev,
                                   double proposal_log_density, const TransitionDensity& transition,
                                   const StateLayout& layout, const OdeProblem& problem, double t,
                                   const Matrix& r) {
  return measurement_log_likelihood(x_new, layout, problem, t, r) +
         transition.log_density(x_new, x_prev) - proposal_log_density;
}

inline double log_weight_increment(const Vector& x_new, const Vector& x_prev,
                                   double proposal_log_density, const DiscretePrior& prior,
                                   const OdeProblem& problem, double t, const Matrix& r) {
  const TransitionDensity transition(prior);
  return log_weight_increment(x_new, x_prev, proposal_log_density, transition, prior.layout, problem,
                              t, r);
}

/// Systematic resampling to uniform weights when ESS < threshold·J.
inline ParticleEnsemble resample(const ParticleEnsemble& ensemble, double threshold, Rng& rng) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "resampling threshold must lie in (0, 1]");
  }
  const Index count = ensemble.size();
  const auto j = static_cast<double>(count);
  if (ensemble.ess() >= threshold * j) return ensemble;

  std::uniform_real_distribution<double> uniform(0.0, 1.0 / j);
  double u = uniform(rng);
  ParticleEnsemble out{Matrix(count, ensemble.particles.cols()), Vector::Constant(count, 1.0 / j)};
  double cumulative = ensemble.weights(0);
  Index src = 0;
  for (Index k = 0; k < count; ++k) {
    while (u > cumulative && src < count - 1) {
      ++src;
      cumulative += ensemble.weights(src);
    }
    out.particles.row(k) = ensemble.particles.row(src);
    u += 1.0 / j;
  }
  return out;
}

namespace detail {

/// Normalizes log-weights by max subtraction; returns false when every
/// weight is zero or not finite.
inline bool normalize_log_weights(const Vector& log_w, Vector& weights) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < log_w.size(); ++i) {
    if (std::isfinite(log_w(i))) max_log = std::max(max_log, log_w(i));
  }
  if (!std::isfinite(max_log)) return false;
  weights.resize(log_w.size());
  for (Index i = 0; i < log_w.size(); ++i) {
    weights(i) = std::isfinite(log_w(i)) ? std::exp(log_w(i) - max_log) : 0.0;
  }
  const double total = weights.sum();
  if (!(total > 0.0) || !std::isfinite(total)) return false;
  weights /= total;
  return true;
}

}  // namespace detail

struct ParticleFilterConfig {
  ProposalKind kind = ProposalKind::kEKF;
  std::size_t particles = 1000;
  double kappa = 1.0;
  double resample_threshold = 0.5;
  std::size_t snapshot_stride = 1;  // keep every k-th step (the last step is always kept)
  std::vector<double> snapshot_times;  // if set, keep only the steps nearest these times
};

struct ParticleSnapshot {
  std::size_t step = 0;
  double t = 0.0;
  ParticleEnsemble ensemble;  // before resampling, so the weights are informative
};

struct ParticleRun {
  double R = 0.0;
  std::vector<ParticleSnapshot> snapshots;
  std::vector<double> ess;
  std::vector<std::string> notes;

  [[nodiscard]] const ParticleSnapshot& at_time(double t) const {
    const auto it = std::min_element(snapshots.begin(), snapshots.end(), [t](const auto& a, const auto& b) {
      return std::abs(a.t - t) < std::abs(b.t - t);
    });
    return *it;
  }
};

/// Samples N(μ, Σ) for a positive semi-definite Σ.
inline Vector sample_gaussian(const GaussBelief& belief, Rng& rng) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(linalg::symmetrize(belief.cov));
  const Vector scale = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  std::normal_distribution<double> normal;
  Vector white(belief.dim());
  for (Index i = 0; i < white.size(); ++i) white(i) = normal(rng);
  return belief.mean + es.eigenvectors() * scale.cwiseProduct(white);
}

/// Propagate / re-weight / resample over the grid t_n = t0 + n h with
/// R = κ h^{2q+1} I.
inline ParticleRun run_pf(const OdeProblem& problem, const DiscretePrior& prior,
                          const GaussBelief& initial, const ParticleFilterConfig& config,
                          std::size_t steps, Rng& rng) {
  if (config.particles < 2) {
    throw Error(ErrorKind::kInvalidArgument, "particle filter needs at least two particles");
  }
  if (!(config.kappa > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "kappa must be positive");
  }
  const auto count = static_cast<Index>(config.particles);
  const Index m = prior.state_dim();
  const Index d = prior.d();

  ParticleRun run;
  run.R = config.kappa * std::pow(prior.h, static_cast<double>(2 * prior.q() + 1));
  const Matrix r = run.R * Matrix::Identity(d, d);
  const TransitionDensity transition(prior);
  if (transition.range_restricted()) {
    run.notes.emplace_back("transition covariance is singular; using the range-restricted density");
  }

  ParticleEnsemble ensemble{Matrix(count, m), Vector::Constant(count, 1.0 / static_cast<double>(count))};
  for (Index j = 0; j < count; ++j) ensemble.particles.row(j) = sample_gaussian(initial, rng).transpose();

  const std::size_t stride = std::max<std::size_t>(1, config.snapshot_stride);
  std::vector<std::size_t> keep_steps;
  for (double tau : config.snapshot_times) {
    const double k = std::round((tau - problem.t0) / prior.h);
    keep_steps.push_back(static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(steps))));
  }
  const auto keep = [&](std::size_t n) {
    if (n == steps) return true;
    if (config.snapshot_times.empty()) return n % stride == 0;
    return std::find(keep_steps.begin(), keep_steps.end(), n) != keep_steps.end();
  };
  if (config.snapshot_times.empty() || keep(0)) run.snapshots.push_back({0, problem.t0, ensemble});
  Vector log_w(count);
  for (std::size_t n = 1; n <= steps; ++n) {
    const double t = problem.t0 + static_cast<double>(n) * prior.h;
    Matrix next(count, m);
    try {
      for (Index j = 0; j < count; ++j) {
        const Vector x_prev = ensemble.particles.row(j).transpose();
        const ProposalSample draw = propose(x_prev, prior, problem, t, config.kind, r, rng);
        next.row(j) = draw.state.transpose();
        log_w(j) = std::log(ensemble.weights(j)) +
                   log_weight_increment(draw.state, x_prev, draw.log_density, transition,
                                        prior.layout, problem, t, r);
      }
    } catch (const Error& e) {
      throw e.at_step(n);
    }
    ensemble.particles = std::move(next);
    if (!detail::normalize_log_weights(log_w, ensemble.weights)) {
      throw Error(ErrorKind::kWeightCollapse, "all particle weights vanished", n);
    }
    run.ess.push_back(ensemble.ess());
    if (keep(n)) run.snapshots.push_back({n, t, ensemble});
    ensemble = resample(ensemble, config.resample_threshold, rng);
  }
  return run;
}

/// Gaussian kernel density estimate on a uniform grid.
struct DensityGrid {
  std::vector<double> x;
  std::vector<double> density;
  double bandwidth = 0.0;

  [[nodiscard]] double integral() const {
    double total = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
      total += 0.5 * (density[i] + density[i - 1]) * (x[i] - x[i - 1]);
    }
    return total;
  }

  [[nodiscard]] double at(double value) const {
    const auto it = std::lower_bound(x.begin(), x.end(), value);
    if (it == x.begin()) return density.front();
    if (it == x.end()) return density.back();
    const auto i = static_cast<std::size_t>(it - x.begin());
    const double u = (value - x[i - 1]) / (x[i] - x[i - 1]);
    return (1.0 - u) * density[i - 1] + u * density[i];
  }

  /// Strict interior local maxima above `min_fraction` of the global peak.
  [[nodiscard]] std::size_t local_maxima(double min_fraction = 0.05) const {
    const double peak = *std::max_element(density.begin(), density.end());
    std::size_t count = 0;
    for (std::size_t i = 1; i + 1 < density.size(); ++i) {
      if (density[i] > density[i - 1] && density[i] >= density[i + 1] &&
          density[i] > min_fraction * peak) {
        ++count;
      }
    }
    return count;
  }
};

/// Silverman bandwidth, 512-point grid over [min − 3s, max + 3s] with s the
/// sample standard deviation. Weights default to uniform.
inline DensityGrid kde_estimate(const std::vector<double>& samples, std::vector<double> weights = {},
                                std::size_t grid_points = 512) {
  if (samples.size() < 2) {
    throw Error(ErrorKind::kDegenerateSample, "kernel density estimate needs at least two samples");
  }
  const auto n = static_cast<double>(samples.size());
  if (weights.empty()) weights.assign(samples.size(), 1.0 / n);
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  double mean = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) mean += weights[i] * samples[i] / wsum;
  double var = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    var += weights[i] * (samples[i] - mean) * (samples[i] - mean) / wsum;
  }
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) {
    throw Error(ErrorKind::kDegenerateSample, "samples have zero variance");
  }
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double p) {
    const double pos = p * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  // Effective sample size for weighted input.
  double w2 = 0.0;
  for (double w : weights) w2 += (w / wsum) * (w / wsum);
  const double n_eff = 1.0 / w2;

  DensityGrid grid;
  grid.bandwidth = 0.9 * spread * std::pow(n_eff, -0.2);
  const double lo = sorted.front() - 3.0 * sd;
  const double hi = sorted.back() + 3.0 * sd;
  grid.x.resize(grid_points);
  grid.density.assign(grid_points, 0.0);
  const double norm = 1.0 / (grid.bandwidth * std::sqrt(2.0 * std::numbers::pi) * wsum);
  for (std::size_t k = 0; k < grid_points; ++k) {
    const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(grid_points - 1);
    grid.x[k] = x;
    double acc = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double u = (x - samples[i]) / grid.bandwidth;
      acc += weights[i] * std::exp(-0.5 * u * u);
    }
    grid.density[k] = norm * acc;
  }
  return grid;
}

}  // namespace odefilter
