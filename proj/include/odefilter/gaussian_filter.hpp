#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "odefilter/belief.hpp"
#include "odefilter/errors.hpp"
#include "odefilter/linalg.hpp"
#include "odefilter/prior.hpp"
#include "odefilter/problems.hpp"
#include "odefilter/sigma_points.hpp"

namespace odefilter {

/// Approximation used for the measurement update.
enum class Variant {
  kEK0,          // zeroth-order Taylor (SCH)
  kEKF,          // first-order Taylor
  kUKF,          // sigma-point moments of the full measurement function
  kKER,          // sigma-point moments of f, cross-covariance dropped
  kAffineExact,  // exact Kalman update for affine fields
};

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kEK0: return "ek0";
    case Variant::kEKF: return "ekf";
    case Variant::kUKF: return "ukf";
    case Variant::kKER: return "ker";
    case Variant::kAffineExact: return "kf";
  }
  return "unknown";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "ek0" || s == "sch") return Variant::kEK0;
  if (s == "ekf") return Variant::kEKF;
  if (s == "ukf") return Variant::kUKF;
  if (s == "ker") return Variant::kKER;
  if (s == "kf" || s == "affine") return Variant::kAffineExact;
  throw Error(ErrorKind::kInvalidArgument, "unknown variant '" + std::string(s) + "'");
}

struct UpdateConfig {
  Variant variant = Variant::kEKF;
  Matrix R;  // measurement covariance; empty means zero
  SigmaPointParams sigma_points;
};

struct UpdateResult {
  GaussBelief belief;
  Vector residual;  // z − ẑ with z = 0
  Matrix S;
};

/// μᴾ = Aμ + ξ, Σᴾ = AΣAᵀ + Q.
inline GaussBelief predict(const GaussBelief& belief, const DiscretePrior& prior) {
  if (belief.dim() != prior.state_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "belief and prior dimensions differ");
  }
  return {prior.A * belief.mean + prior.xi,
          linalg::symmetrize(prior.A * belief.cov * prior.A.transpose() + prior.Q)};
}

namespace detail {

inline Matrix resolve_r(const Matrix& r, Index d) {
  if (r.size() == 0) return Matrix::Zero(d, d);
  if (r.rows() != d || r.cols() != d) {
    throw Error(ErrorKind::kInvalidArgument, "measurement covariance must be d x d");
  }
  return r;
}

/// Kalman update for the linearized measurement ẑ + H(x − μᴾ); the covariance
/// is downdated in Joseph form.
inline UpdateResult linear_update(const GaussBelief& pred, const Matrix& h, const Vector& zhat,
                                  const Matrix& r) {
  const Matrix cross = pred.cov * h.transpose();
  const Matrix s = linalg::symmetrize(h * cross + r);
  const auto llt = linalg::innovation_cholesky(s);
  const Matrix gain = llt.solve(cross.transpose()).transpose();
  const Vector residual = -zhat;
  const Index m = pred.dim();
  const Matrix ikh = Matrix::Identity(m, m) - gain * h;
  Matrix cov = ikh * pred.cov * ikh.transpose() + gain * r * gain.transpose();
  return {{pred.mean + gain * residual, linalg::symmetrize(cov)}, residual, s};
}

/// Update from precomputed moments ẑ, S and C[X, Z].
inline UpdateResult moment_update(const GaussBelief& pred, const Vector& zhat, const Matrix& s_in,
                                  const Matrix& cross) {
  const Matrix s = linalg::symmetrize(s_in);
  const auto llt = linalg::innovation_cholesky(s);
  const Matrix gain = llt.solve(cross.transpose()).transpose();
  const Vector residual = -zhat;
  return {{pred.mean + gain * residual, linalg::symmetrize(pred.cov - gain * s * gain.transpose())},
          residual,
          s};
}

}  // namespace detail

/// Zeroth-order Taylor update: H = Ċ, ẑ = Ċμᴾ − f(Cμᴾ, t).
inline UpdateResult update_ek0(const GaussBelief& pred, const StateLayout& layout,
                               const OdeProblem& problem, double t, const Matrix& r = {}) {
  const Index d = layout.d;
  const Vector zhat = pred.mean.segment(d, d) - problem.f(pred.mean.segment(0, d), t);
  return detail::linear_update(pred, layout.Cdot(), zhat, detail::resolve_r(r, d));
}

/// First-order Taylor update: H = Ċ − J_f(Cμᴾ, t) C, same residual as EK0.
inline UpdateResult update_ekf(const GaussBelief& pred, const StateLayout& layout,
                               const OdeProblem& problem, double t, const Matrix& r = {}) {
  if (!problem.has_jacobian()) {
    throw Error(ErrorKind::kConfiguration, "EKF update needs the Jacobian of '" + problem.name + "'");
  }
  const Index d = layout.d;
  const Vector y = pred.mean.segment(0, d);
  const Vector zhat = pred.mean.segment(d, d) - problem.f(y, t);
  Matrix h = layout.Cdot();
  h.block(0, 0, d, d) -= problem.jacobian(y, t);
  return detail::linear_update(pred, h, zhat, detail::resolve_r(r, d));
}

/// Sigma-point approximation of ẑ, S and the cross-covariance of the full
/// measurement x ↦ Ċx − f(Cx, t).
inline UpdateResult update_ukf(const GaussBelief& pred, const StateLayout& layout,
                               const OdeProblem& problem, double t, const Matrix& r = {},
                               const SigmaPointParams& params = {}) {
  const Index d = layout.d;
  const auto measure = [&](const Vector& x) -> Vector {
    return x.segment(d, d) - problem.f(x.segment(0, d), t);
  };
  const TransformedMoments tm = unscented_moments(pred, measure, params);
  const Matrix s = linalg::symmetrize(tm.cov + detail::resolve_r(r, d));
  const auto llt = linalg::innovation_cholesky(s);
  const Matrix gain = llt.solve(tm.cross.transpose()).transpose();
  // Σᶠ = Σ − KSKᵀ written as (L − KG)(L − KG)ᵀ + K(S − GGᵀ)Kᵀ, which avoids
  // the cancellation of the plain downdate when Σ is badly conditioned.
  const Matrix root = tm.sqrt_cov - gain * tm.slopes;
  const Matrix rest = s - tm.slopes * tm.slopes.transpose();
  const Vector residual = -tm.mean;
  return {{pred.mean + gain * residual,
           linalg::symmetrize(root * root.transpose() + gain * rest * gain.transpose())},
          residual,
          s};
}

/// Sigma-point moments of f only; the cross-covariance between ĊX and f(CX)
/// is taken as zero, so S = ĊΣĊᵀ + V̂[f] + R and K = ΣĊᵀS⁻¹.
inline UpdateResult update_ker(const GaussBelief& pred, const StateLayout& layout,
                               const OdeProblem& problem, double t, const Matrix& r = {},
                               const SigmaPointParams& params = {}) {
  const Index d = layout.d;
  const auto field = [&](const Vector& x) -> Vector { return problem.f(x.segment(0, d), t); };
  const TransformedMoments tm = unscented_moments(pred, field, params);
  const Vector zhat = pred.mean.segment(d, d) - tm.mean;
  const Matrix s = pred.cov.block(d, d, d, d) + tm.cov + detail::resolve_r(r, d);
  const Matrix cross = pred.cov.middleCols(d, d);
  return detail::moment_update(pred, zhat, s, cross);
}

/// Exact Kalman update for f = Λ(t)y + ζ(t): H = Ċ − ΛC, innovation ζ − Hμᴾ.
inline UpdateResult update_affine_exact(const GaussBelief& pred, const StateLayout& layout,
                                        const AffineField& field, double t, const Matrix& r = {}) {
  const Index d = layout.d;
  Matrix h = layout.Cdot();
  h.block(0, 0, d, d) -= field.lambda(t);
  const Vector zhat = h * pred.mean - field.zeta(t);
  return detail::linear_update(pred, h, zhat, detail::resolve_r(r, d));
}

inline UpdateResult update(const GaussBelief& pred, const StateLayout& layout,
                           const OdeProblem& problem, double t, const UpdateConfig& config) {
  switch (config.variant) {
    case Variant::kEK0: return update_ek0(pred, layout, problem, t, config.R);
    case Variant::kEKF: return update_ekf(pred, layout, problem, t, config.R);
    case Variant::kUKF: return update_ukf(pred, layout, problem, t, config.R, config.sigma_points);
    case Variant::kKER: return update_ker(pred, layout, problem, t, config.R, config.sigma_points);
    case Variant::kAffineExact:
      if (!problem.affine) {
        throw Error(ErrorKind::kConfiguration,
                    "exact affine update needs an affine field for '" + problem.name + "'");
      }
      return update_affine_exact(pred, layout, *problem.affine, t, config.R);
  }
  throw Error(ErrorKind::kConfiguration, "unhandled variant");
}

/// One grid point of a filter run.
struct FilterStep {
  double t = 0.0;
  GaussBelief predicted;
  GaussBelief filtered;
  Vector residual;
  Matrix S;
  double log_likelihood = 0.0;  // log N(0; ẑ, S)
};

struct FilterTrace {
  Variant variant = Variant::kEKF;
  double h = 0.0;
  double t0 = 0.0;
  double prior_sigma2 = 1.0;
  Matrix R;
  StateLayout layout;
  GaussBelief initial;
  std::vector<FilterStep> steps;
  double sigma2_hat = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> notes;

  [[nodiscard]] std::size_t size() const { return steps.size(); }

  [[nodiscard]] double log_marginal() const {
    double total = 0.0;
    for (const auto& s : steps) total += s.log_likelihood;
    return total;
  }

  [[nodiscard]] bool zero_measurement_noise() const { return R.size() == 0 || R.isZero(0.0); }
};

/// log N(residual; 0, S).
inline double innovation_log_density(const Vector& residual, const Matrix& s) {
  const auto llt = linalg::innovation_cholesky(s);
  return linalg::gaussian_logpdf_chol(residual, Vector::Zero(residual.size()), llt.matrixL());
}

/// Alternates predict/update on the grid t_n = t0 + n h, n = 1..N, starting
/// from `initial` at t0. Errors carry the step index.
inline FilterTrace run_filter(const OdeProblem& problem, const DiscretePrior& prior,
                              const UpdateConfig& config, std::size_t steps,
                              const GaussBelief& initial) {
  if (steps < 1) {
    throw Error(ErrorKind::kInvalidArgument, "run_filter needs at least one step");
  }
  if (problem.d != prior.d() || initial.dim() != prior.state_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "problem, prior and initial belief disagree in size");
  }
  FilterTrace trace;
  trace.variant = config.variant;
  trace.h = prior.h;
  trace.t0 = problem.t0;
  trace.prior_sigma2 = prior.sigma2;
  trace.R = detail::resolve_r(config.R, prior.d());
  trace.layout = prior.layout;
  trace.initial = initial;
  trace.steps.reserve(steps);
  if (config.variant == Variant::kKER) {
    trace.notes.emplace_back(
        "ker: E[f] and V[f] use the symmetric sigma-point rule in place of kernel quadrature");
  }

  UpdateConfig cfg = config;
  cfg.R = trace.R;
  GaussBelief belief = initial;
  for (std::size_t n = 1; n <= steps; ++n) {
    const double t = problem.t0 + static_cast<double>(n) * prior.h;
    try {
      FilterStep step;
      step.t = t;
      step.predicted = predict(belief, prior);
      UpdateResult upd = update(step.predicted, prior.layout, problem, t, cfg);
      step.log_likelihood = innovation_log_density(upd.residual, upd.S);
      step.filtered = std::move(upd.belief);
      step.residual = std::move(upd.residual);
      step.S = std::move(upd.S);
      if (!step.filtered.mean.allFinite() || !step.filtered.cov.allFinite()) {
        throw Error(ErrorKind::kNumericalOverflow, "filter moments became non-finite");
      }
      belief = step.filtered;
      trace.steps.push_back(std::move(step));
    } catch (const Error& e) {
      throw e.at_step(n);
    }
  }
  return trace;
}

/// Number of whole steps of size h that fit in the problem's time span.
inline std::size_t steps_for(const OdeProblem& problem, double h) {
  return static_cast<std::size_t>(std::floor((problem.t_end - problem.t0) / h + 1e-9));
}

/// Convenience: discretize the IWP prior, build the initial belief and run.
inline FilterTrace solve(const OdeProblem& problem, const IwpSpec& spec, const UpdateConfig& config,
                         double h, InitMode init, std::size_t steps = 0) {
  const DiscretePrior prior = discretize_iwp(spec, h);
  const GaussBelief initial = initial_belief(spec, problem, init);
  return run_filter(problem, prior, config, steps == 0 ? steps_for(problem, h) : steps, initial);
}

/// Filter means of X⁽¹⁾ next to batch-conditioning means for the
/// quadrature special case f(y, t) = g(t).
struct QuadratureComparison {
  std::vector<double> times;
  std::vector<Vector> filter_means;
  std::vector<Vector> oracle_means;
};

/// Runs the filter on y' = g(t), y(0) = 0, R = 0 and, independently, conditions
/// the joint prior of X⁽¹⁾(t_n) and X⁽²⁾(t_1..t_n) on X⁽²⁾(t_k) = g(t_k).
/// Both start from X⁽¹⁾ = 0, X⁽²⁾ = g(0) with zero covariance.
inline QuadratureComparison bq_reduction_check(const std::function<Vector(double)>& g,
                                               const IwpSpec& spec, double h, std::size_t steps) {
  const Vector g0 = g(0.0);
  const Index d = g0.size();
  if (d != spec.d) {
    throw Error(ErrorKind::kInvalidArgument, "integrand dimension differs from the prior");
  }
  const auto span = h * static_cast<double>(steps);
  AffineField field{[d](double) { return Matrix::Zero(d, d).eval(); }, g};
  const OdeProblem problem = make_affine_problem("quadrature", field, Vector::Zero(d), 0.0, span);
  const GaussBelief initial = initial_belief(spec, problem, InitMode::kExact2);

  UpdateConfig config{Variant::kEK0, Matrix::Zero(d, d), {}};
  const FilterTrace trace = run_filter(problem, discretize_iwp(spec, h), config, steps, initial);

  QuadratureComparison out;
  const StateLayout layout = spec.layout();
  const Matrix c = layout.C();
  const Matrix cdot = layout.Cdot();

  // Prior moments at absolute times, each from a single closed-form
  // discretization over [0, t].
  std::vector<Vector> means(steps + 1);
  std::vector<Matrix> marginals(steps + 1);
  means[0] = initial.mean;
  marginals[0] = initial.cov;
  for (std::size_t n = 1; n <= steps; ++n) {
    const DiscretePrior from_zero = discretize_iwp(spec, h * static_cast<double>(n));
    means[n] = from_zero.A * initial.mean;
    marginals[n] = from_zero.A * initial.cov * from_zero.A.transpose() + from_zero.Q;
  }
  // Cov(X(t_i), X(t_j)) = A(t_i − t_j) P(t_j) for i ≥ j.
  const auto joint_cov = [&](std::size_t i, std::size_t j) -> Matrix {
    if (i == j) return marginals[i];
    if (i > j) return discretize_iwp(spec, h * static_cast<double>(i - j)).A * marginals[j];
    return (discretize_iwp(spec, h * static_cast<double>(j - i)).A * marginals[i]).transpose();
  };

  for (std::size_t n = 1; n <= steps; ++n) {
    const auto nd = static_cast<Index>(n);
    Matrix gram(nd * d, nd * d);
    Matrix cross(d, nd * d);
    Vector innovation(nd * d);
    for (std::size_t i = 1; i <= n; ++i) {
      const auto bi = static_cast<Index>(i - 1) * d;
      innovation.segment(bi, d) = g(h * static_cast<double>(i)) - cdot * means[i];
      cross.middleCols(bi, d) = c * joint_cov(n, i) * cdot.transpose();
      for (std::size_t j = 1; j <= n; ++j) {
        gram.block(bi, static_cast<Index>(j - 1) * d, d, d) = cdot * joint_cov(i, j) * cdot.transpose();
      }
    }
    const Vector weights = gram.ldlt().solve(innovation);
    out.times.push_back(h * static_cast<double>(n));
    out.oracle_means.push_back(c * means[n] + cross * weights);
    out.filter_means.push_back(c * trace.steps[n - 1].filtered.mean);
  }
  return out;
}

}  // namespace odefilter
