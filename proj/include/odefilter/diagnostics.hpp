#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "odefilter/errors.hpp"
#include "odefilter/gaussian_filter.hpp"
#include "odefilter/linalg.hpp"
#include "odefilter/prior.hpp"

namespace odefilter {

struct RunMetrics {
  double rmse = 0.0;
  double chi2_bar = 0.0;
  std::vector<double> per_step_chi2;
  Index d = 0;
};

/// (y − Cμ)ᵀ[CΣCᵀ]⁻¹(y − Cμ). A zero error gives zero regardless of the
/// covariance; otherwise the jittered Cholesky of CΣCᵀ is used.
inline double chi2_statistic(const Vector& error, const Matrix& cov) {
  if (error.isZero(0.0)) return 0.0;
  const linalg::CholeskyFactor factor = linalg::jittered_cholesky(cov);
  if (factor.lower.diagonal().minCoeff() <= 0.0) {
    throw Error(ErrorKind::kConditioning, "solution covariance is singular");
  }
  return factor.lower.triangularView<Eigen::Lower>().solve(error).squaredNorm();
}

/// RMSE of Cμᶠ against the reference and the average χ² statistic over the
/// grid points t_1..t_N.
inline RunMetrics compute_metrics(const FilterTrace& trace, const Trajectory& reference) {
  if (!reference) {
    throw Error(ErrorKind::kInvalidArgument, "metrics need a reference solution");
  }
  const Index d = trace.layout.d;
  RunMetrics out;
  out.d = d;
  double sq = 0.0;
  for (std::size_t n = 0; n < trace.steps.size(); ++n) {
    const auto& step = trace.steps[n];
    const Vector err = reference(step.t) - step.filtered.mean.segment(0, d);
    sq += err.squaredNorm();
    try {
      out.per_step_chi2.push_back(chi2_statistic(err, step.filtered.cov.block(0, 0, d, d)));
    } catch (const Error& e) {
      throw e.at_step(n + 1);
    }
  }
  const auto count = static_cast<double>(trace.steps.size());
  out.rmse = std::sqrt(sq / count);
  double total = 0.0;
  for (double c : out.per_step_chi2) total += c;
  out.chi2_bar = total / count;
  return out;
}

struct StabilityCertificate {
  double spectral_radius = 0.0;
  Matrix gain;  // K∞
  std::size_t iterations = 0;         // direct Riccati steps
  std::size_t newton_steps = 0;       // Hewer refinements after the direct phase
  double fixed_point_residual = 0.0;  // ‖Ric(Σ) − Σ‖_F / ‖Σ‖_F at the returned Σ
  bool certified = false;
};

/// Iterates the exact Kalman covariance recursion for y' = Λy (R = 0) to its
/// fixed point and reports the spectral radius of A − A K∞ H.
///
/// The direct iteration stops once the relative change is below `tolerance`.
/// Near a radius of one it contracts very slowly, and some configurations sit
/// on a roundoff floor above 1e-12, so every `polish_every` steps, if the
/// current gain is stabilizing, Hewer steps (a Stein solve with the current
/// closed loop) are tried; the polished Σ is accepted when its relative
/// fixed-point residual is below `accept_residual`. The stabilizing solution
/// is unique, so this agrees with the direct limit whenever that limit exists
/// and is stabilizing.
inline StabilityCertificate certify_stability(const Matrix& lambda, const IwpSpec& spec, double h,
                                              std::size_t max_iterations = 100000,
                                              double tolerance = 1e-12,
                                              double accept_residual = 1e-9,
                                              std::size_t polish_every = 1000) {
  if (lambda.rows() != spec.d || lambda.cols() != spec.d) {
    throw Error(ErrorKind::kInvalidArgument, "Lambda must be d x d");
  }
  Eigen::FullPivLU<Matrix> lu(lambda);
  if (lu.rank() < lambda.rows()) {
    throw Error(ErrorKind::kInvalidArgument, "Lambda must have full rank");
  }
  const DiscretePrior prior = discretize_iwp(spec, h);
  const Index d = spec.d;
  const Index m = prior.state_dim();
  Matrix hmat = prior.Cdot;
  hmat.block(0, 0, d, d) -= lambda;
  const Matrix eye = Matrix::Identity(m, m);

  const auto gain_of = [&](const Matrix& pred_cov) {
    const Matrix cross = pred_cov * hmat.transpose();
    const Matrix s = linalg::symmetrize(hmat * cross);
    return Matrix(linalg::innovation_cholesky(s).solve(cross.transpose()).transpose());
  };
  const auto riccati = [&](const Matrix& pred_cov) {
    const Matrix ikh = eye - gain_of(pred_cov) * hmat;
    const Matrix filt = linalg::symmetrize(ikh * pred_cov * ikh.transpose());
    return Matrix(linalg::symmetrize(prior.A * filt * prior.A.transpose() + prior.Q));
  };
  const auto residual_of = [&](const Matrix& pred_cov) {
    return (riccati(pred_cov) - pred_cov).norm() / pred_cov.norm();
  };

  StabilityCertificate out;
  // Hewer iteration from the gain of `start`; returns true and updates
  // `pred_cov` if it reaches the acceptance residual.
  const auto polish = [&](Matrix& pred_cov) {
    Matrix current = pred_cov;
    double current_res = residual_of(current);
    std::size_t steps = 0;
    for (int k = 0; k < 30; ++k) {
      const Matrix closed = prior.A * (eye - gain_of(current) * hmat);
      if (!(linalg::spectral_radius(closed) < 1.0)) break;
      // Σ = Φ Σ Φᵀ + Q via vec(Σ) = (I − Φ⊗Φ)⁻¹ vec(Q).
      const Matrix system = Matrix::Identity(m * m, m * m) - linalg::kron(closed, closed);
      const Vector rhs = Eigen::Map<const Vector>(prior.Q.data(), m * m);
      const Vector sol = system.partialPivLu().solve(rhs);
      const Matrix candidate = linalg::symmetrize(Eigen::Map<const Matrix>(sol.data(), m, m));
      if (!candidate.allFinite()) break;
      const double res = residual_of(candidate);
      ++steps;
      if (!(res < current_res)) break;
      current = candidate;
      current_res = res;
      if (res <= tolerance) break;
    }
    if (!(current_res <= accept_residual)) return false;
    pred_cov = current;
    out.newton_steps = steps;
    out.fixed_point_residual = current_res;
    return true;
  };

  Matrix pred_cov = prior.Q;
  bool converged = false;
  for (std::size_t it = 1; it <= max_iterations && !converged; ++it) {
    const Matrix next = riccati(pred_cov);
    const double change = (next - pred_cov).norm() / next.norm();
    pred_cov = next;
    out.iterations = it;
    if (!std::isfinite(change)) {
      throw Error(ErrorKind::kNumericalOverflow, "Riccati iteration produced non-finite values");
    }
    if (change <= tolerance) {
      converged = true;
      out.fixed_point_residual = residual_of(pred_cov);
    } else if (it % polish_every == 0) {
      converged = polish(pred_cov);
    }
  }
  if (!converged) {
    throw Error(ErrorKind::kNoFixedPoint, "Riccati iteration did not reach a fixed point");
  }
  out.gain = gain_of(pred_cov);
  out.spectral_radius = linalg::spectral_radius(prior.A - prior.A * out.gain * hmat);
  out.certified = out.spectral_radius < 1.0;
  return out;
}

/// ‖μᶠ_N‖ after running the filter on an affine problem over [t0, horizon].
inline double empirical_decay(const OdeProblem& problem, const IwpSpec& spec,
                              const UpdateConfig& config, double h, double horizon,
                              InitMode init = InitMode::kExactAffine) {
  if (!problem.affine) {
    throw Error(ErrorKind::kConfiguration, "empirical decay needs an affine problem");
  }
  const auto steps = static_cast<std::size_t>(std::floor((horizon - problem.t0) / h + 1e-9));
  const FilterTrace trace =
      run_filter(problem, discretize_iwp(spec, h), config, steps, initial_belief(spec, problem, init));
  return trace.steps.back().filtered.mean.norm();
}

}  // namespace odefilter
