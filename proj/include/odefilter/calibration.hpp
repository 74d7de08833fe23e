#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "odefilter/errors.hpp"
#include "odefilter/gaussian_filter.hpp"
#include "odefilter/linalg.hpp"

namespace odefilter {

struct CalibrationResult {
  double sigma2_hat = 0.0;
  std::vector<double> per_step_terms;  // rᵀ S̆⁻¹ r
  double log_marginal_at_hat = 0.0;
  bool degenerate = false;  // every residual was zero, σ̂² = 0
};

/// Log marginal likelihood of z_{1:N} = 0 for the diffusion scale σ², from
/// a unit-scale trace: Σ −½[d log(2πσ²) + log det S̆ₙ + rₙᵀS̆ₙ⁻¹rₙ / σ²].
inline double log_marginal_at(const FilterTrace& trace, double sigma2) {
  double total = 0.0;
  for (const auto& step : trace.steps) {
    const auto llt = linalg::innovation_cholesky(step.S);
    const Matrix lower = llt.matrixL();
    const double quad = lower.triangularView<Eigen::Lower>().solve(step.residual).squaredNorm();
    const double log_det = 2.0 * lower.diagonal().array().log().sum();
    const auto d = static_cast<double>(step.residual.size());
    total -= 0.5 * (d * std::log(2.0 * std::numbers::pi * sigma2) + log_det + quad / sigma2);
  }
  return total;
}

namespace detail {

inline CalibrationResult plug_in_sigma2(const FilterTrace& trace) {
  if (trace.steps.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "calibration needs a non-empty trace");
  }
  if (!trace.zero_measurement_noise()) {
    throw Error(ErrorKind::kConfiguration, "sigma^2 calibration is defined only for R = 0 runs");
  }
  if (trace.prior_sigma2 != 1.0) {
    throw Error(ErrorKind::kConfiguration, "calibration expects a trace run with unit sigma^2");
  }
  CalibrationResult out;
  out.per_step_terms.reserve(trace.steps.size());
  double sum = 0.0;
  for (std::size_t n = 0; n < trace.steps.size(); ++n) {
    const auto& step = trace.steps[n];
    try {
      const auto llt = linalg::innovation_cholesky(step.S);
      const double term = step.residual.dot(llt.solve(step.residual));
      out.per_step_terms.push_back(term);
      sum += term;
    } catch (const Error& e) {
      throw e.at_step(n + 1);
    }
  }
  const auto d = static_cast<double>(trace.layout.d);
  const auto count = static_cast<double>(trace.steps.size());
  out.sigma2_hat = sum / count / d;
  out.degenerate = !(out.sigma2_hat > 0.0);
  out.log_marginal_at_hat = out.degenerate ? std::numeric_limits<double>::infinity()
                                           : log_marginal_at(trace, out.sigma2_hat);
  return out;
}

}  // namespace detail

/// Closed-form maximum-likelihood σ² for an exact (affine) Kalman trace run
/// with R = 0 and unit scale: σ̂² = (1/Nd) Σ rₙᵀ S̆ₙ⁻¹ rₙ.
inline CalibrationResult calibrate_sigma2(const FilterTrace& trace) {
  if (trace.variant != Variant::kAffineExact) {
    throw Error(ErrorKind::kConfiguration,
                "closed-form calibration needs an exact affine trace; use quasi_ml_calibrate");
  }
  return detail::plug_in_sigma2(trace);
}

/// Same plug-in formula applied to the innovations of an approximate filter.
inline CalibrationResult quasi_ml_calibrate(const FilterTrace& trace) {
  return detail::plug_in_sigma2(trace);
}

/// Returns a copy of a unit-scale trace with every covariance (and S) scaled
/// by σ², log-likelihood terms recomputed and σ̂² recorded.
inline FilterTrace rescale(const FilterTrace& trace, double sigma2) {
  FilterTrace out = trace;
  out.initial.cov *= sigma2;
  for (auto& step : out.steps) {
    step.predicted.cov *= sigma2;
    step.filtered.cov *= sigma2;
    step.S *= sigma2;
    if (sigma2 > 0.0) step.log_likelihood = innovation_log_density(step.residual, step.S);
  }
  out.prior_sigma2 = trace.prior_sigma2 * sigma2;
  out.sigma2_hat = sigma2;
  return out;
}

}  // namespace odefilter
