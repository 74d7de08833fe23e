#pragma once

#include <cmath>
#include <vector>

#include "odefilter/belief.hpp"
#include "odefilter/linalg.hpp"

namespace odefilter {

/// Spread parameters of the symmetric 2m+1 point rule. With the defaults
/// (α = 1, β = 0, κ = 1) the points sit at μ ± √(m+1)·Lᵢ, the centre weight
/// is 1/(m+1) and every weight is positive; the rule is exact for
/// polynomials up to degree three.
struct SigmaPointParams {
  double alpha = 1.0;
  double beta = 0.0;
  double kappa = 1.0;
};

struct SigmaPoints {
  std::vector<Vector> points;
  std::vector<double> mean_weights;
  std::vector<double> cov_weights;
  Matrix lower;         // points are μ ± spread·lower.col(i)
  double spread = 0.0;
  double jitter = 0.0;
};

inline SigmaPoints make_sigma_points(const GaussBelief& belief, const SigmaPointParams& params = {}) {
  const Index m = belief.dim();
  const auto md = static_cast<double>(m);
  const double lambda = params.alpha * params.alpha * (md + params.kappa) - md;
  const double spread = std::sqrt(md + lambda);
  const linalg::CholeskyFactor factor = linalg::jittered_cholesky(belief.cov);

  SigmaPoints sp;
  sp.lower = factor.lower;
  sp.spread = spread;
  sp.jitter = factor.jitter;
  sp.points.reserve(2 * m + 1);
  sp.points.push_back(belief.mean);
  for (Index i = 0; i < m; ++i) {
    sp.points.push_back(belief.mean + spread * factor.lower.col(i));
  }
  for (Index i = 0; i < m; ++i) {
    sp.points.push_back(belief.mean - spread * factor.lower.col(i));
  }
  const double w0 = lambda / (md + lambda);
  const double wi = 0.5 / (md + lambda);
  sp.mean_weights.assign(2 * m + 1, wi);
  sp.cov_weights.assign(2 * m + 1, wi);
  sp.mean_weights[0] = w0;
  sp.cov_weights[0] = w0 + (1.0 - params.alpha * params.alpha + params.beta);
  return sp;
}

/// Sigma-point estimates of E[g(X)], V[g(X)] and C[X, g(X)], plus the
/// factor L (LLᵀ = Σ) and the central differences G with column i equal to
/// (g(μ + sLᵢ) − g(μ − sLᵢ)) / 2s. For the symmetric rule C[X, g(X)] = LGᵀ.
struct TransformedMoments {
  Vector mean;
  Matrix cov;
  Matrix cross;
  Matrix sqrt_cov;
  Matrix slopes;
};

template <typename Fn>
TransformedMoments unscented_moments(const GaussBelief& belief, Fn&& g,
                                     const SigmaPointParams& params = {}) {
  const SigmaPoints sp = make_sigma_points(belief, params);
  std::vector<Vector> images;
  images.reserve(sp.points.size());
  for (const Vector& x : sp.points) images.push_back(g(x));

  const Index out_dim = images.front().size();
  TransformedMoments tm{Vector::Zero(out_dim), Matrix::Zero(out_dim, out_dim),
                        Matrix::Zero(belief.dim(), out_dim)};
  for (std::size_t j = 0; j < images.size(); ++j) tm.mean += sp.mean_weights[j] * images[j];
  for (std::size_t j = 0; j < images.size(); ++j) {
    const Vector dy = images[j] - tm.mean;
    const Vector dx = sp.points[j] - belief.mean;
    tm.cov += sp.cov_weights[j] * dy * dy.transpose();
    tm.cross += sp.cov_weights[j] * dx * dy.transpose();
  }
  tm.cov = linalg::symmetrize(tm.cov);
  const Index m = belief.dim();
  tm.sqrt_cov = sp.lower;
  tm.slopes.resize(out_dim, m);
  for (Index i = 0; i < m; ++i) {
    tm.slopes.col(i) = (images[1 + i] - images[1 + m + i]) / (2.0 * sp.spread);
  }
  return tm;
}

}  // namespace odefilter
