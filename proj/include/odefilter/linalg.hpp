#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "odefilter/errors.hpp"

namespace odefilter {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace linalg {

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Kronecker product a ⊗ b.
inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// Lower-triangular factor together with the diagonal shift that was needed
/// to obtain it.
struct CholeskyFactor {
  Matrix lower;
  double jitter = 0.0;
};

/// Cholesky factorization with a diagonal jitter ladder: first plain, then
/// 1e-14·trace, growing ×10 per retry. A zero matrix factors exactly to zero.
inline CholeskyFactor jittered_cholesky(const Matrix& cov, int max_retries = 6) {
  const Matrix sym = symmetrize(cov);
  const Index n = sym.rows();
  if (!sym.allFinite()) {
    throw Error(ErrorKind::kConditioning, "covariance has non-finite entries");
  }
  if (sym.isZero(0.0)) {
    return {Matrix::Zero(n, n), 0.0};
  }
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() == Eigen::Success) {
    return {llt.matrixL(), 0.0};
  }
  const double trace = std::abs(sym.trace());
  double jitter = 1e-14 * trace;
  for (int retry = 0; retry < max_retries; ++retry) {
    llt.compute(sym + jitter * Matrix::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      return {llt.matrixL(), jitter};
    }
    jitter *= 10.0;
  }
  throw Error(ErrorKind::kConditioning, "Cholesky factorization failed after maximum jitter");
}

/// Cholesky of an innovation covariance. S must be positive definite with
/// every pivot above 1e-14·trace.
inline Eigen::LLT<Matrix> innovation_cholesky(const Matrix& s) {
  const Matrix sym = symmetrize(s);
  if (!sym.allFinite()) {
    throw Error(ErrorKind::kNumericalOverflow, "innovation covariance has non-finite entries");
  }
  Eigen::LLT<Matrix> llt(sym);
  const double tol = 1e-14 * std::abs(sym.trace());
  if (llt.info() != Eigen::Success || sym.trace() <= 0.0) {
    throw Error(ErrorKind::kSingularInnovation, "innovation covariance is not positive definite");
  }
  const Vector pivots = Matrix(llt.matrixL()).diagonal().array().square();
  if (pivots.minCoeff() <= tol) {
    throw Error(ErrorKind::kSingularInnovation, "innovation covariance is numerically singular");
  }
  return llt;
}

/// log N(x; mean, cov) given a lower Cholesky factor of cov.
inline double gaussian_logpdf_chol(const Vector& x, const Vector& mean, const Matrix& lower) {
  const Vector diff = x - mean;
  const Vector white = lower.triangularView<Eigen::Lower>().solve(diff);
  const double log_det = 2.0 * lower.diagonal().array().log().sum();
  const double n = static_cast<double>(x.size());
  return -0.5 * (white.squaredNorm() + log_det + n * std::log(2.0 * std::numbers::pi));
}

/// log N(x; mean, cov) with cov positive definite.
inline double gaussian_logpdf(const Vector& x, const Vector& mean, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(symmetrize(cov));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::kConditioning, "covariance is not positive definite");
  }
  return gaussian_logpdf_chol(x, mean, llt.matrixL());
}

/// Largest eigenvalue modulus.
inline double spectral_radius(const Matrix& m) {
  Eigen::EigenSolver<Matrix> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace linalg
}  // namespace odefilter
