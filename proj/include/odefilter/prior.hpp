#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include <unsupported/Eigen/MatrixFunctions>

#include "odefilter/belief.hpp"
#include "odefilter/errors.hpp"
#include "odefilter/linalg.hpp"
#include "odefilter/problems.hpp"

namespace odefilter {

/// Linear time-invariant SDE prior dX = (F X + u) dt + L dB on the stacked
/// state of a d-dimensional ODE with q modelled derivatives.
struct LtiSdePrior {
  Matrix F;
  Vector u;
  Matrix L;
  Index d = 0;
  Index q = 0;
  double sigma2 = 1.0;  // informational: L already carries the scale

  [[nodiscard]] StateLayout layout() const { return {d, q}; }
};

/// Exact discrete-time transition X_{n+1} | X_n ~ N(A X_n + ξ, Q) for step h.
struct DiscretePrior {
  Matrix A;
  Vector xi;
  Matrix Q;
  double h = 0.0;
  double sigma2 = 1.0;
  StateLayout layout;
  Matrix C;
  Matrix Cdot;

  [[nodiscard]] Index state_dim() const { return layout.state_dim(); }
  [[nodiscard]] Index d() const { return layout.d; }
  [[nodiscard]] Index q() const { return layout.q; }
};

/// q-times integrated Wiener process on R^d with diffusion σ²Γ.
struct IwpSpec {
  Index q = 1;
  Index d = 1;
  Matrix gamma;
  double sigma2 = 1.0;

  static IwpSpec isotropic(Index q, Index d, double sigma2 = 1.0) {
    return {q, d, Matrix::Identity(d, d), sigma2};
  }

  [[nodiscard]] StateLayout layout() const { return {d, q}; }

  [[nodiscard]] IwpSpec with_sigma2(double s2) const {
    IwpSpec out = *this;
    out.sigma2 = s2;
    return out;
  }
};

inline void validate(const IwpSpec& spec) {
  if (spec.q < 0 || spec.d <= 0) {
    throw Error(ErrorKind::kInvalidArgument, "IWP requires q >= 0 and d >= 1");
  }
  if (spec.gamma.rows() != spec.d || spec.gamma.cols() != spec.d) {
    throw Error(ErrorKind::kInvalidArgument, "Gamma must be d x d");
  }
  if (!(spec.sigma2 > 0.0) || !std::isfinite(spec.sigma2)) {
    throw Error(ErrorKind::kInvalidArgument, "sigma2 must be positive and finite");
  }
  if (!spec.gamma.isApprox(spec.gamma.transpose(), 1e-12)) {
    throw Error(ErrorKind::kInvalidArgument, "Gamma must be symmetric");
  }
  Eigen::LLT<Matrix> llt(spec.gamma);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::kInvalidArgument, "Gamma must be positive definite");
  }
}

inline void validate(const LtiSdePrior& prior) {
  const Index m = prior.layout().state_dim();
  if (prior.F.rows() != m || prior.F.cols() != m || prior.u.size() != m || prior.L.rows() != m) {
    throw Error(ErrorKind::kInvalidArgument, "LTI prior matrices are dimensionally inconsistent");
  }
}

/// SDE form of an IWP(q) prior: F = shift ⊗ I, u = 0, L = e_{q+1} ⊗ σΓ^{1/2}.
inline LtiSdePrior make_iwp_sde(const IwpSpec& spec) {
  validate(spec);
  const Index q = spec.q;
  const Index d = spec.d;
  Matrix shift = Matrix::Zero(q + 1, q + 1);
  for (Index i = 0; i < q; ++i) shift(i, i + 1) = 1.0;

  Eigen::SelfAdjointEigenSolver<Matrix> es(spec.gamma);
  const Matrix gamma_sqrt = es.operatorSqrt();

  LtiSdePrior prior;
  prior.d = d;
  prior.q = q;
  prior.F = linalg::kron(shift, Matrix::Identity(d, d));
  prior.u = Vector::Zero((q + 1) * d);
  prior.L = linalg::kron(Vector::Unit(q + 1, q), std::sqrt(spec.sigma2) * gamma_sqrt);
  prior.sigma2 = spec.sigma2;
  return prior;
}

namespace detail {

/// Symmetrizes and clips eigenvalues below −1e-12·trace to zero.
inline Matrix clean_covariance(const Matrix& q) {
  Matrix sym = linalg::symmetrize(q);
  const double tol = 1e-12 * std::abs(sym.trace());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() == Eigen::Success && es.eigenvalues().minCoeff() < -tol) {
    const Vector clipped = es.eigenvalues().cwiseMax(0.0);
    sym = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    sym = linalg::symmetrize(sym);
  }
  return sym;
}

inline DiscretePrior with_projections(DiscretePrior out) {
  out.C = out.layout.C();
  out.Cdot = out.layout.q >= 1 ? out.layout.Cdot() : Matrix(0, out.layout.state_dim());
  return out;
}

}  // namespace detail

/// A = exp(Fh), ξ = ∫ exp(F(h−τ)) u dτ and Q = ∫ exp(F(h−τ)) L Lᵀ exp(Fᵀ(h−τ)) dτ,
/// read off a single exponential of the augmented matrix
///
///   [ F   L Lᵀ   u ]
///   [ 0   −Fᵀ    0 ] · h   ↦   exp = [ A  G  ξ ; 0  A^{-T}  0 ; 0  0  1 ],   Q = G Aᵀ.
///   [ 0    0     0 ]
inline DiscretePrior discretize_general(const LtiSdePrior& prior, double h) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw Error(ErrorKind::kInvalidArgument, "step size must be positive");
  }
  validate(prior);
  const Index m = prior.F.rows();
  Matrix aug = Matrix::Zero(2 * m + 1, 2 * m + 1);
  aug.block(0, 0, m, m) = prior.F;
  aug.block(0, m, m, m) = prior.L * prior.L.transpose();
  aug.block(0, 2 * m, m, 1) = prior.u;
  aug.block(m, m, m, m) = -prior.F.transpose();
  const Matrix expm = Matrix(aug * h).exp();
  if (!expm.allFinite()) {
    throw Error(ErrorKind::kNumericalOverflow, "matrix exponential overflowed; |F h| too large");
  }

  DiscretePrior out;
  out.A = expm.block(0, 0, m, m);
  out.xi = expm.block(0, 2 * m, m, 1);
  out.Q = detail::clean_covariance(expm.block(0, m, m, m) * out.A.transpose());
  out.h = h;
  out.sigma2 = prior.sigma2;
  out.layout = prior.layout();
  if (!out.A.allFinite() || !out.Q.allFinite() || !out.xi.allFinite()) {
    throw Error(ErrorKind::kNumericalOverflow, "discretization produced non-finite entries");
  }
  return detail::with_projections(std::move(out));
}

/// Closed-form one-dimensional IWP(q) transition A⁽¹⁾(h) and covariance Q⁽¹⁾(h).
inline Matrix iwp_transition_1d(Index q, double h) {
  Matrix a = Matrix::Zero(q + 1, q + 1);
  for (Index i = 0; i <= q; ++i) {
    for (Index j = i; j <= q; ++j) {
      a(i, j) = std::pow(h, static_cast<double>(j - i)) / std::tgamma(static_cast<double>(j - i + 1));
    }
  }
  return a;
}

inline Matrix iwp_covariance_1d(Index q, double h) {
  Matrix cov(q + 1, q + 1);
  // 1-based i, j in the closed form map to 0-based indices here.
  for (Index i = 1; i <= q + 1; ++i) {
    for (Index j = 1; j <= q + 1; ++j) {
      const auto p = static_cast<double>(2 * q + 3 - i - j);
      cov(i - 1, j - 1) = std::pow(h, p) /
                          (p * std::tgamma(static_cast<double>(q + 2 - i)) *
                           std::tgamma(static_cast<double>(q + 2 - j)));
    }
  }
  return cov;
}

/// A(h) = A⁽¹⁾(h) ⊗ I, ξ = 0, Q(h) = σ² Q⁽¹⁾(h) ⊗ Γ.
inline DiscretePrior discretize_iwp(const IwpSpec& spec, double h) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw Error(ErrorKind::kInvalidArgument, "step size must be positive");
  }
  validate(spec);
  DiscretePrior out;
  out.A = linalg::kron(iwp_transition_1d(spec.q, h), Matrix::Identity(spec.d, spec.d));
  out.xi = Vector::Zero(spec.layout().state_dim());
  out.Q = spec.sigma2 * linalg::kron(iwp_covariance_1d(spec.q, h), spec.gamma);
  out.h = h;
  out.sigma2 = spec.sigma2;
  out.layout = spec.layout();
  return detail::with_projections(std::move(out));
}

/// How the initial derivative blocks are set.
enum class InitMode {
  kExact2,       // y0 and f(y0, t0)
  kExact3,       // additionally J_f(y0, t0) f(y0, t0) when q >= 2
  kExactAffine,  // every block exact for a time-invariant affine field
};

inline InitMode parse_init_mode(std::string_view s) {
  if (s == "exact-2") return InitMode::kExact2;
  if (s == "exact-3") return InitMode::kExact3;
  if (s == "exact-affine") return InitMode::kExactAffine;
  throw Error(ErrorKind::kInvalidArgument, "unknown init mode '" + std::string(s) + "'");
}

/// Initial belief: the exactly known derivative blocks get their value and
/// zero covariance; the rest get zero mean and variance σ²·I.
inline GaussBelief initial_belief(const IwpSpec& spec, const OdeProblem& problem, InitMode mode) {
  validate(spec);
  if (problem.d != spec.d) {
    throw Error(ErrorKind::kInvalidArgument, "prior and problem dimensions differ");
  }
  const Index d = spec.d;
  const Index blocks = spec.q + 1;
  GaussBelief belief{Vector::Zero(blocks * d), Matrix::Zero(blocks * d, blocks * d)};

  Index known = 0;
  const double t0 = problem.t0;
  switch (mode) {
    case InitMode::kExact2:
    case InitMode::kExact3: {
      const Vector f0 = problem.f(problem.y0, t0);
      belief.mean.segment(0, d) = problem.y0;
      known = 1;
      if (blocks > 1) {
        belief.mean.segment(d, d) = f0;
        known = 2;
      }
      if (mode == InitMode::kExact3 && blocks > 2) {
        if (!problem.has_jacobian()) {
          throw Error(ErrorKind::kUnsupportedInit,
                      "exact-3 initialization needs the Jacobian of '" + problem.name + "'");
        }
        belief.mean.segment(2 * d, d) = problem.jacobian(problem.y0, t0) * f0;
        known = 3;
      }
      break;
    }
    case InitMode::kExactAffine: {
      if (!problem.affine) {
        throw Error(ErrorKind::kUnsupportedInit,
                    "exact-affine initialization needs an affine field for '" + problem.name + "'");
      }
      const Matrix lambda = problem.affine->lambda(t0);
      Vector derivative = problem.y0;
      belief.mean.segment(0, d) = derivative;
      if (blocks > 1) {
        derivative = (*problem.affine)(problem.y0, t0);
        belief.mean.segment(d, d) = derivative;
      }
      for (Index j = 2; j < blocks; ++j) {
        derivative = lambda * derivative;
        belief.mean.segment(j * d, d) = derivative;
      }
      known = blocks;
      break;
    }
  }
  for (Index j = known; j < blocks; ++j) {
    belief.cov.block(j * d, j * d, d, d) = spec.sigma2 * Matrix::Identity(d, d);
  }
  return belief;
}

}  // namespace odefilter
