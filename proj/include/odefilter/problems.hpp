#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "odefilter/errors.hpp"
#include "odefilter/linalg.hpp"

namespace odefilter {

using VectorField = std::function<Vector(const Vector& y, double t)>;
using JacobianField = std::function<Matrix(const Vector& y, double t)>;
using Trajectory = std::function<Vector(double t)>;

/// f(y, t) = Λ(t) y + ζ(t).
struct AffineField {
  std::function<Matrix(double)> lambda;
  std::function<Vector(double)> zeta;

  [[nodiscard]] Vector operator()(const Vector& y, double t) const { return lambda(t) * y + zeta(t); }
};

/// Initial value problem y' = f(y, t), y(t0) = y0 on [t0, t_end].
struct OdeProblem {
  std::string name;
  Index d = 0;
  VectorField f;
  JacobianField jacobian;  // empty when the problem supplies none
  Vector y0;
  double t0 = 0.0;
  double t_end = 0.0;
  Trajectory reference;  // empty when no reference solution is known
  std::optional<AffineField> affine;

  [[nodiscard]] bool has_jacobian() const { return static_cast<bool>(jacobian); }
  [[nodiscard]] bool has_reference() const { return static_cast<bool>(reference); }
};

/// ‖J_f − FD(f)‖ / (1 + ‖J_f‖) at (y, t), central differences.
inline double jacobian_fd_error(const OdeProblem& problem, const Vector& y, double t,
                                double step = 1e-6) {
  if (!problem.has_jacobian()) {
    throw Error(ErrorKind::kConfiguration, "problem '" + problem.name + "' has no Jacobian");
  }
  const Matrix jac = problem.jacobian(y, t);
  Matrix fd(problem.d, problem.d);
  for (Index j = 0; j < problem.d; ++j) {
    Vector up = y;
    Vector down = y;
    up(j) += step;
    down(j) -= step;
    fd.col(j) = (problem.f(up, t) - problem.f(down, t)) / (2.0 * step);
  }
  return (jac - fd).norm() / (1.0 + jac.norm());
}

/// Checks the problem's construction invariants; throws on violation.
inline void validate(const OdeProblem& problem) {
  if (problem.d <= 0 || problem.y0.size() != problem.d || !problem.f) {
    throw Error(ErrorKind::kInvalidArgument, "malformed problem '" + problem.name + "'");
  }
  if (!(problem.t_end > problem.t0)) {
    throw Error(ErrorKind::kInvalidArgument, "empty time span for '" + problem.name + "'");
  }
  if (!problem.f(problem.y0, problem.t0).allFinite()) {
    throw Error(ErrorKind::kInvalidArgument, "f(y0, t0) is not finite for '" + problem.name + "'");
  }
  if (problem.has_jacobian() && jacobian_fd_error(problem, problem.y0, problem.t0) > 1e-5) {
    throw Error(ErrorKind::kInvalidArgument,
                "Jacobian disagrees with finite differences for '" + problem.name + "'");
  }
}

/// Builds a problem from an affine field; the Jacobian is Λ(t).
inline OdeProblem make_affine_problem(std::string name, AffineField field, Vector y0, double t0,
                                      double t_end, Trajectory reference = {}) {
  OdeProblem p;
  p.name = std::move(name);
  p.d = y0.size();
  p.f = [field](const Vector& y, double t) { return field(y, t); };
  p.jacobian = [field](const Vector&, double t) { return field.lambda(t); };
  p.y0 = std::move(y0);
  p.t0 = t0;
  p.t_end = t_end;
  p.reference = std::move(reference);
  p.affine = std::move(field);
  return p;
}

inline Matrix test_matrix(double lambda1, double lambda2) {
  Matrix m(2, 2);
  m << lambda1, -lambda2, lambda2, lambda1;
  return m;
}

/// Real form of the linear test equation y' = λy, λ = λ1 + iλ2, y(0) = [1, 0].
inline OdeProblem make_linear_oscillator(double lambda1, double lambda2, double t_end = 10.0) {
  const Matrix lambda = test_matrix(lambda1, lambda2);
  const Vector y0 = Vector::Unit(2, 0);
  AffineField field{[lambda](double) { return lambda; }, [](double) { return Vector::Zero(2); }};
  Trajectory reference = [lambda, y0](double t) -> Vector { return Matrix(lambda * t).exp() * y0; };
  return make_affine_problem("linear", std::move(field), y0, 0.0, t_end, std::move(reference));
}

/// y' = r y (1 − y).
inline OdeProblem make_logistic(double r, double y0, double t_end = 2.5) {
  if (!(y0 > 0.0 && y0 < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "logistic initial value must lie in (0, 1)");
  }
  OdeProblem p;
  p.name = "logistic";
  p.d = 1;
  p.f = [r](const Vector& y, double) { return Vector::Constant(1, r * y(0) * (1.0 - y(0))); };
  p.jacobian = [r](const Vector& y, double) { return Matrix::Constant(1, 1, r * (1.0 - 2.0 * y(0))); };
  p.y0 = Vector::Constant(1, y0);
  p.t0 = 0.0;
  p.t_end = t_end;
  p.reference = [r, y0](double t) {
    const double e = std::exp(r * t);
    return Vector::Constant(1, e / (1.0 / y0 - 1.0 + e));
  };
  return p;
}

namespace detail {

/// Fixed-step RK4 trajectory stored on a uniform grid, read back by cubic
/// Hermite interpolation using the vector field for node slopes.
class DenseRk4Solution {
 public:
  DenseRk4Solution(VectorField f, const Vector& y0, double t0, double t_end, double step,
                   int store_every)
      : f_(std::move(f)), t0_(t0), spacing_(step * store_every) {
    const auto steps = static_cast<long>(std::llround((t_end - t0) / step));
    Vector y = y0;
    nodes_.push_back(y);
    for (long k = 0; k < steps; ++k) {
      const double t = t0 + static_cast<double>(k) * step;
      const Vector k1 = f_(y, t);
      const Vector k2 = f_(y + 0.5 * step * k1, t + 0.5 * step);
      const Vector k3 = f_(y + 0.5 * step * k2, t + 0.5 * step);
      const Vector k4 = f_(y + step * k3, t + step);
      y += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if ((k + 1) % store_every == 0) {
        nodes_.push_back(y);
      }
    }
    slopes_.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      slopes_.push_back(f_(nodes_[i], t0_ + static_cast<double>(i) * spacing_));
    }
  }

  [[nodiscard]] Vector operator()(double t) const {
    const double s = (t - t0_) / spacing_;
    const auto last = static_cast<double>(nodes_.size() - 1);
    const double clamped = std::clamp(s, 0.0, last);
    auto i = static_cast<std::size_t>(std::floor(clamped));
    if (i == nodes_.size() - 1) {
      if (i == 0) return nodes_[0];
      --i;
    }
    const double u = clamped - static_cast<double>(i);
    const double h00 = (1 + 2 * u) * (1 - u) * (1 - u);
    const double h10 = u * (1 - u) * (1 - u);
    const double h01 = u * u * (3 - 2 * u);
    const double h11 = u * u * (u - 1);
    return h00 * nodes_[i] + h10 * spacing_ * slopes_[i] + h01 * nodes_[i + 1] +
           h11 * spacing_ * slopes_[i + 1];
  }

 private:
  VectorField f_;
  double t0_;
  double spacing_;
  std::vector<Vector> nodes_;
  std::vector<Vector> slopes_;
};

}  // namespace detail

/// FitzHugh–Nagumo on [0, t_end] from y(0) = [−1, 1]. The reference is a
/// fixed-step RK4 solution (h = 1e-5), computed on first use and shared by
/// copies of the problem.
inline OdeProblem make_fitzhugh_nagumo(double a = 0.2, double b = 0.2, double c = 3.0,
                                       double t_end = 20.0) {
  if (c == 0.0) {
    throw Error(ErrorKind::kInvalidArgument, "FitzHugh-Nagumo parameter c must be nonzero");
  }
  OdeProblem p;
  p.name = "fitzhugh";
  p.d = 2;
  p.f = [a, b, c](const Vector& y, double) {
    Vector out(2);
    out(0) = c * (y(0) - y(0) * y(0) * y(0) / 3.0 + y(1));
    out(1) = -(y(0) - a + b * y(1)) / c;
    return out;
  };
  p.jacobian = [b, c](const Vector& y, double) {
    Matrix jac(2, 2);
    jac << c * (1.0 - y(0) * y(0)), c, -1.0 / c, -b / c;
    return jac;
  };
  p.y0 = Vector(2);
  p.y0 << -1.0, 1.0;
  p.t0 = 0.0;
  p.t_end = t_end;

  struct Cache {
    std::once_flag once;
    std::unique_ptr<detail::DenseRk4Solution> solution;
  };
  auto cache = std::make_shared<Cache>();
  p.reference = [cache, f = p.f, y0 = p.y0, t_end](double t) {
    std::call_once(cache->once, [&] {
      cache->solution = std::make_unique<detail::DenseRk4Solution>(f, y0, 0.0, t_end, 1e-5, 10);
    });
    return (*cache->solution)(t);
  };
  return p;
}

/// η = √y for the logistic equation with rate r: η' = (r/2) η (1 − η²).
/// Equilibria at ±1 (stable) and 0 (unstable).
inline OdeProblem make_bernoulli(double eta0 = 0.0, double r = 2.0, double t_end = 5.0) {
  OdeProblem p;
  p.name = "bernoulli";
  p.d = 1;
  const double half_r = 0.5 * r;
  p.f = [half_r](const Vector& y, double) {
    return Vector::Constant(1, half_r * y(0) * (1.0 - y(0) * y(0)));
  };
  p.jacobian = [half_r](const Vector& y, double) {
    return Matrix::Constant(1, 1, half_r * (1.0 - 3.0 * y(0) * y(0)));
  };
  p.y0 = Vector::Constant(1, eta0);
  p.t0 = 0.0;
  p.t_end = t_end;
  p.reference = [r, eta0](double t) {
    if (eta0 == 0.0) return Vector::Zero(1).eval();
    const double y0 = eta0 * eta0;
    const double e = std::exp(r * t);
    const double y = e / (1.0 / y0 - 1.0 + e);
    return Vector::Constant(1, std::copysign(std::sqrt(y), eta0)).eval();
  };
  return p;
}

inline const std::vector<std::string>& problem_names() {
  static const std::vector<std::string> names{"linear", "logistic", "fitzhugh", "bernoulli"};
  return names;
}

/// Registry of the named test problems with their standard parameters.
inline OdeProblem make_problem(std::string_view name) {
  if (name == "linear") return make_linear_oscillator(0.0, std::numbers::pi);
  if (name == "logistic") return make_logistic(3.0, 0.1);
  if (name == "fitzhugh") return make_fitzhugh_nagumo();
  if (name == "bernoulli") return make_bernoulli();
  throw Error(ErrorKind::kInvalidArgument, "unknown problem '" + std::string(name) + "'");
}

}  // namespace odefilter
