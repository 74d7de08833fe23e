#include <gtest/gtest.h>

#include <random>

#include "odefilter/linalg.hpp"
#include "oracles.hpp"

using namespace odefilter;

namespace {

Matrix random_spd(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = normal(rng);
  return a * a.transpose() + 0.1 * Matrix::Identity(n, n);
}

}  // namespace

TEST(Linalg, KronMatchesOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = Matrix::Random(2 + trial % 3, 1 + trial % 2);
    const Matrix b = Matrix::Random(1 + trial % 4, 3);
    EXPECT_LT((linalg::kron(a, b) - oracle::kron(a, b)).norm(), 1e-15);
  }
}

TEST(Linalg, CholeskyReconstructs) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix s = random_spd(1 + trial % 6, rng);
    const auto f = linalg::jittered_cholesky(s);
    EXPECT_EQ(f.jitter, 0.0);
    EXPECT_LT((f.lower * f.lower.transpose() - s).norm(), 1e-12 * s.norm());
  }
}

TEST(Linalg, CholeskyOfZeroIsZero) {
  const auto f = linalg::jittered_cholesky(Matrix::Zero(3, 3));
  EXPECT_TRUE(f.lower.isZero(0.0));
}

TEST(Linalg, CholeskyJittersSemidefinite) {
  Vector v(3);
  v << 1.0, 2.0, 3.0;
  const auto f = linalg::jittered_cholesky(v * v.transpose());
  EXPECT_GT(f.jitter, 0.0);
  EXPECT_LT((f.lower * f.lower.transpose() - v * v.transpose()).norm(), 1e-6);
}

TEST(Linalg, CholeskyRejectsNonFinite) {
  Matrix m = Matrix::Identity(2, 2);
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(linalg::jittered_cholesky(m), Error);
}

TEST(Linalg, InnovationCholeskyRejectsSingular) {
  Matrix s = Matrix::Zero(2, 2);
  s(0, 0) = 1.0;
  try {
    linalg::innovation_cholesky(s);
    FAIL() << "expected singular-innovation";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSingularInnovation);
  }
}

TEST(Linalg, LogpdfMatchesOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + trial % 5;
    const Matrix cov = random_spd(n, rng);
    const Vector mean = Vector::Random(n);
    const Vector x = Vector::Random(n);
    EXPECT_NEAR(linalg::gaussian_logpdf(x, mean, cov), oracle::normal_logpdf(x, mean, cov), 1e-10);
  }
}

TEST(Linalg, SpectralRadiusOfRotation) {
  Matrix r(2, 2);
  r << 0.0, -0.5, 0.5, 0.0;
  EXPECT_NEAR(linalg::spectral_radius(r), 0.5, 1e-15);
}
