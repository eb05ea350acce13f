#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "homoglab/twoscale.hpp"

using namespace homoglab;

namespace {

CoefficientField random_coefficients(const Box& b, std::mt19937_64& rng, double lambda = 0.2) {
  std::uniform_real_distribution<double> u(lambda + 1e-3, 1.0 - 1e-3);
  CoefficientField a(b);
  for (auto& v : a.diag) v = u(rng);
  return a;
}

ScalarField random_scalar(const Box& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ScalarField f(b);
  for (auto& v : f.values) v = u(rng);
  return f;
}

SolverConfig tight() {
  SolverConfig c;
  c.tol = 1e-12;
  return c;
}

}  // namespace

TEST(Heterogeneous, ZeroLoad) {
  const Box b(2, 8);
  const auto u = solve_heterogeneous(CoefficientField(b, 0.5), 0.1, ScalarField(b), SolverConfig{});
  for (double v : u.value.values) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(solve_heterogeneous(CoefficientField(b, 0.5), 0.0, ScalarField(b), SolverConfig{}), SolverError);
}

TEST(Heterogeneous, EigenmodeOfTheLaplacian) {
  const int L = 16;
  const Box b(2, L);
  ScalarField f(b);
  const int k1 = 2, k2 = 5;
  for (Site x = 0; x < b.size(); ++x) {
    const auto c = b.coords(x);
    f[x] = std::cos(2.0 * std::numbers::pi * k1 * c[0] / L) * std::cos(2.0 * std::numbers::pi * k2 * c[1] / L);
  }
  const double mu = 2.0 * (1.0 - std::cos(2.0 * std::numbers::pi * k1 / L)) + 2.0 * (1.0 - std::cos(2.0 * std::numbers::pi * k2 / L));
  const double alpha = 0.3;
  const auto u = solve_heterogeneous(CoefficientField(b, 1.0), alpha, f, tight());
  for (Site x = 0; x < b.size(); ++x) EXPECT_NEAR(u.value[x], f[x] / (alpha + mu), 1e-11);
  Matrix I(2);
  I(0, 0) = I(1, 1) = 1.0;
  const auto u0 = solve_homogenized(I, alpha, f, SolverConfig{});
  for (Site x = 0; x < b.size(); ++x) EXPECT_NEAR(u0.value[x], f[x] / (alpha + mu), 1e-13);
}

TEST(Heterogeneous, EnergyIdentity) {
  std::mt19937_64 rng(211);
  for (int trial = 0; trial < 5; ++trial) {
    const Box b(2, 12);
    const auto a = random_coefficients(b, rng);
    const auto f = random_scalar(b, rng);
    const double alpha = 0.05 + 0.2 * trial;
    const auto u = solve_heterogeneous(a, alpha, f, tight()).value;
    const auto g = grad(u);
    const double lhs = alpha * inner(u, u) + inner(g, multiply(a, g));
    EXPECT_NEAR(lhs, inner(f, u), 1e-9 * std::abs(lhs));
  }
}

TEST(Homogenized, SpectralAndCgAgree) {
  std::mt19937_64 rng(223);
  const Box b(2, 16);
  const auto f = random_scalar(b, rng);
  Matrix A(2);
  A(0, 0) = 0.4;
  A(1, 1) = 0.7;
  const auto s = solve_homogenized(A, 0.2, f, tight());
  const auto c = solve_homogenized(A, 0.2, f, tight(), true);
  for (Site x = 0; x < b.size(); ++x) EXPECT_NEAR(s.value[x], c.value[x], 1e-10);
  EXPECT_TRUE(s.report.converged);
}

TEST(Homogenized, FullMatrixAgainstDenseOracle) {
  std::mt19937_64 rng(227);
  const Box b(2, 6);
  const auto f = random_scalar(b, rng);
  Matrix A(2);
  A(0, 0) = 0.5;
  A(1, 1) = 0.6;
  A(0, 1) = 0.1;
  A(1, 0) = 0.1;
  const double alpha = 0.3;
  const auto u = solve_homogenized(A, alpha, f, tight()).value;
  // dense oracle assembled from the definition grad*_j (A_ji grad_i)
  const auto n = static_cast<Eigen::Index>(b.size());
  Eigen::MatrixXd M = alpha * Eigen::MatrixXd::Identity(n, n);
  for (Site c = 0; c < b.size(); ++c) {
    ScalarField e(b);
    e[c] = 1.0;
    const auto g = grad(e);
    VectorField flux(b);
    for (Site x = 0; x < b.size(); ++x)
      for (int j = 0; j < 2; ++j) flux(x, j) = A(j, 0) * g(x, 0) + A(j, 1) * g(x, 1);
    const auto col = div_star(flux);
    for (Site r = 0; r < b.size(); ++r) M(r, c) += col[r];
  }
  Eigen::VectorXd rhs(n);
  for (Site x = 0; x < b.size(); ++x) rhs(x) = f[x];
  const Eigen::VectorXd ref = M.partialPivLu().solve(rhs);
  for (Site x = 0; x < b.size(); ++x) EXPECT_NEAR(u[x], ref(x), 1e-9);
}

TEST(Homogenized, SkewPartIsIgnored) {
  std::mt19937_64 rng(229);
  const Box b(2, 8);
  const auto f = random_scalar(b, rng);
  Matrix A(2), B(2);
  A(0, 0) = B(0, 0) = 0.5;
  A(1, 1) = B(1, 1) = 0.6;
  A(0, 1) = 0.2;
  A(1, 0) = 0.0;
  B(0, 1) = B(1, 0) = 0.1;
  const auto ua = solve_homogenized(A, 0.3, f, tight()).value;
  const auto ub = solve_homogenized(B, 0.3, f, tight()).value;
  for (Site x = 0; x < b.size(); ++x) EXPECT_NEAR(ua[x], ub[x], 1e-10);
}

TEST(Remainder, Examples) {
  std::mt19937_64 rng(233);
  const Box b(2, 8);
  const auto u0 = random_scalar(b, rng);
  const std::vector<ScalarField> zero{ScalarField(b), ScalarField(b)};
  for (double v : remainder(u0, u0, zero).values) EXPECT_EQ(v, 0.0);

  const std::vector<ScalarField> phi{random_scalar(b, rng), random_scalar(b, rng)};
  const auto g = grad(u0);
  ScalarField u(b);
  for (Site x = 0; x < b.size(); ++x) u[x] = u0[x] + phi[0][x] * g(x, 0) + phi[1][x] * g(x, 1);
  for (double v : remainder(u, u0, phi).values) EXPECT_NEAR(v, 0.0, 1e-15);

  const auto w = random_scalar(b, rng);
  const auto Z = remainder(w, u0, phi);
  const int L = 8;
  for (int y = 0; y < L; ++y)
    for (int x = 0; x < L; ++x) {
      const int s = x + L * y;
      const int sx = (x + 1) % L + L * y, sy = x + L * ((y + 1) % L);
      const double ref = w[s] - u0[s] - phi[0][s] * (u0[sx] - u0[s]) - phi[1][s] * (u0[sy] - u0[s]);
      EXPECT_NEAR(Z[s], ref, 1e-15);
    }
}

TEST(GrowthWeight, Formula) {
  EXPECT_EQ(growth_weight(17.0, 3), 1.0);
  EXPECT_DOUBLE_EQ(growth_weight(0.0, 2), std::log(2.0));
  double prev = 0.0;
  for (double r = 0.0; r < 100.0; r += 0.5) {
    EXPECT_GE(growth_weight(r, 2), prev);
    prev = growth_weight(r, 2);
  }
}

TEST(DefaultLoad, FixedPeriodIsTheSameOnEveryBox) {
  const auto f16 = default_load(Box(2, 16), 16);
  const auto f32 = default_load(Box(2, 32), 16);
  const Box b32(2, 32);
  for (Site x = 0; x < b32.size(); ++x) {
    const auto c = b32.coords(x);
    EXPECT_NEAR(f32[x], f16[Box(2, 16).index({c[0] % 16, c[1] % 16, 0})], 1e-14);
  }
  EXPECT_THROW(default_load(Box(2, 20), 16), LatticeError);
}

TEST(TwoScaleExperiment, ConstantEnsembleHasNoRemainder) {
  TwoScaleConfig cfg;
  cfg.n_samples = 2;
  cfg.solver = tight();
  const auto r = two_scale_experiment(EnsembleSpec::constant_field(0.5), Box(2, 16), cfg);
  for (const auto& x : r) {
    EXPECT_LE(x.lhs, 1e-18);
    EXPECT_EQ(x.rhs_phi + x.rhs_sigma, 0.0);
  }
}

TEST(TwoScaleExperiment, DeterministicAndNonnegative) {
  TwoScaleConfig cfg;
  cfg.n_samples = 6;
  const auto spec = EnsembleSpec::two_point(0.25, 0.75, 99);
  const auto r1 = two_scale_experiment(spec, Box(2, 16), cfg);
  cfg.threads = 3;
  const auto r2 = two_scale_experiment(spec, Box(2, 16), cfg);
  for (std::size_t s = 0; s < r1.size(); ++s) {
    EXPECT_EQ(r1[s].sample, s);
    EXPECT_EQ(r1[s].lhs, r2[s].lhs);
    EXPECT_EQ(r1[s].ratio, r2[s].ratio);
    EXPECT_GE(r1[s].lhs, 0.0);
    EXPECT_GT(r1[s].rhs_phi, 0.0);
    EXPECT_GT(r1[s].rhs_sigma, 0.0);
    EXPECT_TRUE(std::isfinite(r1[s].ratio));
  }
}

TEST(TwoScaleExperiment, SmallAlphaIsDominatedBySecondDerivativeTerm) {
  TwoScaleConfig cfg;
  cfg.n_samples = 3;
  cfg.alpha = 1e-6;
  const auto r = two_scale_experiment(EnsembleSpec::two_point(0.25, 0.75, 5), Box(2, 16), cfg);
  for (const auto& x : r) EXPECT_GT(x.rhs_sigma, 100.0 * x.rhs_phi);
}

TEST(TwoScaleExperiment, RatioStaysBoundedAcrossBoxSizes) {
  TwoScaleConfig cfg;
  cfg.n_samples = 20;
  cfg.load_period = 16;
  cfg.solver.precond = Preconditioner::spectral;
  const auto spec = EnsembleSpec::two_point(0.25, 0.75, 1);
  std::vector<double> q;
  for (int L : {16, 32}) {
    std::vector<double> ratios;
    for (const auto& x : two_scale_experiment(spec, Box(2, L), cfg)) ratios.push_back(x.ratio);
    q.push_back(quantile(ratios, 0.95));
  }
  EXPECT_LE(q[1], 1.5 * q[0]);
}

TEST(Quantile, Interpolates) {
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(quantile({0.0, 10.0}, 0.95), 9.5);
}
