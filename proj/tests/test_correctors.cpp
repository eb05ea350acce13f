#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "homoglab/correctors.hpp"

using namespace homoglab;

namespace {

CoefficientField random_coefficients(const Box& b, std::mt19937_64& rng, double lambda = 0.2) {
  std::uniform_real_distribution<double> u(lambda + 1e-3, 1.0 - 1e-3);
  CoefficientField a(b);
  for (auto& v : a.diag) v = u(rng);
  return a;
}

CoefficientField two_point_coefficients(const Box& b, std::mt19937_64& rng, double lo, double hi) {
  std::bernoulli_distribution coin(0.5);
  CoefficientField a(b);
  for (auto& v : a.diag) v = coin(rng) ? hi : lo;
  return a;
}

Direction random_direction(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Direction xi(d);
  for (auto& v : xi) v = n(rng);
  return xi;
}

double norm2(const Direction& xi) {
  double s = 0.0;
  for (double v : xi) s += v * v;
  return s;
}

double mean_sq(const VectorField& F) { return inner(F, F) / static_cast<double>(F.box.size()); }

SolverConfig tight() {
  SolverConfig c;
  c.tol = 1e-12;
  return c;
}

}  // namespace

TEST(Corrector, ConstantCoefficientsGiveZero) {
  const Box b(2, 8);
  auto phi = solve_corrector(CoefficientField(b, 0.4), {1.0, 0.5}, SolverConfig{});
  for (double v : phi.value.values) EXPECT_EQ(v, 0.0);
}

TEST(Corrector, RejectsZeroDirection) {
  const Box b(2, 4);
  EXPECT_THROW(solve_corrector(CoefficientField(b, 0.4), {0.0, 0.0}, SolverConfig{}), LatticeError);
}

TEST(Corrector, OneDimensionalClosedForm) {
  std::mt19937_64 rng(61);
  const Box b(1, 40);
  const auto a = two_point_coefficients(b, rng, 0.25, 0.75);
  double inv = 0.0;
  for (double v : a.diag) inv += 1.0 / v;
  const double a0 = static_cast<double>(b.size()) / inv;
  // phi(x) = sum_{y<x} (a0/a(y) - 1), then centered
  ScalarField ref(b);
  for (int x = 1; x < 40; ++x) ref[x] = ref[x - 1] + a0 / a.diag[x - 1] - 1.0;
  const double m = mean(ref);
  for (auto& v : ref.values) v -= m;
  auto phi = solve_corrector(a, {1.0}, tight());
  for (int x = 0; x < 40; ++x) EXPECT_NEAR(phi.value[x], ref[x], 1e-9);
  const auto A = ahom_cell(a, tight());
  EXPECT_NEAR(A.matrix(0, 0), a0, 1e-12);
}

TEST(Corrector, MeanZeroAndResidual) {
  std::mt19937_64 rng(67);
  for (int d = 2; d <= 3; ++d) {
    const Box b(d, d == 2 ? 16 : 8);
    const auto a = random_coefficients(b, rng);
    for (int i = 0; i < d; ++i) {
      const Direction e = unit_direction(d, i);
      SolverConfig cfg;
      auto phi = solve_corrector(a, e, cfg);
      EXPECT_LE(std::abs(mean(phi.value)), 1e-12);
      const auto r = div_star(corrected_flux(a, phi.value, e));
      EXPECT_LE(norm_l2(r) / norm_l2(div_star_coefficient(a, e)), cfg.tol);
    }
  }
}

TEST(Corrector, PerSampleEnergyBounds) {
  std::mt19937_64 rng(71);
  const double lambda = 0.2;
  const double bound = (1.0 - lambda * lambda) / (lambda * lambda);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 2 + trial % 2;
    const Box b(d, d == 2 ? 12 : 6);
    const auto a = random_coefficients(b, rng, lambda);
    const Direction xi = random_direction(d, rng);
    auto phi = solve_corrector(a, xi, SolverConfig{});
    const auto g = grad(phi.value);
    EXPECT_LE(mean_sq(g), bound * norm2(xi));
    VectorField gx = g;
    for (Site x = 0; x < b.size(); ++x)
      for (int i = 0; i < d; ++i) gx(x, i) += xi[i];
    EXPECT_LE(mean_sq(gx), norm2(xi) / (lambda * lambda));
  }
}

TEST(Corrector, LinearInDirection) {
  std::mt19937_64 rng(73);
  const Box b(2, 16);
  const auto a = random_coefficients(b, rng);
  const SolverConfig cfg = tight();
  const Direction xi = random_direction(2, rng), eta = random_direction(2, rng);
  const Direction sum{xi[0] + eta[0], xi[1] + eta[1]};
  const auto p1 = solve_corrector(a, xi, cfg).value;
  const auto p2 = solve_corrector(a, eta, cfg).value;
  const auto p3 = solve_corrector(a, sum, cfg).value;
  double diff = 0.0, scale = 0.0;
  for (Site x = 0; x < b.size(); ++x) {
    diff += std::pow(p3[x] - p1[x] - p2[x], 2);
    scale += p3[x] * p3[x];
  }
  // residual tolerance on the operator maps to a field error bounded by its conditioning
  EXPECT_LE(std::sqrt(diff), 1e3 * cfg.tol * (std::sqrt(scale) + 1.0));
}

TEST(Flux, ZeroForConstantCoefficients) {
  const Box b(2, 8);
  const CoefficientField a(b, 0.6);
  const Direction e{1.0, 0.0};
  const auto q = flux(a, solve_corrector(a, e, SolverConfig{}).value, e);
  for (double v : q.values) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Flux, MeanZeroAndDivergenceFree) {
  std::mt19937_64 rng(79);
  for (int trial = 0; trial < 10; ++trial) {
    const Box b(2, 16);
    const auto a = random_coefficients(b, rng);
    const Direction xi = random_direction(2, rng);
    SolverConfig cfg;
    const auto phi = solve_corrector(a, xi, cfg).value;
    const auto q = flux(a, phi, xi);
    for (double m : component_means(q)) EXPECT_LE(std::abs(m), 1e-15);
    EXPECT_LE(norm_l2(div_star(q)), 10.0 * cfg.tol * norm_l2(corrected_flux(a, phi, xi)));
  }
}

TEST(FluxCorrector, TrivialCases) {
  const Box b2(2, 8);
  const auto s = solve_flux_corrector(VectorField(b2), SolverConfig{}).value;
  for (double v : s.raw()) EXPECT_EQ(v, 0.0);
  std::mt19937_64 rng(83);
  const Box b1(1, 16);
  const auto a = random_coefficients(b1, rng);
  const auto phi = solve_corrector(a, {1.0}, SolverConfig{}).value;
  const auto s1 = solve_flux_corrector(flux(a, phi, {1.0}), SolverConfig{}).value;
  for (double v : s1.raw()) EXPECT_EQ(v, 0.0);
}

TEST(FluxCorrector, RejectsNonzeroMean) {
  const Box b(2, 8);
  VectorField q(b);
  q(3, 0) = 1.0;
  EXPECT_THROW(solve_flux_corrector(q, SolverConfig{}), SolverError);
}

TEST(FluxCorrector, DivergenceIdentity) {
  std::mt19937_64 rng(89);
  for (int trial = 0; trial < 5; ++trial) {
    const Box b(2, 32);
    const auto a = two_point_coefficients(b, rng, 0.25, 0.75);
    const auto set = corrector_set(a, trial % 2, SolverConfig{});
    for (Site x = 0; x < b.size(); x += 7)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) EXPECT_EQ(set.sigma(x, j, k), -set.sigma(x, k, j));
    const auto r = div_star(set.sigma);
    double err = 0.0;
    for (std::size_t k = 0; k < r.values.size(); ++k) err += std::pow(r.values[k] - set.q.values[k], 2);
    EXPECT_LE(std::sqrt(err) / norm_l2(set.q), 1e-7);
  }
}

TEST(FluxCorrector, ThreeDimensionalIdentityAndSpectralPath) {
  std::mt19937_64 rng(97);
  const Box b(3, 8);
  const auto a = random_coefficients(b, rng);
  const auto set = corrector_set(a, 1, tight());
  const auto r = div_star(set.sigma);
  double err = 0.0;
  for (std::size_t k = 0; k < r.values.size(); ++k) err += std::pow(r.values[k] - set.q.values[k], 2);
  EXPECT_LE(std::sqrt(err) / norm_l2(set.q), 1e-7);
  const auto spectral = solve_flux_corrector(set.q, tight(), PoissonMethod::spectral).value;
  for (std::size_t k = 0; k < spectral.raw().size(); ++k) EXPECT_NEAR(spectral.raw()[k], set.sigma.raw()[k], 1e-9);
}

// Dense oracle on a 6x6 box: sigma_01 = pinv(div* grad) (grad_1 q_0 - grad_0 q_1).
TEST(FluxCorrector, DenseOracle) {
  std::mt19937_64 rng(101);
  const Box b(2, 6);
  const auto a = random_coefficients(b, rng);
  const auto set = corrector_set(a, 0, tight());
  const auto n = static_cast<Eigen::Index>(b.size());
  Eigen::MatrixXd D(n, n);
  for (Site c = 0; c < b.size(); ++c) {
    ScalarField e(b);
    e[c] = 1.0;
    const auto col = div_star(grad(e));
    for (Site r = 0; r < b.size(); ++r) D(r, c) = col[r];
  }
  Eigen::VectorXd rhs(n);
  for (Site x = 0; x < b.size(); ++x)
    rhs(x) = (set.q(b.forward(x, 1), 0) - set.q(x, 0)) - (set.q(b.forward(x, 0), 1) - set.q(x, 1));
  const Eigen::VectorXd s = D.completeOrthogonalDecomposition().solve(rhs);
  const double sm = s.mean();
  for (Site x = 0; x < b.size(); ++x) EXPECT_NEAR(set.sigma(x, 0, 1), s(x) - sm, 1e-9);
}

TEST(ModifiedCorrector, ConstantCoefficients) {
  const Box b(2, 8);
  auto p = solve_modified_corrector(CoefficientField(b, 0.3), {0.0, 1.0}, 5.0, SolverConfig{});
  for (double v : p.value.values) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(solve_modified_corrector(CoefficientField(b, 0.3), {0.0, 1.0}, -1.0, SolverConfig{}), SolverError);
}

TEST(ModifiedCorrector, ConvergesAndSatisfiesEnergyIdentity) {
  std::mt19937_64 rng(103);
  const Box b(2, 16);
  const auto a = random_coefficients(b, rng);
  const Direction xi{1.0, 0.0};
  const SolverConfig cfg = tight();
  const auto g = grad(solve_corrector(a, xi, cfg).value);
  auto dist = [&](double T) {
    const auto pT = solve_modified_corrector(a, xi, T, cfg).value;
    const auto gT = grad(pT);
    const double energy = inner(pT, pT) / T + inner(gT, corrected_flux(a, pT, xi));
    EXPECT_LE(std::abs(energy), 1e-9 * (inner(pT, pT) / T + inner(gT, gT) + 1e-300));
    EXPECT_LE((inner(pT, pT) / T + inner(gT, gT)) / b.size(), (1.0 / 0.04) * norm2(xi));
    double s = 0.0;
    for (std::size_t k = 0; k < g.values.size(); ++k) s += std::pow(gT.values[k] - g.values[k], 2);
    return std::sqrt(s);
  };
  const double d2 = dist(1e2), d4 = dist(1e4);
  EXPECT_LT(d4, d2);
  EXPECT_LT(d4, 1e-2 * norm_l2(g));
}

TEST(AhomCell, ScaledIdentity) {
  const Box b(3, 4);
  const auto A = ahom_cell(CoefficientField(b, 0.35), SolverConfig{});
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(A.matrix(j, i), i == j ? 0.35 : 0.0);
  for (double v : A.stderr_.m) EXPECT_EQ(v, 0.0);
}

TEST(AhomCell, Laminate) {
  const Box b(2, 12);
  CoefficientField a(b);
  const double g[3] = {0.3, 0.8, 0.5};
  for (Site x = 0; x < b.size(); ++x) {
    const double v = g[b.coords(x)[0] % 3 == 0 ? 0 : (b.coords(x)[0] % 3 == 1 ? 1 : 2)];
    a(x, 0) = a(x, 1) = v;
  }
  const auto A = ahom_cell(a, tight());
  const double harmonic = 3.0 / (1.0 / 0.3 + 1.0 / 0.8 + 1.0 / 0.5);
  const double arithmetic = (0.3 + 0.8 + 0.5) / 3.0;
  EXPECT_NEAR(A.matrix(0, 0), harmonic, 1e-8);
  EXPECT_NEAR(A.matrix(1, 1), arithmetic, 1e-8);
  EXPECT_NEAR(A.matrix(0, 1), 0.0, 1e-8);
  EXPECT_NEAR(A.matrix(1, 0), 0.0, 1e-8);
}

TEST(AhomCell, VoigtAndReussBounds) {
  std::mt19937_64 rng(107);
  for (int trial = 0; trial < 10; ++trial) {
    const Box b(2, 10);
    const auto a = random_coefficients(b, rng);
    const auto A = ahom_cell(a, tight());
    for (const auto& xi : probe_directions(2)) {
      double voigt = 0.0;
      for (Site x = 0; x < b.size(); ++x) voigt += a(x, 0) * xi[0] * xi[0] + a(x, 1) * xi[1] * xi[1];
      EXPECT_LE(A.matrix.quadratic_form(xi), voigt / b.size() + 1e-10);
    }
  }
}

TEST(AhomRve, ConstantAndDegenerateEnsembles) {
  const Box b(2, 8);
  const auto A = ahom_rve(EnsembleSpec::constant_field(0.45), b, 4, SolverConfig{});
  EXPECT_NEAR(A.matrix(0, 0), 0.45, 1e-15);
  EXPECT_NEAR(A.matrix(1, 1), 0.45, 1e-15);
  for (double v : A.stderr_.m) EXPECT_NEAR(v, 0.0, 1e-15);
  const auto B = ahom_rve(EnsembleSpec::two_point(0.6, 0.6, 5), b, 3, SolverConfig{});
  EXPECT_NEAR(B.matrix(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(B.matrix(0, 1), 0.0, 1e-12);
  EXPECT_THROW(ahom_rve(EnsembleSpec::constant_field(0.45), b, 1, SolverConfig{}), SolverError);
}

TEST(AhomRve, DeterministicAcrossThreadCounts) {
  const auto spec = EnsembleSpec::two_point(0.25, 0.75, 11);
  const Box b(2, 8);
  const auto A1 = ahom_rve(spec, b, 12, SolverConfig{}, 1);
  const auto A4 = ahom_rve(spec, b, 12, SolverConfig{}, 4);
  EXPECT_EQ(A1.matrix.m, A4.matrix.m);
  EXPECT_EQ(A1.stderr_.m, A4.stderr_.m);
}

TEST(AhomRve, ReportsFailingSample) {
  const auto spec = EnsembleSpec::two_point(0.25, 0.75, 11);
  SolverConfig cfg;
  cfg.max_iter = 1;
  try {
    ahom_rve(spec, Box(2, 8), 4, cfg, 2);
    FAIL() << "expected a sample failure";
  } catch (const SampleFailure& e) {
    EXPECT_EQ(e.sample, 0u);
  }
}

TEST(AhomRve, ConsistentAcrossBoxSizes) {
  const auto spec = EnsembleSpec::two_point(0.25, 0.75, 2024);
  SolverConfig cfg;
  cfg.precond = Preconditioner::spectral;
  const auto A16 = ahom_rve(spec, Box(2, 16), 48, cfg);
  const auto A32 = ahom_rve(spec, Box(2, 32), 24, cfg);
  for (std::size_t k = 0; k < 4; ++k)
    EXPECT_LE(std::abs(A16.matrix.m[k] - A32.matrix.m[k]), 3.0 * (A16.stderr_.m[k] + A32.stderr_.m[k]) + 1e-12);
}

TEST(AhomRve, StderrShrinksLikeInverseSquareRoot) {
  double small = 0.0, large = 0.0;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto spec = EnsembleSpec::two_point(0.25, 0.75, seed);
    small += ahom_rve(spec, Box(2, 8), 32, SolverConfig{}).stderr_(0, 0);
    auto shifted_spec = spec;
    shifted_spec.master_seed = seed + 1000;
    large += ahom_rve(shifted_spec, Box(2, 8), 64, SolverConfig{}).stderr_(0, 0);
  }
  const double ratio = small / large;
  EXPECT_GE(ratio, 1.2);
  EXPECT_LE(ratio, 1.9);
}

TEST(AhomProperties, IdentityPasses) {
  const auto A = ahom_cell(CoefficientField(Box(2, 4), 1.0), SolverConfig{});
  const auto r = verify_ahom_properties(A, 0.2, true);
  EXPECT_TRUE(r.all_pass());
  EXPECT_NEAR(r.ellipticity_margin, 1.0, 1e-12);
  EXPECT_EQ(r.transposition_defect, r.symmetry_defect);
}

TEST(AhomProperties, RandomEnsembles) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double lo = 0.21 + 0.01 * static_cast<double>(seed % 5);
    const auto spec = EnsembleSpec::two_point(lo, 0.95 - 0.02 * static_cast<double>(seed % 7), seed);
    const auto A = ahom_rve(spec, Box(2, 8), 8, SolverConfig{});
    const auto r = verify_ahom_properties(A, spec.lambda, true);
    EXPECT_GE(r.ellipticity_margin, spec.lambda);
    EXPECT_TRUE(r.symmetric) << r.symmetry_defect << " vs " << r.symmetry_tolerance;
    EXPECT_TRUE(r.all_pass());
  }
}
