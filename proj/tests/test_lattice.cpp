#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "homoglab/field_io.hpp"
#include "homoglab/lattice.hpp"

using namespace homoglab;

namespace {

ScalarField random_scalar(const Box& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ScalarField f(b);
  for (auto& v : f.values) v = u(rng);
  return f;
}

VectorField random_vector(const Box& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VectorField f(b);
  for (auto& v : f.values) v = u(rng);
  return f;
}

CoefficientField random_coefficients(const Box& b, std::mt19937_64& rng, double lambda) {
  std::uniform_real_distribution<double> u(lambda + 1e-3, 1.0 - 1e-3);
  CoefficientField a(b);
  for (auto& v : a.diag) v = u(rng);
  return a;
}

}  // namespace

TEST(Box, IndexingIsABijection) {
  for (int d = 1; d <= 3; ++d) {
    const Box b(d, 5);
    for (Site x = 0; x < b.size(); ++x) EXPECT_EQ(b.index(b.coords(x)), x);
  }
  const Box b(3, 4);
  EXPECT_EQ(b.index({1, 2, 3}), 1u + 2u * 4u + 3u * 16u);
}

TEST(Box, RejectsUnsupportedShapes) {
  EXPECT_THROW(Box(0, 4), LatticeError);
  EXPECT_THROW(Box(4, 4), LatticeError);
  EXPECT_THROW(Box(2, 1), LatticeError);
}

TEST(Grad, ConstantFieldHasZeroGradient) {
  const Box b(2, 6);
  const auto g = grad(ScalarField(b, 3.7));
  for (double v : g.values) EXPECT_EQ(v, 0.0);
}

TEST(Grad, OneDimensionalExample) {
  const Box b(1, 3);
  const auto g = grad(ScalarField(b, {0.0, 1.0, 0.0}));
  EXPECT_EQ(g.values, (std::vector<double>{1.0, -1.0, 0.0}));
}

TEST(Grad, MatchesNaiveIndexArithmetic) {
  std::mt19937_64 rng(7);
  const int L = 4;
  const Box b(3, L);
  const auto u = random_scalar(b, rng);
  const auto g = grad(u);
  for (int z = 0; z < L; ++z)
    for (int y = 0; y < L; ++y)
      for (int x = 0; x < L; ++x) {
        const int site = x + L * y + L * L * z;
        const int nb[3] = {(x + 1) % L + L * y + L * L * z, x + L * ((y + 1) % L) + L * L * z,
                           x + L * y + L * L * ((z + 1) % L)};
        for (int i = 0; i < 3; ++i) EXPECT_EQ(g(site, i), u[nb[i]] - u[site]);
      }
}

TEST(DivStar, ZeroAndOneDimensionalExample) {
  const Box b(1, 3);
  for (double v : div_star(VectorField(b)).values) EXPECT_EQ(v, 0.0);
  VectorField F(b);
  F(0, 0) = 1.0;
  EXPECT_EQ(div_star(F).values, (std::vector<double>{-1.0, 1.0, 0.0}));
}

TEST(DivStar, SummationByParts) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Box b(1 + trial % 3, 3 + trial % 5);
    const auto u = random_scalar(b, rng);
    const auto F = random_vector(b, rng);
    const double lhs = inner(u, div_star(F));
    const double rhs = inner(grad(u), F);
    EXPECT_LE(std::abs(lhs - rhs), 1e-13 * (std::abs(lhs) + std::abs(rhs)) + 1e-12 * (norm_l2(u) * norm_l2(F) + 1));
  }
}

TEST(Mean, Basics) {
  std::mt19937_64 rng(3);
  const Box b(2, 7);
  EXPECT_DOUBLE_EQ(mean(ScalarField(b, 2.5)), 2.5);
  const auto u = random_scalar(b, rng);
  for (double m : component_means(grad(u))) EXPECT_LE(std::abs(m), 1e-13 * (norm_l2(u) + 1.0));
  EXPECT_NEAR(inner(u, u), norm_l2(u) * norm_l2(u), 1e-12);
}

TEST(ApplyElliptic, KernelAndIdentityCoefficients) {
  std::mt19937_64 rng(5);
  const Box b(2, 5);
  const auto a = random_coefficients(b, rng, 0.2);
  for (double v : apply_elliptic(a, ScalarField(b, 1.25)).values) EXPECT_NEAR(v, 0.0, 1e-15);
  const auto u = random_scalar(b, rng);
  EXPECT_EQ(apply_elliptic(CoefficientField(b, 1.0), u).values, div_star(grad(u)).values);
}

TEST(ApplyElliptic, RejectsBoxMismatch) {
  EXPECT_THROW(apply_elliptic(CoefficientField(Box(2, 4)), ScalarField(Box(2, 5))), LatticeError);
}

// Dense oracle: assemble the operator column by column on a 3x3 box and
// compare its spectrum on mean-zero fields with the Laplacian's.
TEST(ApplyElliptic, DenseSpectrumOracle) {
  std::mt19937_64 rng(17);
  const double lambda = 0.2;
  for (int d = 2; d <= 3; ++d) {
    const Box b(d, 3);
    const auto a = random_coefficients(b, rng, lambda);
    const auto n = static_cast<Eigen::Index>(b.size());
    Eigen::MatrixXd A(n, n), D(n, n);
    for (Site c = 0; c < b.size(); ++c) {
      ScalarField e(b);
      e[c] = 1.0;
      const auto col = apply_elliptic(a, e);
      const auto lap = div_star(grad(e));
      for (Site r = 0; r < b.size(); ++r) {
        A(r, c) = col[r];
        D(r, c) = lap[r];
      }
    }
    EXPECT_LE((A - A.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(A), ed(D);
    const auto& va = ea.eigenvalues();
    const auto& vd = ed.eigenvalues();
    EXPECT_NEAR(va(0), 0.0, 1e-12);  // constants
    EXPECT_GT(va(1), 0.0);
    EXPECT_GE(va(1), lambda * vd(1) - 1e-12);
    EXPECT_LE(va(n - 1), vd(n - 1) + 1e-12);
  }
}

TEST(ApplyElliptic, SelfAdjointAndElliptic) {
  std::mt19937_64 rng(23);
  const double lambda = 0.2;
  for (int trial = 0; trial < 30; ++trial) {
    const Box b(1 + trial % 3, 4 + trial % 3);
    const auto a = random_coefficients(b, rng, lambda);
    const auto u = random_scalar(b, rng);
    const auto v = random_scalar(b, rng);
    const double uav = inner(v, apply_elliptic(a, u));
    const double vau = inner(apply_elliptic(a, v), u);
    EXPECT_LE(std::abs(uav - vau), 1e-12 * (std::abs(uav) + 1.0));
    const double energy = inner(u, apply_elliptic(a, u));
    const double g2 = inner(grad(u), grad(u));
    EXPECT_GE(energy, lambda * g2);
    EXPECT_LE(energy, g2);
  }
}

TEST(SkewField, AntisymmetricByConstruction) {
  const Box b(3, 3);
  SkewField s(b);
  s.set(4, 0, 2, 1.5);
  EXPECT_EQ(s(4, 2, 0), -1.5);
  EXPECT_EQ(s(4, 0, 0), 0.0);
  EXPECT_THROW(s.set(4, 1, 1, 2.0), LatticeError);
}

TEST(FieldIo, RoundTripIsExact) {
  std::mt19937_64 rng(29);
  for (int d = 1; d <= 3; ++d) {
    const Box b(d, 3);
    auto F = random_vector(b, rng);
    for (auto& v : F.values) v *= std::exp(30.0 * v);  // wide exponent range
    const auto table = to_table(F);
    std::stringstream ss;
    write_field_csv(ss, table);
    const auto back = read_field_csv(ss, field_header(table, "vector"));
    EXPECT_EQ(back.box, b);
    EXPECT_EQ(back.values, F.values);
  }
}
