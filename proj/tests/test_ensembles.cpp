#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "homoglab/ensembles.hpp"

using namespace homoglab;

namespace {

// Least-squares slope of y against x.
double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sx += x[k];
    sy += y[k];
    sxx += x[k] * x[k];
    sxy += x[k] * y[k];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST(Rng, StreamsAreDeterministicAndDistinct) {
  EXPECT_EQ(stream_draw(42, 7), stream_draw(42, 7));
  EXPECT_NE(stream_draw(42, 7), stream_draw(42, 8));
  std::set<std::uint64_t> keys;
  for (std::uint64_t i = 0; i < 1000; ++i) keys.insert(sample_key(9, i));
  EXPECT_EQ(keys.size(), 1000u);
  CounterStream s(123);
  for (int k = 0; k < 1000; ++k) {
    const double u = s.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Sample, ConstantKind) {
  const auto a = sample(EnsembleSpec::constant_field(0.7), Box(3, 4), SampleId{3});
  for (double v : a.diag) EXPECT_EQ(v, 0.7);
}

TEST(Sample, TwoPointLawOfLargeNumbers) {
  const auto spec = EnsembleSpec::two_point(0.25, 0.75, 77);
  const Box b(2, 1000);
  const auto a = sample(spec, b, SampleId{0});
  double s = 0.0;
  for (Site x = 0; x < b.size(); ++x) {
    EXPECT_TRUE(a(x, 0) == 0.25 || a(x, 0) == 0.75);
    s += a(x, 0);
  }
  const double m = s / static_cast<double>(b.size());
  const double stderr_ = 0.25 / std::sqrt(static_cast<double>(b.size()));
  EXPECT_LE(std::abs(m - 0.5), 3.0 * stderr_);
}

TEST(Sample, UniformEntriesStayInside) {
  EnsembleSpec spec;
  spec.kind = EnsembleKind::iid_uniform;
  spec.low = 0.3;
  spec.high = 0.9;
  spec.master_seed = 5;
  const auto a = sample(spec, Box(3, 10), SampleId{2});
  EXPECT_TRUE(a.within(spec.lambda));
  for (double v : a.diag) {
    EXPECT_GE(v, 0.3);
    EXPECT_LT(v, 0.9);
  }
}

TEST(Sample, DeterministicInSeedAndIndex) {
  auto spec = EnsembleSpec::two_point(0.25, 0.75, 1234);
  const Box b(2, 16);
  EXPECT_EQ(sample(spec, b, SampleId{5}).diag, sample(spec, b, SampleId{5}).diag);
  EXPECT_NE(sample(spec, b, SampleId{5}).diag, sample(spec, b, SampleId{6}).diag);
  auto other = spec;
  other.master_seed = 1235;
  EXPECT_NE(sample(spec, b, SampleId{5}).diag, sample(other, b, SampleId{5}).diag);
}

TEST(Sample, ValidationErrors) {
  const Box b(2, 8);
  EXPECT_THROW(sample(EnsembleSpec::two_point(0.1, 0.75, 1), b, SampleId{}), EnsembleError);
  EXPECT_THROW(sample(EnsembleSpec::two_point(0.2, 0.75, 1), b, SampleId{}), EnsembleError);
  EXPECT_THROW(sample(EnsembleSpec::two_point(0.25, 1.0, 1), b, SampleId{}), EnsembleError);
  EXPECT_THROW(sample(EnsembleSpec::two_point(0.8, 0.3, 1), b, SampleId{}), EnsembleError);
  EnsembleSpec tile;
  tile.kind = EnsembleKind::periodic_tile;
  tile.tile_side = 2;
  EXPECT_THROW(sample(tile, b, SampleId{}), EnsembleError);
  EnsembleSpec corr = EnsembleSpec::two_point(0.25, 0.75, 1);
  corr.kind = EnsembleKind::correlated_two_point;
  corr.radius = 4;
  EXPECT_THROW(sample(corr, b, SampleId{}), EnsembleError);
  corr.radius = 1;
  corr.decay = 0.0;
  EXPECT_THROW(sample(corr, b, SampleId{}), EnsembleError);
}

TEST(Sample, PointMassKernelReproducesIid) {
  auto iid = EnsembleSpec::two_point(0.25, 0.75, 99);
  auto corr = iid;
  corr.kind = EnsembleKind::correlated_two_point;
  corr.radius = 0;
  const Box b(3, 6);
  EXPECT_EQ(sample(iid, b, SampleId{4}).diag, sample(corr, b, SampleId{4}).diag);
}

TEST(Sample, CorrelatedEntriesAreConvexCombinations) {
  auto corr = EnsembleSpec::two_point(0.25, 0.75, 3);
  corr.kind = EnsembleKind::correlated_two_point;
  corr.radius = 2;
  corr.decay = 1.5;
  const auto a = sample(corr, Box(2, 16), SampleId{1});
  for (double v : a.diag) {
    EXPECT_GE(v, 0.25 - 1e-15);
    EXPECT_LE(v, 0.75 + 1e-15);
  }
}

TEST(Sample, PeriodicTile) {
  EnsembleSpec tile;
  tile.kind = EnsembleKind::periodic_tile;
  tile.tile_side = 2;
  tile.tile = {0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.35};
  const Box b(2, 6);
  const auto a = sample(tile, b, SampleId{});
  const auto c = b.coords(b.index({3, 2, 0}));
  const std::size_t t = static_cast<std::size_t>(c[0] % 2 + 2 * (c[1] % 2));
  EXPECT_EQ(a(b.index({3, 2, 0}), 0), tile.tile[2 * t]);
  EXPECT_EQ(a(b.index({3, 2, 0}), 1), tile.tile[2 * t + 1]);
  EXPECT_THROW(sample(tile, Box(2, 5), SampleId{}), EnsembleError);
}

TEST(Sample, StationarityUnderShifts) {
  for (auto kind : {EnsembleKind::iid_two_point, EnsembleKind::correlated_two_point}) {
    auto spec = EnsembleSpec::two_point(0.25, 0.75, 31);
    spec.kind = kind;
    spec.radius = 1;
    const Box b(2, 8);
    const Site x = b.index({1, 2, 0});
    const std::array<int, 3> z{3, 5, 0};
    const int n = 500;
    double s0 = 0, s1 = 0, q0 = 0, q1 = 0;
    for (int k = 0; k < n; ++k) {
      const auto a = sample(spec, b, SampleId{static_cast<std::uint64_t>(k)});
      const double v0 = a(x, 0);
      const double v1 = shifted(a, z)(x, 0);
      s0 += v0;
      s1 += v1;
      q0 += v0 * v0;
      q1 += v1 * v1;
    }
    const double m0 = s0 / n, m1 = s1 / n;
    const double var0 = q0 / n - m0 * m0, var1 = q1 / n - m1 * m1;
    const double se = std::sqrt((var0 + var1) / n);
    EXPECT_LE(std::abs(m0 - m1), 3.0 * se);
    // variance of the variance estimate: bounded by E[v^4]/n, v in [0.25, 0.75]
    EXPECT_LE(std::abs(var0 - var1), 3.0 * 2.0 * 0.0625 / std::sqrt(static_cast<double>(n)));
  }
}

TEST(SiteVariants, Enumeration) {
  const auto spec = EnsembleSpec::two_point(0.25, 0.75, 8);
  const Box b(2, 6);
  const auto a = sample(spec, b, SampleId{1});
  const Site x = 9;
  const auto vars = site_variants(spec, a, x);
  ASSERT_EQ(vars.size(), 4u);
  double lo = 1.0, hi = 0.0;
  for (const auto& v : vars) {
    for (Site y = 0; y < b.size(); ++y)
      if (y != x)
        for (int i = 0; i < 2; ++i) EXPECT_EQ(v(y, i), a(y, i));
    lo = std::min(lo, v(x, 0));
    hi = std::max(hi, v(x, 0));
  }
  EXPECT_EQ(hi - lo, 0.5);
  EnsembleSpec uni;
  uni.kind = EnsembleKind::iid_uniform;
  EXPECT_THROW(site_variants(uni, a, x), EnsembleError);
}

TEST(SpatialAverage, Basics) {
  const Box b(2, 12);
  EXPECT_DOUBLE_EQ(spatial_average_observable(CoefficientField(b, 0.4), 5), 0.4);
  const auto a = sample(EnsembleSpec::two_point(0.25, 0.75, 8), b, SampleId{1});
  double s = 0;
  for (Site x = 0; x < b.size(); ++x) s += a(x, 0);
  EXPECT_NEAR(spatial_average_observable(a, 12), s / b.size(), 1e-15);
  EXPECT_THROW(spatial_average_observable(a, 13), EnsembleError);
}

TEST(SpatialAverage, CentralLimitRate) {
  const auto spec = EnsembleSpec::two_point(0.25, 0.75, 2718);
  const Box b(2, 32);
  const std::vector<int> radii{4, 8, 16, 32};
  std::vector<double> lr, le;
  for (int R : radii) {
    double ss = 0.0;
    for (std::uint64_t k = 0; k < 200; ++k) {
      const double e = spatial_average_observable(sample(spec, b, SampleId{k}), R) - spec.expected_entry();
      ss += e * e;
    }
    lr.push_back(std::log(R));
    le.push_back(0.5 * std::log(ss / 200.0));
  }
  EXPECT_NEAR(slope(lr, le), -1.0, 0.15);
}

TEST(EnsembleJson, RoundTrip) {
  auto spec = EnsembleSpec::two_point(0.3, 0.6, 17);
  spec.kind = EnsembleKind::correlated_two_point;
  spec.radius = 2;
  spec.decay = 0.5;
  const auto back = ensemble_from_json(to_json(spec));
  EXPECT_EQ(back.kind, spec.kind);
  EXPECT_EQ(back.alpha, 0.3);
  EXPECT_EQ(back.beta, 0.6);
  EXPECT_EQ(back.radius, 2);
  EXPECT_EQ(back.master_seed, 17u);
  EXPECT_THROW(ensemble_from_json(nlohmann::json{{"kind", "gaussian"}}), EnsembleError);
  EXPECT_THROW(ensemble_from_json(nlohmann::json::array()), EnsembleError);
}
