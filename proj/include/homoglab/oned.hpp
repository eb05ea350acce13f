#ifndef HOMOGLAB_ONED_HPP
#define HOMOGLAB_ONED_HPP

// One-dimensional periodic homogenization with explicit formulas.
//
//   -(a(x/eps) u')' = f on (0, L),  u(0) = u(L) = 0
//
// has the solution u(x) = int_0^x (c - F(t)) / a(t/eps) dt with
// F(x) = int_0^x f and c = int_0^L F/a_eps / int_0^L 1/a_eps. The flux
// j = a_eps u' = c - F is continuous even when a is not. All integrals are
// composite trapezoid rules on a grid with a fixed number of nodes per period
// eps, so microstructure breakpoints at multiples of eps / nodes_per_period
// fall on grid nodes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "homoglab/fit.hpp"

namespace homoglab {

class OneDError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Fn1 = std::function<double(double)>;

struct Profile1D {
  Fn1 a_unit;                  // 1-periodic conductivity
  Fn1 f;                       // right-hand side on (0, L)
  double length = 1.0;
  double eps = 1.0 / 16.0;     // period; length / eps must be an integer
  int nodes_per_period = 256;
};

/// The coefficient and load of the oscillating example: a = 2 + sin(2 pi y), f = -3 (2x - 1).
inline Profile1D sine_profile(double eps, int nodes_per_period = 256) {
  return {[](double y) { return 2.0 + std::sin(2.0 * std::numbers::pi * y); },
          [](double x) { return -3.0 * (2.0 * x - 1.0); }, 1.0, eps, nodes_per_period};
}

/// Values of a on M equispaced points of one period.
inline std::vector<double> sample_period(const Fn1& a, int M) {
  if (M < 1) throw OneDError("need at least one quadrature point per period");
  std::vector<double> v(M);
  for (int k = 0; k < M; ++k) {
    v[k] = a(static_cast<double>(k) / M);
    if (!(v[k] > 0.0) || !std::isfinite(v[k])) throw OneDError("conductivity must be positive and finite");
  }
  return v;
}

/// (int_0^1 1/a)^{-1} by the periodic trapezoid rule on M points.
inline double harmonic_mean(const Fn1& a, int M = 4096) {
  const auto v = sample_period(a, M);
  double s = 0.0;
  for (double x : v) s += 1.0 / x;
  return static_cast<double>(M) / s;
}

/// Ellipticity contrast min a / max a over the sample points. The problem
/// with a / max a and f / max a has the same solution, so this is the
/// ellipticity constant of the normalized coefficient with values in (lambda, 1].
inline double ellipticity_contrast(const Fn1& a, int M = 4096) {
  const auto v = sample_period(a, M);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *lo / *hi;
}

/// Corrector phi(y) = int_0^y (a0/a - 1) on the nodes y_k = k/M, k = 0..M.
struct Corrector1D {
  double a0 = 0.0;
  std::vector<double> phi;   // M + 1 values, phi[0] = 0, phi[M] = 0 up to rounding
  std::vector<double> dphi;  // a0/a(y_k) - 1, the exact derivative at the nodes
  int nodes() const { return static_cast<int>(phi.size()) - 1; }
  double max_abs() const {
    double m = 0.0;
    for (double v : phi) m = std::max(m, std::abs(v));
    return m;
  }
};

inline Corrector1D corrector_1d(const Fn1& a, int M = 4096) {
  auto v = sample_period(a, M);
  v.push_back(v.front());
  Corrector1D c;
  double s = 0.0;
  for (int k = 0; k < M; ++k) s += 1.0 / v[k];
  c.a0 = static_cast<double>(M) / s;
  c.phi.assign(M + 1, 0.0);
  c.dphi.resize(M + 1);
  for (int k = 0; k <= M; ++k) c.dphi[k] = c.a0 / v[k] - 1.0;
  const double h = 1.0 / M;
  for (int k = 1; k <= M; ++k) c.phi[k] = c.phi[k - 1] + 0.5 * h * (c.dphi[k - 1] + c.dphi[k]);
  return c;
}

/// A solution on the nodes x_k = k h, k = 0..n, with its exact nodal derivative.
struct Solution1D {
  double h = 0.0;
  double flux_constant = 0.0;  // c in j = c - F
  std::vector<double> x, u, du;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::size_t period_count(const Profile1D& p) {
  if (!(p.length > 0.0) || !(p.eps > 0.0)) throw OneDError("length and eps must be positive");
  const double r = p.length / p.eps;
  const auto n = static_cast<std::size_t>(std::llround(r));
  if (n < 1 || std::abs(r - static_cast<double>(n)) > 1e-9 * r)
    throw OneDError("length / eps must be a positive integer");
  return n;
}

struct Grid1D {
  double h;
  std::vector<double> x;
  std::vector<std::string> warnings;
};

inline Grid1D make_grid(const Profile1D& p) {
  if (p.nodes_per_period < 8) throw OneDError("grid under-resolves eps: fewer than 8 nodes per period");
  Grid1D g;
  if (p.nodes_per_period < 32) g.warnings.push_back("fewer than 32 nodes per period; quadrature error may dominate");
  const std::size_t n = period_count(p) * static_cast<std::size_t>(p.nodes_per_period);
  g.h = p.length / static_cast<double>(n);
  g.x.resize(n + 1);
  for (std::size_t k = 0; k <= n; ++k) g.x[k] = g.h * static_cast<double>(k);
  return g;
}

inline std::vector<double> cumulative_trapezoid(const std::vector<double>& g, double h) {
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t k = 1; k < g.size(); ++k) out[k] = out[k - 1] + 0.5 * h * (g[k - 1] + g[k]);
  return out;
}

inline double trapezoid(const std::vector<double>& g, double h) {
  double s = 0.5 * (g.front() + g.back());
  for (std::size_t k = 1; k + 1 < g.size(); ++k) s += g[k];
  return s * h;
}

/// Solves -(k(x) u')' = f given 1/k at the nodes.
inline Solution1D solve_with_inverse(const Grid1D& g, const std::vector<double>& inv_k, const Fn1& f) {
  const std::size_t n = g.x.size();
  std::vector<double> fv(n);
  for (std::size_t k = 0; k < n; ++k) fv[k] = f(g.x[k]);
  const auto F = cumulative_trapezoid(fv, g.h);
  std::vector<double> Fk(n);
  for (std::size_t k = 0; k < n; ++k) Fk[k] = F[k] * inv_k[k];
  Solution1D s;
  s.h = g.h;
  s.x = g.x;
  s.warnings = g.warnings;
  s.flux_constant = trapezoid(Fk, g.h) / trapezoid(inv_k, g.h);
  s.du.resize(n);
  for (std::size_t k = 0; k < n; ++k) s.du[k] = (s.flux_constant - F[k]) * inv_k[k];
  s.u = cumulative_trapezoid(s.du, g.h);
  s.u.back() = 0.0;
  return s;
}

}  // namespace detail

/// Heterogeneous solution u_eps.
inline Solution1D solve_explicit(const Profile1D& p) {
  const auto g = detail::make_grid(p);
  std::vector<double> inv(g.x.size());
  for (std::size_t k = 0; k < g.x.size(); ++k) {
    const double y = static_cast<double>(k % static_cast<std::size_t>(p.nodes_per_period)) / p.nodes_per_period;
    const double a = p.a_unit(y);
    if (!(a > 0.0)) throw OneDError("conductivity must be positive");
    inv[k] = 1.0 / a;
  }
  return detail::solve_with_inverse(g, inv, p.f);
}

/// Homogenized solution u_0 with a0 the harmonic mean on the same quadrature points.
inline Solution1D solve_homogenized_1d(const Profile1D& p) {
  const auto g = detail::make_grid(p);
  const double a0 = harmonic_mean(p.a_unit, p.nodes_per_period);
  return detail::solve_with_inverse(g, std::vector<double>(g.x.size(), 1.0 / a0), p.f);
}

inline double max_abs_difference(const Solution1D& a, const Solution1D& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.u.size(); ++k) m = std::max(m, std::abs(a.u[k] - b.u[k]));
  return m;
}

struct TwoScale1D {
  double eps = 0.0;
  double error = 0.0;           // int |u - v|^2 + |u' - v'|^2
  double lambda = 0.0;          // ellipticity contrast
  double max_phi = 0.0;
  double u0_second = 0.0;       // int |u0''|^2
  double bound_rhs = 0.0;       // (4/lambda) max|phi|^2 eps^2 int |u0''|^2
  double ratio = 0.0;
  double bound_rhs_sq = 0.0;    // (4/lambda^2) max|phi|^2 eps^2 int |u0''|^2
  double ratio_sq = 0.0;
};

/// E(eps) for v = u0 + eps phi(x/eps) u0' against both bound constants.
/// Requires the unit interval.
inline TwoScale1D two_scale_check_1d(const Profile1D& p) {
  if (std::abs(p.length - 1.0) > 1e-15) throw OneDError("the two-scale check is posed on (0, 1)");
  const auto ue = solve_explicit(p);
  const auto u0 = solve_homogenized_1d(p);
  const int P = p.nodes_per_period;
  const auto cor = corrector_1d(p.a_unit, P);
  const std::size_t n = ue.x.size();
  std::vector<double> e(n), d2(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto m = static_cast<int>(k % static_cast<std::size_t>(P));
    const double u0pp = -p.f(ue.x[k]) / cor.a0;
    const double v = u0.u[k] + p.eps * cor.phi[m] * u0.du[k];
    const double dv = u0.du[k] * (1.0 + cor.dphi[m]) + p.eps * cor.phi[m] * u0pp;
    e[k] = std::pow(ue.u[k] - v, 2) + std::pow(ue.du[k] - dv, 2);
    d2[k] = u0pp * u0pp;
  }
  TwoScale1D r;
  r.eps = p.eps;
  r.error = detail::trapezoid(e, ue.h);
  r.lambda = ellipticity_contrast(p.a_unit, P);
  r.max_phi = cor.max_abs();
  r.u0_second = detail::trapezoid(d2, ue.h);
  const double base = r.max_phi * r.max_phi * p.eps * p.eps * r.u0_second;
  r.bound_rhs = 4.0 / r.lambda * base;
  r.bound_rhs_sq = 4.0 / (r.lambda * r.lambda) * base;
  r.ratio = r.bound_rhs > 0.0 ? r.error / r.bound_rhs : 0.0;
  r.ratio_sq = r.bound_rhs_sq > 0.0 ? r.error / r.bound_rhs_sq : 0.0;
  return r;
}

struct EpsRow {
  double eps = 0.0;
  double sup_error = 0.0;
  TwoScale1D two_scale;
  double strong_gradient_error = 0.0;       // int |u_eps' - u0'|^2
  std::vector<double> weak_gradient_errors;  // |int (u_eps' - u0') test_k|
};

struct OneDReport {
  std::vector<EpsRow> rows;
  double a0 = 0.0;
  LineFit sup_rate;                 // log sup_error vs log eps
  std::vector<double> halving_ratios;  // E(eps) / E(eps/2), consecutive in the list
};

/// Smooth test functions for the weak convergence check.
inline std::vector<Fn1> weak_test_functions() {
  const double pi = std::numbers::pi;
  return {[](double x) { return 1.0 + 0.0 * x; }, [](double x) { return x * x; },
          [pi](double x) { return std::sin(pi * x); }, [pi](double x) { return std::cos(3.0 * pi * x); },
          [](double x) { return std::exp(x); }};
}

/// Runs the whole pipeline for each eps (descending): sup error and its
/// fitted rate, the two-scale error and bound, and gradient convergence.
inline OneDReport oned_pipeline(Profile1D base, const std::vector<double>& eps_list) {
  if (eps_list.size() < 2) throw OneDError("need at least two eps values");
  OneDReport rep;
  rep.a0 = harmonic_mean(base.a_unit, base.nodes_per_period);
  const auto tests = weak_test_functions();
  std::vector<double> es, sups;
  for (double eps : eps_list) {
    base.eps = eps;
    const auto ue = solve_explicit(base);
    const auto u0 = solve_homogenized_1d(base);
    EpsRow row;
    row.eps = eps;
    row.sup_error = max_abs_difference(ue, u0);
    if (base.length == 1.0) row.two_scale = two_scale_check_1d(base);
    std::vector<double> g(ue.x.size());
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = std::pow(ue.du[k] - u0.du[k], 2);
    row.strong_gradient_error = detail::trapezoid(g, ue.h);
    for (const auto& t : tests) {
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = (ue.du[k] - u0.du[k]) * t(ue.x[k]);
      row.weak_gradient_errors.push_back(std::abs(detail::trapezoid(g, ue.h)));
    }
    es.push_back(eps);
    sups.push_back(row.sup_error);
    rep.rows.push_back(std::move(row));
  }
  rep.sup_rate = fit_loglog(es, sups);
  for (std::size_t k = 0; k + 1 < rep.rows.size(); ++k)
    rep.halving_ratios.push_back(rep.rows[k].two_scale.error / rep.rows[k + 1].two_scale.error);
  return rep;
}

struct OscillationReport {
  std::vector<double> eps, error;
  double fitted_constant = 0.0;  // max error / ((b - a + 1) eps)
};

/// |int_a^b F(x/eps, x) - Fbar(x) dx| with Fbar(x) = int_0^1 F(y, x) dy, for
/// F 1-periodic in its first argument.
inline OscillationReport oscillatory_average_check(const std::function<double(double, double)>& F,
                                                   const std::vector<double>& eps_list, double a = 0.0,
                                                   double b = 1.0, int nodes_per_period = 64,
                                                   int mean_points = 64) {
  if (!(b > a)) throw OneDError("interval must have b > a");
  OscillationReport r;
  for (double eps : eps_list) {
    if (!(eps > 0.0)) throw OneDError("eps must be positive");
    const auto n = static_cast<std::size_t>(std::ceil((b - a) / eps - 1e-9)) * static_cast<std::size_t>(nodes_per_period);
    const double h = (b - a) / static_cast<double>(n);
    std::vector<double> g(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
      const double x = a + h * static_cast<double>(k);
      double bar = 0.0;
      for (int m = 0; m < mean_points; ++m) bar += F(static_cast<double>(m) / mean_points, x);
      g[k] = F(x / eps, x) - bar / mean_points;
    }
    const double err = std::abs(detail::trapezoid(g, h));
    r.eps.push_back(eps);
    r.error.push_back(err);
    r.fitted_constant = std::max(r.fitted_constant, err / ((b - a + 1.0) * eps));
  }
  return r;
}

struct MaxValueReport {
  double a0 = 0.0;
  double limit = 0.0;               // 1 / (8 a0)
  std::vector<double> eps, max_u, constant;  // constant = |max u - limit| / eps
};

/// f = 1 on (0, 1): max u_eps against 1/(8 a0).
inline MaxValueReport max_value_check(const Fn1& a_unit, const std::vector<double>& eps_list, int nodes_per_period = 256) {
  MaxValueReport r;
  r.a0 = harmonic_mean(a_unit, nodes_per_period);
  r.limit = 1.0 / (8.0 * r.a0);
  for (double eps : eps_list) {
    const Profile1D p{a_unit, [](double) { return 1.0; }, 1.0, eps, nodes_per_period};
    const auto s = solve_explicit(p);
    const double m = *std::max_element(s.u.begin(), s.u.end());
    r.eps.push_back(eps);
    r.max_u.push_back(m);
    r.constant.push_back(std::abs(m - r.limit) / eps);
  }
  return r;
}

}  // namespace homoglab

#endif  // HOMOGLAB_ONED_HPP
