#ifndef HOMOGLAB_ELLIPTIC_HPP
#define HOMOGLAB_ELLIPTIC_HPP

// Matrix-free solvers for symmetric positive (semi)definite lattice operators
// of the form  mass * u + div*(a grad u), plus the periodic Green's function
// and the exact heat kernel of the lattice Laplacian on the torus.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "homoglab/lattice.hpp"
#include "homoglab/spectral.hpp"

namespace homoglab {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Anchor { mean_zero, site_zero };
enum class Preconditioner { none, spectral };

struct SolverConfig {
  double tol = 1e-10;
  std::optional<std::size_t> max_iter;  // default 50 * N
  Anchor anchor = Anchor::mean_zero;
  Preconditioner precond = Preconditioner::none;
  bool record_history = false;

  void validate() const {
    if (!(tol > 0.0)) throw SolverError("solver tolerance must be positive");
  }
};

struct SolveReport {
  std::size_t iterations = 0;
  double final_relative_residual = 0.0;
  bool converged = false;
  double removed_rhs_mean = 0.0;
  /// Energy functional 0.5<u,Au> - <b,u> after each iteration (record_history only).
  std::vector<double> energy_history;
};

template <class T>
struct Solved {
  T value;
  SolveReport report;
};

/// mass * u + div*(a grad u), or mass * u + div*(grad u) when no field is set.
class EllipticOperator {
 public:
  EllipticOperator(const CoefficientField& a, double mass = 0.0) : box_(a.box), a_(&a), mass_(mass) {}
  static EllipticOperator laplacian(const Box& box, double mass = 0.0) { return EllipticOperator(box, mass); }

  const Box& box() const { return box_; }
  double mass() const { return mass_; }
  bool singular() const { return mass_ == 0.0; }

  void apply(std::span<const double> u, std::span<double> out) const {
    if (a_)
      apply_elliptic(*a_, u, out);
    else
      apply_laplacian(box_, u, out);
    if (mass_ != 0.0)
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += mass_ * u[k];
  }

  /// Mean diagonal entry per axis, used to build a constant-coefficient preconditioner.
  std::array<double, 3> mean_coefficients() const {
    std::array<double, 3> c{1.0, 1.0, 1.0};
    if (!a_) return c;
    const int d = box_.dim();
    for (int i = 0; i < d; ++i) {
      double s = 0.0;
      for (Site x = 0; x < box_.size(); ++x) s += (*a_)(x, i);
      c[i] = s / static_cast<double>(box_.size());
    }
    return c;
  }

 private:
  EllipticOperator(const Box& box, double mass) : box_(box), a_(nullptr), mass_(mass) {}
  Box box_;
  const CoefficientField* a_;
  double mass_;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline void remove_mean(std::span<double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  const double m = s / static_cast<double>(v.size());
  for (double& x : v) x -= m;
}

}  // namespace detail

/// Preconditioned conjugate gradients for an SPD operator (SPD on mean-zero
/// fields when the operator annihilates constants; then the right-hand side's
/// mean is removed and recorded in the report). Non-convergence is reported,
/// not thrown; a NaN aborts with SolverError.
template <class Operator>
Solved<ScalarField> cg_solve(const Operator& op, const ScalarField& rhs, const SolverConfig& cfg,
                             const std::optional<ScalarField>& initial = std::nullopt) {
  cfg.validate();
  const Box& box = op.box();
  require_same_box(box, rhs.box);
  const std::size_t n = box.size();
  const bool singular = op.singular();
  const std::size_t max_iter = cfg.max_iter.value_or(50 * n);

  SolveReport report;
  std::vector<double> b = rhs.values;
  if (singular) {
    report.removed_rhs_mean = mean(rhs);
    for (double& v : b) v -= report.removed_rhs_mean;
  }
  ScalarField u(box);
  if (initial) {
    require_same_box(box, initial->box);
    u.values = initial->values;
    if (singular) detail::remove_mean(u.values);
  }
  const double bnorm = std::sqrt(detail::dot(b, b));
  if (bnorm == 0.0) {
    std::fill(u.values.begin(), u.values.end(), 0.0);
    report.converged = true;
    return {std::move(u), std::move(report)};
  }

  std::array<double, 3> pc_coef{1.0, 1.0, 1.0};
  if constexpr (requires { op.mean_coefficients(); }) pc_coef = op.mean_coefficients();
  const int d = box.dim();
  auto precondition = [&](std::span<const double> r, std::span<double> z) {
    if (cfg.precond == Preconditioner::none) {
      std::copy(r.begin(), r.end(), z.begin());
      return;
    }
    const double m = op.mass();
    apply_multiplier(box, r, z, [&](const std::array<double, 3>& mu) {
      double s = m;
      for (int a = 0; a < d; ++a) s += pc_coef[a] * mu[a];
      return s > 0.0 ? 1.0 / s : 0.0;
    });
  };

  std::vector<double> r(n), z(n), p(n), q(n);
  auto residual = [&] {
    op.apply(u.values, q);
    for (std::size_t k = 0; k < n; ++k) r[k] = b[k] - q[k];
    if (singular) detail::remove_mean(r);
  };

  std::size_t it = 0;
  double rel = 0.0;
  // Restart from the current iterate if the recursively updated residual
  // drifted from the true one.
  for (int restart = 0; restart < 4; ++restart) {
    residual();
    rel = std::sqrt(detail::dot(r, r)) / bnorm;
    if (rel <= cfg.tol || it >= max_iter) break;
    precondition(r, z);
    p = z;
    double rz = detail::dot(r, z);
    while (it < max_iter) {
      op.apply(p, q);
      const double pq = detail::dot(p, q);
      if (!std::isfinite(pq)) throw SolverError("conjugate gradients produced a non-finite value");
      if (pq <= 0.0) break;
      const double step = rz / pq;
      for (std::size_t k = 0; k < n; ++k) {
        u.values[k] += step * p[k];
        r[k] -= step * q[k];
      }
      ++it;
      if (cfg.record_history) {
        double e = 0.0;
        for (std::size_t k = 0; k < n; ++k) e += u.values[k] * (b[k] + r[k]);
        report.energy_history.push_back(-0.5 * e);
      }
      rel = std::sqrt(detail::dot(r, r)) / bnorm;
      if (!std::isfinite(rel)) throw SolverError("conjugate gradients produced a non-finite residual");
      if (rel <= cfg.tol) break;
      precondition(r, z);
      const double rz_new = detail::dot(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t k = 0; k < n; ++k) p[k] = z[k] + beta * p[k];
    }
  }

  if (singular) {
    if (cfg.anchor == Anchor::mean_zero) {
      detail::remove_mean(u.values);
    } else {
      const double u0 = u.values[0];
      for (double& v : u.values) v -= u0;
    }
  }
  residual();
  report.iterations = it;
  report.final_relative_residual = std::sqrt(detail::dot(r, r)) / bnorm;
  report.converged = report.final_relative_residual <= cfg.tol;
  return {std::move(u), std::move(report)};
}

/// cg_solve that turns non-convergence into SolverError.
template <class Operator>
Solved<ScalarField> cg_solve_checked(const Operator& op, const ScalarField& rhs, const SolverConfig& cfg,
                                     const std::string& what) {
  auto s = cg_solve(op, rhs, cfg);
  if (!s.report.converged)
    throw SolverError(what + ": CG stopped after " + std::to_string(s.report.iterations) +
                      " iterations at relative residual " + std::to_string(s.report.final_relative_residual));
  return s;
}

/// Solves (1/T) u + div*(a grad u) = div* F.
inline Solved<ScalarField> solve_massive(const CoefficientField& a, double T, const VectorField& F,
                                         const SolverConfig& cfg) {
  if (!(T > 0.0)) throw SolverError("massive term needs T > 0");
  require_same_box(a.box, F.box);
  return cg_solve_checked(EllipticOperator(a, 1.0 / T), div_star(F), cfg, "massive solve");
}

/// Mean-zero solution of div*(a grad G) = delta_y - 1/N.
inline Solved<ScalarField> green(const CoefficientField& a, Site y, const SolverConfig& cfg) {
  const Box& b = a.box;
  ScalarField rhs(b, -1.0 / static_cast<double>(b.size()));
  rhs[y] += 1.0;
  SolverConfig c = cfg;
  c.anchor = Anchor::mean_zero;
  return cg_solve_checked(EllipticOperator(a), rhs, c, "green function");
}

/// Heat kernel of the continuous-time random walk on the torus:
/// p(t, .) = exp(-t div*grad) delta_0, computed from the spectral representation.
/// The d-dimensional kernel is the product of one-dimensional ones.
inline ScalarField heat_kernel(double t, const Box& box) {
  if (!(t >= 0.0)) throw SolverError("heat kernel needs t >= 0");
  const int L = box.side();
  const int d = box.dim();
  std::vector<double> p1(L, 0.0);
  if (t == 0.0) {
    p1[0] = 1.0;
  } else {
    std::vector<double> weight(L);
    for (int k = 0; k < L; ++k) weight[k] = std::exp(-t * axis_eigenvalue(k, L));
    for (int x = 0; x < L; ++x) {
      double s = 0.0;
      for (int k = 0; k < L; ++k) s += weight[k] * std::cos(2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * x) % L) / L);
      // rounding can leave tiny negative values where the kernel underflows
      p1[x] = std::max(0.0, s / L);
    }
  }
  ScalarField p(box);
  for (Site x = 0; x < box.size(); ++x) {
    const auto c = box.coords(x);
    double v = 1.0;
    for (int k = 0; k < d; ++k) v *= p1[c[k]];
    p[x] = v;
  }
  return p;
}

}  // namespace homoglab

#endif  // HOMOGLAB_ELLIPTIC_HPP
