#ifndef HOMOGLAB_TWOSCALE_HPP
#define HOMOGLAB_TWOSCALE_HPP

// Two-scale expansion on the torus with a massive term alpha > 0:
//
//   alpha u  + div*(a grad u)      = f
//   alpha u0 + div*(a_hom grad u0) = f
//   Z = u - (u0 + sum_i phi_i grad_i u0)
//
// and the quantities on both sides of the energy estimate for Z.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <vector>

#include "homoglab/correctors.hpp"
#include "homoglab/elliptic.hpp"
#include "homoglab/ensembles.hpp"
#include "homoglab/parallel.hpp"
#include "homoglab/spectral.hpp"

namespace homoglab {

/// alpha u + div*(A grad u) for a constant matrix A. Only the symmetric part
/// of A enters: the lattice operators grad*_j grad_i commute, so a constant
/// skew part contributes nothing.
class ConstantCoefficientOperator {
 public:
  ConstantCoefficientOperator(const Box& box, const Matrix& A, double mass) : box_(box), A_(A.d), mass_(mass) {
    if (A.d != box.dim()) throw LatticeError("matrix size does not match the box dimension");
    for (int j = 0; j < A.d; ++j)
      for (int i = 0; i < A.d; ++i) A_(j, i) = 0.5 * (A(j, i) + A(i, j));
  }
  const Box& box() const { return box_; }
  double mass() const { return mass_; }
  bool singular() const { return mass_ == 0.0; }
  const Matrix& matrix() const { return A_; }

  void apply(std::span<const double> u, std::span<double> out) const {
    const int d = box_.dim();
    for (Site x = 0; x < box_.size(); ++x) {
      double s = mass_ * u[x];
      for (int j = 0; j < d; ++j) {
        // grad*_j of the flux (A grad u)_j: value at x - e_j minus value at x
        const Site xm = box_.backward(x, j);
        double fx = 0.0, fm = 0.0;
        for (int i = 0; i < d; ++i) {
          fx += A_(j, i) * (u[box_.forward(x, i)] - u[x]);
          fm += A_(j, i) * (u[box_.forward(xm, i)] - u[xm]);
        }
        s += fm - fx;
      }
      out[x] = s;
    }
  }

  std::array<double, 3> mean_coefficients() const {
    std::array<double, 3> c{1.0, 1.0, 1.0};
    for (int i = 0; i < A_.d; ++i) c[i] = A_(i, i);
    return c;
  }

 private:
  Box box_;
  Matrix A_;
  double mass_;
};

/// alpha u + div*(a grad u) = f.
inline Solved<ScalarField> solve_heterogeneous(const CoefficientField& a, double alpha, const ScalarField& f,
                                               const SolverConfig& cfg) {
  if (!(alpha > 0.0)) throw SolverError("massive term needs alpha > 0");
  return cg_solve_checked(EllipticOperator(a, alpha), f, cfg, "heterogeneous solve");
}

inline bool is_diagonal(const Matrix& A) {
  for (int j = 0; j < A.d; ++j)
    for (int i = 0; i < A.d; ++i)
      if (i != j && A(j, i) != 0.0) return false;
  return true;
}

/// alpha u0 + div*(A grad u0) = f. Diagonal A is solved exactly in Fourier
/// space unless `force_cg`; otherwise CG on the constant-coefficient operator.
inline Solved<ScalarField> solve_homogenized(const Matrix& A, double alpha, const ScalarField& f,
                                             const SolverConfig& cfg, bool force_cg = false) {
  if (!(alpha > 0.0)) throw SolverError("massive term needs alpha > 0");
  const Box& b = f.box;
  for (const auto& xi : probe_directions(b.dim()))
    if (!(A.quadratic_form(xi) > 0.0)) throw SolverError("homogenized matrix is not elliptic");
  if (is_diagonal(A) && !force_cg) {
    std::array<double, 3> c{0.0, 0.0, 0.0};
    for (int i = 0; i < A.d; ++i) c[i] = A(i, i);
    Solved<ScalarField> s{spectral_solve(b, f, alpha, c), {}};
    ScalarField r(b);
    ConstantCoefficientOperator(b, A, alpha).apply(s.value.values, r.values);
    double rr = 0.0, ff = 0.0;
    for (Site x = 0; x < b.size(); ++x) {
      rr += (r[x] - f[x]) * (r[x] - f[x]);
      ff += f[x] * f[x];
    }
    s.report.final_relative_residual = ff > 0.0 ? std::sqrt(rr / ff) : 0.0;
    s.report.converged = s.report.final_relative_residual <= std::max(cfg.tol, 1e-12);
    return s;
  }
  return cg_solve_checked(ConstantCoefficientOperator(b, A, alpha), f, cfg, "homogenized solve");
}

/// Z = u - u0 - sum_i phi_i grad_i u0, pointwise.
inline ScalarField remainder(const ScalarField& u, const ScalarField& u0, const std::vector<ScalarField>& phi) {
  require_same_box(u.box, u0.box);
  const Box& b = u.box;
  if (static_cast<int>(phi.size()) != b.dim()) throw LatticeError("need one corrector per direction");
  const auto g = grad(u0);
  ScalarField Z(b);
  for (Site x = 0; x < b.size(); ++x) {
    double s = u[x] - u0[x];
    for (int i = 0; i < b.dim(); ++i) s -= phi[i][x] * g(x, i);
    Z[x] = s;
  }
  return Z;
}

/// log(|x| + 2) in d = 2, 1 otherwise (|x| Euclidean).
inline double growth_weight(double norm, int d) { return d == 2 ? std::log(norm + 2.0) : 1.0; }

/// prod_i cos(2 pi x_i / period); period defaults to the box side. A fixed
/// period that divides every box side gives literally the same load on all boxes.
inline ScalarField default_load(const Box& b, std::optional<int> period = std::nullopt) {
  const int P = period.value_or(b.side());
  if (P < 2 || b.side() % P != 0) throw LatticeError("load period must be >= 2 and divide the box side");
  ScalarField f(b);
  for (Site x = 0; x < b.size(); ++x) {
    const auto c = b.coords(x);
    double v = 1.0;
    for (int i = 0; i < b.dim(); ++i) v *= std::cos(2.0 * std::numbers::pi * c[i] / P);
    f[x] = v;
  }
  return f;
}

struct TwoScaleReport {
  std::uint64_t sample = 0;
  int L = 0;
  double alpha = 0.0;
  double lhs = 0.0;        // sum alpha |Z|^2 + lambda |grad Z|^2
  double rhs_phi = 0.0;    // alpha sum |phi|^2 |grad u0|^2
  double rhs_sigma = 0.0;  // sum (|sigma|^2 + |a|^2 |phi|^2) |grad grad u0|^2
  double ratio = 0.0;
  std::vector<SolveReport> reports;
};

/// Sums on both sides of the remainder estimate for one coefficient field.
inline TwoScaleReport two_scale_terms(const CoefficientField& a, const std::vector<CorrectorSet>& sets,
                                      const ScalarField& u, const ScalarField& u0, double alpha, double lambda) {
  const Box& b = a.box;
  const int d = b.dim();
  std::vector<ScalarField> phis;
  for (const auto& s : sets) phis.push_back(s.phi);
  const auto Z = remainder(u, u0, phis);
  const auto gZ = grad(Z);
  const auto g0 = grad(u0);
  std::vector<VectorField> hess;
  for (int j = 0; j < d; ++j) hess.push_back(grad(g0.component(j)));
  std::vector<double> lhs(b.size()), rp(b.size()), rs(b.size());
  for (Site x = 0; x < b.size(); ++x) {
    double gz2 = 0.0, phi2 = 0.0, g02 = 0.0, sig2 = 0.0, a2 = 0.0, h2 = 0.0;
    for (int i = 0; i < d; ++i) {
      gz2 += gZ(x, i) * gZ(x, i);
      phi2 += phis[i][x] * phis[i][x];
      g02 += g0(x, i) * g0(x, i);
      a2 += a(x, i) * a(x, i);
      for (int j = 0; j < d; ++j) {
        h2 += hess[j](x, i) * hess[j](x, i);
        for (int k = 0; k < d; ++k) sig2 += sets[i].sigma(x, j, k) * sets[i].sigma(x, j, k);
      }
    }
    lhs[x] = alpha * Z[x] * Z[x] + lambda * gz2;
    rp[x] = alpha * phi2 * g02;
    rs[x] = (sig2 + a2 * phi2) * h2;
  }
  TwoScaleReport r;
  r.L = b.side();
  r.alpha = alpha;
  r.lhs = compensated_sum(lhs);
  r.rhs_phi = compensated_sum(rp);
  r.rhs_sigma = compensated_sum(rs);
  const double rhs = r.rhs_phi + r.rhs_sigma;
  r.ratio = rhs > 0.0 ? r.lhs / rhs : 0.0;
  return r;
}

enum class AhomSource { rve, cell };

struct TwoScaleConfig {
  double alpha = 0.1;
  std::size_t n_samples = 50;
  std::optional<ScalarField> load;  // default_load(box, load_period) when unset
  std::optional<int> load_period;
  AhomSource ahom = AhomSource::rve;
  SolverConfig solver;
  PoissonMethod sigma_method = PoissonMethod::cg;
  int threads = 1;
};

/// Per-sample two-scale reports in sample order. With AhomSource::rve the
/// homogenized matrix is the mean of the cell values over the experiment's
/// own samples; with AhomSource::cell each sample uses its own cell value.
inline std::vector<TwoScaleReport> two_scale_experiment(const EnsembleSpec& spec, const Box& box,
                                                        const TwoScaleConfig& cfg) {
  if (cfg.n_samples < 1) throw SolverError("need at least one sample");
  if (!(cfg.alpha > 0.0)) throw SolverError("massive term needs alpha > 0");
  spec.validate_for(box);
  const int d = box.dim();
  const ScalarField f = cfg.load ? *cfg.load : default_load(box, cfg.load_period);
  require_same_box(box, f.box);

  std::vector<std::vector<CorrectorSet>> sets(cfg.n_samples);
  std::vector<Matrix> cell(cfg.n_samples);
  parallel_for(cfg.n_samples, cfg.threads, [&](std::size_t s) {
    try {
      const auto a = sample(spec, box, SampleId{s});
      cell[s] = Matrix(d);
      for (int i = 0; i < d; ++i) {
        sets[s].push_back(corrector_set(a, i, cfg.solver, cfg.sigma_method));
        for (int j = 0; j < d; ++j) cell[s](j, i) = sets[s].back().ahom_column[j];
      }
    } catch (const SolverError& e) {
      throw SampleFailure(s, e.what());
    }
  });
  Matrix mean_ahom(d);
  for (std::size_t k = 0; k < mean_ahom.m.size(); ++k) {
    std::vector<double> v;
    for (const auto& c : cell) v.push_back(c.m[k]);
    mean_ahom.m[k] = compensated_sum(v) / static_cast<double>(v.size());
  }

  std::vector<TwoScaleReport> out(cfg.n_samples);
  parallel_for(cfg.n_samples, cfg.threads, [&](std::size_t s) {
    try {
      const auto a = sample(spec, box, SampleId{s});
      const Matrix& A = cfg.ahom == AhomSource::rve ? mean_ahom : cell[s];
      auto u = solve_heterogeneous(a, cfg.alpha, f, cfg.solver);
      auto u0 = solve_homogenized(A, cfg.alpha, f, cfg.solver);
      out[s] = two_scale_terms(a, sets[s], u.value, u0.value, cfg.alpha, spec.lambda);
      out[s].sample = s;
      for (const auto& c : sets[s]) {
        out[s].reports.push_back(c.phi_report);
        out[s].reports.insert(out[s].reports.end(), c.sigma_reports.begin(), c.sigma_reports.end());
      }
      out[s].reports.push_back(u.report);
      out[s].reports.push_back(u0.report);
    } catch (const SolverError& e) {
      throw SampleFailure(s, e.what());
    }
  });
  return out;
}

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace homoglab

#endif  // HOMOGLAB_TWOSCALE_HPP
