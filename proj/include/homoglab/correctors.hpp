#ifndef HOMOGLAB_CORRECTORS_HPP
#define HOMOGLAB_CORRECTORS_HPP

// Correctors, fluxes, flux correctors and homogenized coefficients on the
// periodic box.
//
//   corrector      div*(a (grad phi + xi)) = 0,          mean(phi) = 0
//   flux           q = a (grad phi + xi) - <a (grad phi + xi)>_box
//   flux corrector div*grad sigma_jk = grad_k q_j - grad_j q_k,  sigma_kj = -sigma_jk
//   modified       (1/T) phi_T + div*(a (grad phi_T + xi)) = 0
//
// On a finite torus the homogenized flux in q is the box average of the
// corrected flux of the sample itself, so q has exactly zero mean.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "homoglab/elliptic.hpp"
#include "homoglab/ensembles.hpp"
#include "homoglab/lattice.hpp"
#include "homoglab/parallel.hpp"
#include "homoglab/spectral.hpp"

namespace homoglab {

using Direction = std::vector<double>;

inline Direction unit_direction(int d, int i) {
  Direction e(d, 0.0);
  e[i] = 1.0;
  return e;
}

/// Dense d x d matrix, entry (j, i) at m[j * d + i].
struct Matrix {
  int d = 0;
  std::vector<double> m;
  Matrix() = default;
  explicit Matrix(int dim, double fill = 0.0) : d(dim), m(static_cast<std::size_t>(dim) * dim, fill) {}
  double& operator()(int j, int i) { return m[static_cast<std::size_t>(j) * d + i]; }
  double operator()(int j, int i) const { return m[static_cast<std::size_t>(j) * d + i]; }
  Matrix transposed() const {
    Matrix t(d);
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d; ++i) t(j, i) = (*this)(i, j);
    return t;
  }
  double quadratic_form(const Direction& xi) const {
    double s = 0.0;
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d; ++i) s += xi[j] * (*this)(j, i) * xi[i];
    return s;
  }
};

struct HomogenizedTensor {
  Matrix matrix;  // column i is a_hom e_i
  Matrix stderr_;
  std::size_t n_samples = 1;
  std::vector<SolveReport> reports;
};

struct CorrectorSet {
  int direction = 0;
  ScalarField phi;
  VectorField q;
  SkewField sigma;
  std::vector<double> ahom_column;  // a_hom e_i = <a (grad phi_i + e_i)>_box
  SolveReport phi_report;
  std::vector<SolveReport> sigma_reports;
};

/// a (grad phi + xi), site by site.
inline VectorField corrected_flux(const CoefficientField& a, const ScalarField& phi, const Direction& xi) {
  require_same_box(a.box, phi.box);
  VectorField g = grad(phi);
  const int d = a.box.dim();
  for (Site x = 0; x < a.box.size(); ++x)
    for (int i = 0; i < d; ++i) g(x, i) = a(x, i) * (g(x, i) + xi[i]);
  return g;
}

/// div*(a xi) for a constant vector xi.
inline ScalarField div_star_coefficient(const CoefficientField& a, const Direction& xi) {
  VectorField F(a.box);
  const int d = a.box.dim();
  for (Site x = 0; x < a.box.size(); ++x)
    for (int i = 0; i < d; ++i) F(x, i) = a(x, i) * xi[i];
  return div_star(F);
}

inline void check_direction(const Box& box, const Direction& xi) {
  if (static_cast<int>(xi.size()) != box.dim()) throw LatticeError("direction has the wrong dimension");
  double s = 0.0;
  for (double v : xi) s += v * v;
  if (!(s > 0.0)) throw LatticeError("corrector direction must be nonzero");
}

/// Mean-zero phi with div*(a (grad phi + xi)) = 0.
inline Solved<ScalarField> solve_corrector(const CoefficientField& a, const Direction& xi, const SolverConfig& cfg) {
  check_direction(a.box, xi);
  ScalarField rhs = div_star_coefficient(a, xi);
  for (double& v : rhs.values) v = -v;
  SolverConfig c = cfg;
  c.anchor = Anchor::mean_zero;
  return cg_solve_checked(EllipticOperator(a), rhs, c, "corrector");
}

/// Centered flux q = a (grad phi + xi) minus its box average.
inline VectorField flux(const CoefficientField& a, const ScalarField& phi, const Direction& xi) {
  VectorField q = corrected_flux(a, phi, xi);
  const auto m = component_means(q);
  const int d = a.box.dim();
  for (Site x = 0; x < a.box.size(); ++x)
    for (int i = 0; i < d; ++i) q(x, i) -= m[i];
  return q;
}

enum class PoissonMethod { cg, spectral };

/// Skew-symmetric sigma with div*grad sigma_jk = grad_k q_j - grad_j q_k, each
/// entry mean zero. Entries j < k are solved, the rest mirrored.
inline Solved<SkewField> solve_flux_corrector(const VectorField& q, const SolverConfig& cfg,
                                              PoissonMethod method = PoissonMethod::cg,
                                              std::vector<SolveReport>* reports = nullptr) {
  const Box& b = q.box;
  const int d = b.dim();
  const auto m = component_means(q);
  double rms = std::sqrt(inner(q, q) / static_cast<double>(b.size()));
  for (double mj : m)
    if (std::abs(mj) > 1e-10 * rms + 1e-14)
      throw SolverError("flux corrector needs a mean-zero flux");
  SkewField sigma(b);
  SolveReport worst;
  worst.converged = true;
  SolverConfig c = cfg;
  c.anchor = Anchor::mean_zero;
  for (int j = 0; j < d; ++j)
    for (int k = j + 1; k < d; ++k) {
      ScalarField rhs(b);
      for (Site x = 0; x < b.size(); ++x)
        rhs[x] = (q(b.forward(x, k), j) - q(x, j)) - (q(b.forward(x, j), k) - q(x, k));
      ScalarField s;
      if (method == PoissonMethod::spectral) {
        s = spectral_solve(b, rhs, 0.0, {1.0, 1.0, 1.0});
      } else {
        auto solved = cg_solve_checked(EllipticOperator::laplacian(b), rhs, c, "flux corrector");
        if (reports) reports->push_back(solved.report);
        worst.iterations = std::max(worst.iterations, solved.report.iterations);
        worst.final_relative_residual =
            std::max(worst.final_relative_residual, solved.report.final_relative_residual);
        s = std::move(solved.value);
      }
      for (Site x = 0; x < b.size(); ++x) sigma.set(x, j, k, s[x]);
    }
  return {std::move(sigma), worst};
}

/// (div* sigma)_j = sum_k grad*_k sigma_jk.
inline VectorField div_star(const SkewField& sigma) {
  const Box& b = sigma.box();
  const int d = b.dim();
  VectorField out(b);
  for (Site x = 0; x < b.size(); ++x)
    for (int j = 0; j < d; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += sigma(b.backward(x, k), j, k) - sigma(x, j, k);
      out(x, j) = s;
    }
  return out;
}

/// Solves (1/T) phi_T + div*(a (grad phi_T + xi)) = 0.
inline Solved<ScalarField> solve_modified_corrector(const CoefficientField& a, const Direction& xi, double T,
                                                    const SolverConfig& cfg) {
  check_direction(a.box, xi);
  if (!(T > 0.0)) throw SolverError("modified corrector needs T > 0");
  ScalarField rhs = div_star_coefficient(a, xi);
  for (double& v : rhs.values) v = -v;
  return cg_solve_checked(EllipticOperator(a, 1.0 / T), rhs, cfg, "modified corrector");
}

/// Corrector, flux and flux corrector for coordinate direction i.
inline CorrectorSet corrector_set(const CoefficientField& a, int i, const SolverConfig& cfg,
                                  PoissonMethod sigma_method = PoissonMethod::cg) {
  CorrectorSet s;
  s.direction = i;
  const Direction e = unit_direction(a.box.dim(), i);
  auto phi = solve_corrector(a, e, cfg);
  s.phi = std::move(phi.value);
  s.phi_report = phi.report;
  s.ahom_column = component_means(corrected_flux(a, s.phi, e));
  s.q = flux(a, s.phi, e);
  s.sigma = solve_flux_corrector(s.q, cfg, sigma_method, &s.sigma_reports).value;
  return s;
}

/// Cell-problem homogenized matrix: column i is the box mean of a (grad phi_i + e_i).
inline HomogenizedTensor ahom_cell(const CoefficientField& a, const SolverConfig& cfg) {
  const int d = a.box.dim();
  HomogenizedTensor A;
  A.matrix = Matrix(d);
  A.stderr_ = Matrix(d);
  A.n_samples = 1;
  for (int i = 0; i < d; ++i) {
    const Direction e = unit_direction(d, i);
    auto phi = solve_corrector(a, e, cfg);
    const auto col = component_means(corrected_flux(a, phi.value, e));
    for (int j = 0; j < d; ++j) A.matrix(j, i) = col[j];
    A.reports.push_back(phi.report);
  }
  return A;
}

class SampleFailure : public SolverError {
 public:
  SampleFailure(std::uint64_t id, const std::string& what)
      : SolverError("sample " + std::to_string(id) + ": " + what), sample(id) {}
  std::uint64_t sample;
};

/// Monte Carlo RVE estimate: mean over samples of the periodized cell value,
/// stderr = sample standard deviation / sqrt(n). Aggregation runs in sample order.
inline HomogenizedTensor ahom_rve(const EnsembleSpec& spec, const Box& box, std::size_t n_samples,
                                  const SolverConfig& cfg, int threads = 1) {
  if (n_samples < 2) throw SolverError("RVE estimate needs at least two samples");
  spec.validate_for(box);
  std::vector<HomogenizedTensor> per(n_samples);
  parallel_for(n_samples, threads, [&](std::size_t s) {
    try {
      per[s] = ahom_cell(sample(spec, box, SampleId{s}), cfg);
    } catch (const SolverError& e) {
      throw SampleFailure(s, e.what());
    }
  });
  const int d = box.dim();
  HomogenizedTensor A;
  A.matrix = Matrix(d);
  A.stderr_ = Matrix(d);
  A.n_samples = n_samples;
  const double n = static_cast<double>(n_samples);
  for (std::size_t k = 0; k < A.matrix.m.size(); ++k) {
    std::vector<double> v(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) v[s] = per[s].matrix.m[k];
    const double mu = compensated_sum(v) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    A.matrix.m[k] = mu;
    A.stderr_.m[k] = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  for (auto& t : per) A.reports.insert(A.reports.end(), t.reports.begin(), t.reports.end());
  return A;
}

/// 64 unit directions: a circle in d = 2, a Fibonacci sphere in d = 3, +-1 in d = 1.
inline std::vector<Direction> probe_directions(int d) {
  std::vector<Direction> out;
  if (d == 1) return {{1.0}, {-1.0}};
  for (int k = 0; k < 64; ++k) {
    if (d == 2) {
      const double t = 2.0 * std::numbers::pi * k / 64.0;
      out.push_back({std::cos(t), std::sin(t)});
    } else {
      const double z = 1.0 - (2.0 * k + 1.0) / 64.0;
      const double r = std::sqrt(1.0 - z * z);
      const double t = k * std::numbers::pi * (3.0 - std::sqrt(5.0));
      out.push_back({r * std::cos(t), r * std::sin(t), z});
    }
  }
  return out;
}

struct AhomPropertyReport {
  double ellipticity_margin = 0.0;  // min over probe directions of xi . A xi
  bool elliptic = false;
  double symmetry_defect = 0.0;     // max_{i<j} |A_ij - A_ji|
  double symmetry_tolerance = 0.0;
  bool symmetric = true;
  double transposition_defect = 0.0;
  bool transposition = true;
  bool all_pass() const { return elliptic && symmetric && transposition; }
};

/// Ellipticity on the probe grid, symmetry within 3 standard errors (with a
/// solver-precision floor for deterministic cells), and the transposition
/// identity against the homogenized matrix of the transposed ensemble. For
/// diagonal coefficients the transposed ensemble is the ensemble itself.
inline AhomPropertyReport verify_ahom_properties(const HomogenizedTensor& A, double lambda, bool symmetric_ensemble,
                                                 const std::optional<HomogenizedTensor>& transposed = std::nullopt) {
  const int d = A.matrix.d;
  AhomPropertyReport r;
  r.ellipticity_margin = std::numeric_limits<double>::infinity();
  for (const auto& xi : probe_directions(d)) r.ellipticity_margin = std::min(r.ellipticity_margin, A.matrix.quadratic_form(xi));
  r.elliptic = r.ellipticity_margin >= lambda;
  double scale = 0.0;
  for (double v : A.matrix.m) scale = std::max(scale, std::abs(v));
  const double floor = 1e-8 * scale;
  auto pair_tol = [&](const HomogenizedTensor& T, int i, int j) {
    return std::max(3.0 * (T.stderr_(i, j) + T.stderr_(j, i)), floor);
  };
  if (symmetric_ensemble) {
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) {
        const double defect = std::abs(A.matrix(i, j) - A.matrix(j, i));
        const double tol = pair_tol(A, i, j);
        if (defect - tol > r.symmetry_defect - r.symmetry_tolerance) {
          r.symmetry_defect = defect;
          r.symmetry_tolerance = tol;
        }
        if (defect > tol) r.symmetric = false;
      }
  }
  const HomogenizedTensor& At = transposed ? *transposed : A;
  const Matrix AT = A.matrix.transposed();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const double defect = std::abs(At.matrix(i, j) - AT(i, j));
      r.transposition_defect = std::max(r.transposition_defect, defect);
      const double tol = std::max(3.0 * (At.stderr_(i, j) + A.stderr_(j, i)), floor);
      if (defect > tol) r.transposition = false;
    }
  return r;
}

}  // namespace homoglab

#endif  // HOMOGLAB_CORRECTORS_HPP
