#ifndef HOMOGLAB_FIT_HPP
#define HOMOGLAB_FIT_HPP

// Small least-squares fits used by the convergence and decay reports.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace homoglab {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double residual = 0.0;  // root mean square of the residuals
};

/// Ordinary least squares y ~ intercept + slope * x.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("line fit needs two or more points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("line fit needs distinct abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = y[k] - f.intercept - f.slope * x[k];
    ss += r * r;
  }
  f.residual = std::sqrt(ss / n);
  f.r_squared = syy > 0.0 ? 1.0 - ss / syy : 1.0;
  return f;
}

/// Slope of log y against log x.
inline LineFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0.0 && y[k] > 0.0)) throw std::invalid_argument("log-log fit needs positive data");
    lx.push_back(std::log(x[k]));
    ly.push_back(std::log(y[k]));
  }
  return fit_line(lx, ly);
}

struct PowerLawFit {
  double exponent = 0.0;
  double prefactor = 0.0;
  double offset = 0.0;
  double residual = 0.0;  // RMS relative residual
};

/// Fits y ~ offset + prefactor * x^exponent by scanning the exponent on a
/// fine grid and solving the linear least-squares problem for (offset,
/// prefactor) at each exponent, weighting residuals by 1/|y|. Used where a
/// finite periodic box shifts a decaying profile by an unknown constant.
inline PowerLawFit fit_power_with_offset(const std::vector<double>& x, const std::vector<double>& y, double lo = -4.0,
                                         double hi = 0.5, double step = 1e-3) {
  if (x.size() != y.size() || x.size() < 3) throw std::invalid_argument("offset power fit needs three or more points");
  PowerLawFit best;
  best.residual = std::numeric_limits<double>::infinity();
  for (double p = lo; p <= hi + 1e-12; p += step) {
    // weighted normal equations for y/|y| ~ c/|y| + A x^p/|y|
    double s11 = 0, s12 = 0, s22 = 0, t1 = 0, t2 = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double w = 1.0 / (y[k] * y[k]);
      const double g = std::pow(x[k], p);
      s11 += w;
      s12 += w * g;
      s22 += w * g * g;
      t1 += w * y[k];
      t2 += w * g * y[k];
    }
    const double det = s11 * s22 - s12 * s12;
    if (std::abs(det) < 1e-300) continue;
    const double c = (s22 * t1 - s12 * t2) / det;
    const double A = (s11 * t2 - s12 * t1) / det;
    double ss = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double r = (y[k] - c - A * std::pow(x[k], p)) / y[k];
      ss += r * r;
    }
    const double rms = std::sqrt(ss / static_cast<double>(x.size()));
    if (rms < best.residual) best = {p, A, c, rms};
  }
  return best;
}

}  // namespace homoglab

#endif  // HOMOGLAB_FIT_HPP
