#ifndef HOMOGLAB_QUANT_HPP
#define HOMOGLAB_QUANT_HPP

// Quantitative statistics of random coefficient fields: corrector moment
// growth, spectral-gap checks with vertical and Lipschitz derivatives,
// semigroup decay, Green's function decay, the weighted Meyers probe and
// ergodic averaging rates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "homoglab/correctors.hpp"
#include "homoglab/elliptic.hpp"
#include "homoglab/ensembles.hpp"
#include "homoglab/fit.hpp"
#include "homoglab/lattice.hpp"
#include "homoglab/parallel.hpp"
#include "homoglab/rng.hpp"

namespace homoglab {

class QuantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// E[|X|^(2p)]^(1/(2p)) with a delta-method standard error.
struct MomentEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

namespace detail {

inline double sample_mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : compensated_sum(v) / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v, double mu) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline void check_radii(const std::vector<int>& radii, int L, const char* what) {
  if (radii.empty()) throw QuantError(std::string(what) + ": radius list is empty");
  for (std::size_t k = 0; k < radii.size(); ++k) {
    if (radii[k] < 1) throw QuantError(std::string(what) + ": radii must be positive");
    if (k > 0 && radii[k] <= radii[k - 1]) throw QuantError(std::string(what) + ": radii must be strictly increasing");
  }
  if (4 * radii.back() > L)
    throw QuantError(std::string(what) + ": radius " + std::to_string(radii.back()) + " exceeds L/4 = " +
                     std::to_string(L / 4));
}

inline std::uint64_t purpose_key(const EnsembleSpec& spec, std::size_t s, std::uint64_t tag) {
  return derive_key(sample_key(spec.master_seed, s), tag);
}

}  // namespace detail

/// Moment estimate from per-sample means of |X|^(2p).
inline MomentEstimate moment_from_samples(const std::vector<double>& powers, double p) {
  MomentEstimate m;
  m.p = p;
  m.n = powers.size();
  if (powers.empty()) return m;
  const double M = detail::sample_mean(powers);
  const double se = detail::sample_sd(powers, M) / std::sqrt(static_cast<double>(powers.size()));
  m.value = M > 0.0 ? std::pow(M, 1.0 / (2.0 * p)) : 0.0;
  m.stderr_ = M > 0.0 ? m.value / (2.0 * p * M) * se : 0.0;
  return m;
}

// ---------------------------------------------------------------- functionals

/// Scalar functional of a coefficient field.
struct Functional {
  std::string name;
  std::function<double(const CoefficientField&)> eval;
  /// Value on the translated field tau_x a; falls back to eval(shifted(a, x)).
  std::function<double(const CoefficientField&, Site)> eval_shifted;
  /// Sites whose coefficients the value depends on; empty means the whole box.
  std::function<std::vector<Site>(const Box&)> support;
  /// Closed-form expectation when one is known.
  std::function<std::optional<double>(const EnsembleSpec&)> exact_mean;

  double operator()(const CoefficientField& a) const { return eval(a); }
  double at(const CoefficientField& a, Site x) const {
    if (eval_shifted) return eval_shifted(a, x);
    return eval(shifted(a, a.box.coords(x)));
  }
  std::vector<Site> sites(const Box& b) const {
    std::vector<Site> s = support ? support(b) : std::vector<Site>{};
    if (s.empty()) {
      s.resize(b.size());
      for (Site x = 0; x < b.size(); ++x) s[x] = x;
    }
    return s;
  }
  std::optional<double> mean(const EnsembleSpec& spec) const { return exact_mean ? exact_mean(spec) : std::nullopt; }
};

namespace detail {

inline std::optional<double> stationary_entry_mean(const EnsembleSpec& spec) {
  if (spec.kind == EnsembleKind::periodic_tile) return std::nullopt;
  return spec.expected_entry();
}

}  // namespace detail

inline Functional constant_functional(double c) {
  Functional f;
  f.name = "constant";
  f.eval = [c](const CoefficientField&) { return c; };
  f.eval_shifted = [c](const CoefficientField&, Site) { return c; };
  f.support = [](const Box&) { return std::vector<Site>{0}; };
  f.exact_mean = [c](const EnsembleSpec&) { return std::optional<double>(c); };
  return f;
}

/// a_component(site).
inline Functional single_site_functional(int component = 0, Site site = 0) {
  Functional f;
  f.name = "single-site";
  f.eval = [=](const CoefficientField& a) { return a(site, component); };
  f.eval_shifted = [=](const CoefficientField& a, Site x) { return a(a.box.shift(x, a.box.coords(site)), component); };
  f.support = [=](const Box&) { return std::vector<Site>{site}; };
  f.exact_mean = detail::stationary_entry_mean;
  return f;
}

/// Mean of a_component over the centered R-sub-box.
inline Functional box_average_functional(int R, int component = 0) {
  Functional f;
  f.name = "box-average-R" + std::to_string(R);
  auto window = [R](const Box& b) {
    const int start = (b.side() - R) / 2;
    const int d = b.dim();
    std::vector<Site> s;
    for (int k3 = 0; k3 < (d >= 3 ? R : 1); ++k3)
      for (int k2 = 0; k2 < (d >= 2 ? R : 1); ++k2)
        for (int k1 = 0; k1 < R; ++k1)
          s.push_back(b.index({start + k1, d >= 2 ? start + k2 : 0, d >= 3 ? start + k3 : 0}));
    return s;
  };
  f.eval = [=](const CoefficientField& a) { return spatial_average_observable(a, R, component); };
  f.eval_shifted = [=](const CoefficientField& a, Site x) {
    const auto off = a.box.coords(x);
    std::vector<double> v;
    for (Site y : window(a.box)) v.push_back(a(a.box.shift(y, off), component));
    return compensated_sum(v) / static_cast<double>(v.size());
  };
  f.support = [=](const Box& b) {
    if (R < 1 || R > b.side()) throw QuantError("averaging window must satisfy 1 <= R <= L");
    return window(b);
  };
  f.exact_mean = detail::stationary_entry_mean;
  return f;
}

/// Entry (j, i) of the cell-problem homogenized matrix of the whole box.
inline Functional ahom_entry_functional(int j, int i, const SolverConfig& cfg) {
  Functional f;
  f.name = "ahom-cell-" + std::to_string(j) + std::to_string(i);
  f.eval = [=](const CoefficientField& a) {
    const Direction e = unit_direction(a.box.dim(), i);
    const auto phi = solve_corrector(a, e, cfg);
    return component_means(corrected_flux(a, phi.value, e))[j];
  };
  return f;
}

/// single-site a_1(0), box average over R = L/2, a_hom cell entry (0, 0).
inline std::vector<Functional> default_family(const Box& box, const SolverConfig& cfg) {
  return {single_site_functional(0), box_average_functional(std::max(1, box.side() / 2), 0),
          ahom_entry_functional(0, 0, cfg)};
}

// ------------------------------------------------------ vertical derivatives

/// Values of f over the fields that agree with a off site x: every support
/// combination for finite-support laws, otherwise `inner` independent
/// resamples of the entries at x drawn from the stream `key`.
inline std::vector<double> conditional_values(const Functional& f, const CoefficientField& a, Site x,
                                              const EnsembleSpec& spec, std::size_t inner = 64,
                                              std::uint64_t key = 0, std::optional<double> fa = std::nullopt) {
  const int d = a.box.dim();
  std::vector<double> vals;
  if (spec.entry_support()) {
    for (const auto& v : site_variants(spec, a, x)) {
      bool same = true;
      for (int i = 0; i < d; ++i) same = same && v(x, i) == a(x, i);
      vals.push_back(same && fa ? *fa : f.eval(v));
    }
    return vals;
  }
  if (!spec.is_iid()) throw QuantError("conditional expectations need an iid law");
  if (inner == 0) throw QuantError("inner Monte Carlo needs at least one resample");
  CoefficientField v = a;
  const std::uint64_t site_key = derive_key(key, x);
  for (std::size_t r = 0; r < inner; ++r) {
    for (int i = 0; i < d; ++i) v(x, i) = spec.draw_entry(stream_draw(site_key, r * d + i));
    vals.push_back(f.eval(v));
  }
  return vals;
}

/// f(a) - E[f | coefficients off x].
inline double vertical_derivative(const Functional& f, const CoefficientField& a, Site x, const EnsembleSpec& spec,
                                  std::size_t inner = 64, std::uint64_t key = 0) {
  const double fa = f.eval(a);
  const auto vals = conditional_values(f, a, x, spec, inner, key, fa);
  return fa - compensated_sum(vals) / static_cast<double>(vals.size());
}

/// Oscillation of f over all resamplings of site x (finite-support laws only).
inline double lipschitz_derivative(const Functional& f, const CoefficientField& a, Site x, const EnsembleSpec& spec) {
  if (!spec.entry_support()) throw QuantError("Lipschitz derivative needs a finite-support law");
  const auto vals = conditional_values(f, a, x, spec, 0, 0, f.eval(a));
  const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
  return *hi - *lo;
}

// ----------------------------------------------------------- spectral gap

struct SGReport {
  std::string functional;
  MomentEstimate variance;        // value = Var(f), p = 1
  MomentEstimate derivative_sum;  // value = sum_x E[(d_x f)^2], p = 1
  double ratio = 0.0;
  double ratio_stderr = 0.0;  // bootstrap over samples
  double rho_assumed = 1.0;
  bool within_bound = false;  // ratio <= 1/rho + 3 ratio_stderr
};

struct SGOptions {
  std::size_t inner = 64;
  std::size_t bootstrap = 1000;
  int threads = 1;
};

/// Monte Carlo check of Var(f) <= sum_x E[(d_x f)^2] for each functional.
/// The sum runs over the functional's support; the derivative vanishes elsewhere.
inline std::vector<SGReport> sg_check(const EnsembleSpec& spec, const Box& box, const std::vector<Functional>& family,
                                      std::size_t n, const SGOptions& opt = {}) {
  spec.validate_for(box);
  if (!spec.is_iid()) throw QuantError("spectral gap check needs an iid law");
  if (n < 2) throw QuantError("spectral gap check needs at least two samples");
  const std::size_t F = family.size();
  std::vector<std::vector<Site>> supports;
  for (const auto& f : family) supports.push_back(f.sites(box));
  std::vector<double> values(n * F), sums(n * F);
  parallel_for(n, opt.threads, [&](std::size_t s) {
    const auto a = sample(spec, box, SampleId{s});
    const std::uint64_t key = detail::purpose_key(spec, s, 0x5347);
    for (std::size_t k = 0; k < F; ++k) {
      const double fa = family[k].eval(a);
      std::vector<double> sq;
      sq.reserve(supports[k].size());
      for (Site x : supports[k]) {
        const auto vals = conditional_values(family[k], a, x, spec, opt.inner, derive_key(key, k), fa);
        const double dx = fa - compensated_sum(vals) / static_cast<double>(vals.size());
        sq.push_back(dx * dx);
      }
      values[s * F + k] = fa;
      sums[s * F + k] = compensated_sum(sq);
    }
  });

  std::vector<SGReport> out;
  const double nd = static_cast<double>(n);
  for (std::size_t k = 0; k < F; ++k) {
    std::vector<double> f(n), D(n);
    for (std::size_t s = 0; s < n; ++s) {
      f[s] = values[s * F + k];
      D[s] = sums[s * F + k];
    }
    auto ratio_of = [&](const std::vector<std::size_t>* idx) {
      std::vector<double> fv, dv;
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t t = idx ? (*idx)[s] : s;
        fv.push_back(f[t]);
        dv.push_back(D[t]);
      }
      const double mf = detail::sample_mean(fv);
      const double sd = detail::sample_sd(fv, mf);
      const double var = sd * sd;
      const double md = detail::sample_mean(dv);
      if (md == 0.0) return var == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
      return var / md;
    };
    SGReport r;
    r.functional = family[k].name;
    const double mf = detail::sample_mean(f);
    const double sd = detail::sample_sd(f, mf);
    r.variance.value = sd * sd;
    r.variance.n = n;
    std::vector<double> infl(n);
    for (std::size_t s = 0; s < n; ++s) infl[s] = (f[s] - mf) * (f[s] - mf);
    r.variance.stderr_ = detail::sample_sd(infl, detail::sample_mean(infl)) / std::sqrt(nd);
    const double md = detail::sample_mean(D);
    r.derivative_sum.value = md;
    r.derivative_sum.n = n;
    r.derivative_sum.stderr_ = detail::sample_sd(D, md) / std::sqrt(nd);
    r.ratio = ratio_of(nullptr);

    CounterStream rng(derive_key(sample_key(spec.master_seed, 0), 0xb007 + k));
    std::vector<double> boot;
    std::vector<std::size_t> idx(n);
    for (std::size_t b = 0; b < opt.bootstrap; ++b) {
      for (auto& t : idx) t = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * nd));
      const double rb = ratio_of(&idx);
      if (std::isfinite(rb)) boot.push_back(rb);
    }
    r.ratio_stderr = detail::sample_sd(boot, detail::sample_mean(boot));
    r.within_bound = r.ratio <= 1.0 / r.rho_assumed + 3.0 * r.ratio_stderr;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------- corrector growth

enum class GrowthModel { log_fit, constant_fit };

inline std::string to_string(GrowthModel m) { return m == GrowthModel::log_fit ? "log-fit" : "constant-fit"; }

struct GrowthFit {
  std::vector<int> radii;
  std::vector<MomentEstimate> moments;  // E[|phi(y + r e) - phi(y)|^(2p)]^(1/(2p))
  GrowthModel model = GrowthModel::log_fit;
  double slope = 0.0;      // of moment^2 against log(r + 2); 0 for the constant fit
  double intercept = 0.0;
  double residual = 0.0;   // RMS residual of the fit
  double r_squared = 0.0;  // log fit only
  double plateau_ratio = 0.0;  // max / min of moment^2
  std::vector<SolveReport> reports;
};

/// Moments of corrector increments at each radius. phi is the vector of the
/// d coordinate correctors; increments are averaged over every base point
/// and every axis direction, then over samples. Log fit in d <= 2, constant
/// fit in d >= 3.
inline GrowthFit corrector_growth(const EnsembleSpec& spec, const Box& box, const std::vector<int>& radii, double p,
                                  std::size_t n, const SolverConfig& cfg, int threads = 1) {
  spec.validate_for(box);
  detail::check_radii(radii, box.side(), "corrector growth");
  if (!(p >= 1.0)) throw QuantError("moment order p must be >= 1");
  if (n < 2) throw QuantError("corrector growth needs at least two samples");
  const int d = box.dim();
  const std::size_t R = radii.size();
  std::vector<double> per(n * R);
  std::vector<std::vector<SolveReport>> reps(n);
  parallel_for(n, threads, [&](std::size_t s) {
    const auto a = sample(spec, box, SampleId{s});
    std::vector<ScalarField> phi;
    try {
      for (int i = 0; i < d; ++i) {
        auto sol = solve_corrector(a, unit_direction(d, i), cfg);
        reps[s].push_back(sol.report);
        phi.push_back(std::move(sol.value));
      }
    } catch (const SolverError& e) {
      throw SampleFailure(s, e.what());
    }
    for (std::size_t k = 0; k < R; ++k) {
      std::vector<double> acc;
      acc.reserve(box.size() * d);
      for (int dir = 0; dir < d; ++dir) {
        std::array<int, 3> off{0, 0, 0};
        off[dir] = radii[k];
        for (Site y = 0; y < box.size(); ++y) {
          const Site z = box.shift(y, off);
          double sq = 0.0;
          for (int i = 0; i < d; ++i) sq += (phi[i][z] - phi[i][y]) * (phi[i][z] - phi[i][y]);
          acc.push_back(p == 1.0 ? sq : std::pow(sq, p));
        }
      }
      per[s * R + k] = compensated_sum(acc) / static_cast<double>(acc.size());
    }
  });

  GrowthFit g;
  g.radii = radii;
  g.model = d >= 3 ? GrowthModel::constant_fit : GrowthModel::log_fit;
  std::vector<double> sq, lx;
  for (std::size_t k = 0; k < R; ++k) {
    std::vector<double> v(n);
    for (std::size_t s = 0; s < n; ++s) v[s] = per[s * R + k];
    g.moments.push_back(moment_from_samples(v, p));
    sq.push_back(g.moments.back().value * g.moments.back().value);
    lx.push_back(std::log(radii[k] + 2.0));
  }
  const auto [lo, hi] = std::minmax_element(sq.begin(), sq.end());
  g.plateau_ratio = *lo > 0.0 ? *hi / *lo : (*hi == 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
  if (g.model == GrowthModel::log_fit && R >= 2) {
    const auto f = fit_line(lx, sq);
    g.slope = f.slope;
    g.intercept = f.intercept;
    g.residual = f.residual;
    g.r_squared = f.r_squared;
  } else {
    g.intercept = detail::sample_mean(sq);
    double ss = 0.0;
    for (double v : sq) ss += (v - g.intercept) * (v - g.intercept);
    g.residual = std::sqrt(ss / static_cast<double>(R));
  }
  for (auto& r : reps) g.reports.insert(g.reports.end(), r.begin(), r.end());
  return g;
}

// ------------------------------------------------------------ semigroup

struct SemigroupFit {
  std::vector<double> times;
  std::vector<MomentEstimate> moments;  // E[|P(t) zeta - E zeta|^2]^(1/2)
  std::vector<double> variances;        // sample variance of P(t) zeta
  double zeta_variance = 0.0;
  double mean_used = 0.0;
  bool exact_mean = false;
  double slope = 0.0;  // of log moment^2 against log t
  double intercept = 0.0;
  double r_squared = 0.0;
  bool contraction = true;  // Var(P(t) zeta) <= Var(zeta) for every t
};

/// P(t) zeta (a) = sum_x p(t, x) zeta(tau_x a) with the torus heat kernel.
inline SemigroupFit semigroup_decay(const EnsembleSpec& spec, const Box& box, const Functional& zeta,
                                    const std::vector<double>& times, std::size_t n, int threads = 1) {
  spec.validate_for(box);
  if (n < 2) throw QuantError("semigroup decay needs at least two samples");
  if (times.empty()) throw QuantError("semigroup decay needs a time grid");
  const double tmax = (box.side() / 8.0) * (box.side() / 8.0);
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] > 0.0) || times[k] > tmax)
      throw QuantError("semigroup time " + std::to_string(times[k]) + " outside (0, (L/8)^2]");
    if (k > 0 && times[k] <= times[k - 1]) throw QuantError("semigroup times must be strictly increasing");
  }
  const std::size_t T = times.size();
  std::vector<std::vector<std::pair<Site, double>>> kernels(T);
  for (std::size_t k = 0; k < T; ++k) {
    const auto p = heat_kernel(times[k], box);
    const double total = compensated_sum(p.values);
    if (std::abs(total - 1.0) > 1e-10) throw QuantError("heat kernel lost mass: sum = " + std::to_string(total));
    const double pmax = *std::max_element(p.values.begin(), p.values.end());
    for (Site x = 0; x < box.size(); ++x)
      if (p[x] > 1e-18 * pmax) kernels[k].push_back({x, p[x]});
  }
  std::vector<double> z0(n), pz(n * T);
  parallel_for(n, threads, [&](std::size_t s) {
    const auto a = sample(spec, box, SampleId{s});
    z0[s] = zeta.eval(a);
    std::vector<double> cache(box.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < T; ++k) {
      std::vector<double> terms;
      terms.reserve(kernels[k].size());
      for (const auto& [x, w] : kernels[k]) {
        if (std::isnan(cache[x])) cache[x] = zeta.at(a, x);
        terms.push_back(w * cache[x]);
      }
      pz[s * T + k] = compensated_sum(terms);
    }
  });

  SemigroupFit out;
  out.times = times;
  const auto em = zeta.mean(spec);
  out.exact_mean = em.has_value();
  out.mean_used = em ? *em : detail::sample_mean(z0);
  const double sd0 = detail::sample_sd(z0, detail::sample_mean(z0));
  out.zeta_variance = sd0 * sd0;
  std::vector<double> lt, lm;
  for (std::size_t k = 0; k < T; ++k) {
    std::vector<double> sq(n), v(n);
    for (std::size_t s = 0; s < n; ++s) {
      v[s] = pz[s * T + k];
      sq[s] = (v[s] - out.mean_used) * (v[s] - out.mean_used);
    }
    out.moments.push_back(moment_from_samples(sq, 1.0));
    const double sd = detail::sample_sd(v, detail::sample_mean(v));
    out.variances.push_back(sd * sd);
    out.contraction = out.contraction && out.variances.back() <= out.zeta_variance;
    const double m2 = out.moments.back().value * out.moments.back().value;
    if (m2 > 0.0) {
      lt.push_back(std::log(times[k]));
      lm.push_back(std::log(m2));
    }
  }
  if (lt.size() >= 2) {
    const auto f = fit_line(lt, lm);
    out.slope = f.slope;
    out.intercept = f.intercept;
    out.r_squared = f.r_squared;
  }
  return out;
}

// ------------------------------------------------------------- Green decay

/// Sites with max_k |x_k| = r (minimal periodic image).
inline std::vector<Site> sup_shell(const Box& b, int r) {
  std::vector<Site> s;
  const int L = b.side();
  for (Site x = 0; x < b.size(); ++x) {
    const auto c = b.coords(x);
    int m = 0;
    for (int k = 0; k < b.dim(); ++k) m = std::max(m, std::min(c[k], L - c[k]));
    if (m == r) s.push_back(x);
  }
  return s;
}

struct GreenDecay {
  std::vector<int> radii;
  std::vector<double> quenched_profile;  // sample mean of the shell mean of G(a; ., 0)
  std::optional<PowerLawFit> quenched_fit;  // d >= 3: G ~ offset + A r^exponent
  double log_ratio_max = 0.0;              // d = 2: max_r |G| / log(r + 2)
  std::vector<MomentEstimate> annealed;    // E[|grad grad G(x, 0)|^2]^(1/2) over shells
  LineFit annealed_fit;                    // log-log
  std::vector<SolveReport> reports;
};

/// Quenched Green's function profile and annealed mixed second derivative.
/// The mixed derivative grad_y G(., 0) in direction j solves
/// div*(a grad w_j) = delta_{e_j} - delta_0; its gradient gives grad_x grad_y G.
inline GreenDecay green_decay(const EnsembleSpec& spec, const Box& box, const std::vector<int>& radii, std::size_t n,
                              const SolverConfig& cfg, int threads = 1) {
  spec.validate_for(box);
  const int d = box.dim();
  if (d < 2) throw QuantError("Green decay needs d in {2, 3}");
  detail::check_radii(radii, box.side(), "Green decay");
  if (n < 1) throw QuantError("Green decay needs at least one sample");
  const std::size_t R = radii.size();
  std::vector<std::vector<Site>> shells;
  for (int r : radii) shells.push_back(sup_shell(box, r));
  std::vector<double> qg(n * R), ann(n * R);
  std::vector<std::vector<SolveReport>> reps(n);
  parallel_for(n, threads, [&](std::size_t s) {
    const auto a = sample(spec, box, SampleId{s});
    try {
      SolverConfig c = cfg;
      c.anchor = Anchor::mean_zero;
      auto G = green(a, 0, c);
      reps[s].push_back(G.report);
      for (std::size_t k = 0; k < R; ++k) {
        std::vector<double> v;
        for (Site x : shells[k]) v.push_back(G.value[x]);
        qg[s * R + k] = compensated_sum(v) / static_cast<double>(v.size());
      }
      std::vector<VectorField> gw;
      for (int j = 0; j < d; ++j) {
        ScalarField rhs(box);
        rhs[box.forward(0, j)] += 1.0;
        rhs[0] -= 1.0;
        auto w = cg_solve_checked(EllipticOperator(a), rhs, c, "mixed Green derivative");
        reps[s].push_back(w.report);
        gw.push_back(grad(w.value));
      }
      for (std::size_t k = 0; k < R; ++k) {
        std::vector<double> v;
        for (Site x : shells[k]) {
          double f2 = 0.0;
          for (int j = 0; j < d; ++j)
            for (int i = 0; i < d; ++i) f2 += gw[j](x, i) * gw[j](x, i);
          v.push_back(f2);
        }
        ann[s * R + k] = compensated_sum(v) / static_cast<double>(v.size());
      }
    } catch (const SolverError& e) {
      throw SampleFailure(s, e.what());
    }
  });

  GreenDecay g;
  g.radii = radii;
  std::vector<double> rx, am;
  for (std::size_t k = 0; k < R; ++k) {
    std::vector<double> q(n), v(n);
    for (std::size_t s = 0; s < n; ++s) {
      q[s] = qg[s * R + k];
      v[s] = ann[s * R + k];
    }
    g.quenched_profile.push_back(detail::sample_mean(q));
    g.annealed.push_back(moment_from_samples(v, 1.0));
    g.log_ratio_max = std::max(g.log_ratio_max, std::abs(g.quenched_profile.back()) / std::log(radii[k] + 2.0));
    rx.push_back(radii[k]);
    am.push_back(g.annealed.back().value);
  }
  if (d >= 3 && R >= 3) {
    std::vector<double> rr(rx.begin(), rx.end());
    g.quenched_fit = fit_power_with_offset(rr, g.quenched_profile);
  }
  if (R >= 2) g.annealed_fit = fit_loglog(rx, am);
  for (auto& r : reps) g.reports.insert(g.reports.end(), r.begin(), r.end());
  return g;
}

// ------------------------------------------------------------------ Meyers

struct MeyersResult {
  double ratio = 0.0;
  SolveReport report;
};

/// Weighted-norm ratio sum |grad v|^(2q) w / sum |grad h|^(2q) w with
/// w = (|x| + 1)^alpha_w and div*(a grad v) = div*(grad h).
inline MeyersResult meyers_ratio(const CoefficientField& a, const ScalarField& h, double q, double alpha_w,
                                 const SolverConfig& cfg) {
  require_same_box(a.box, h.box);
  if (!(q >= 1.0)) throw QuantError("Meyers exponent q must be >= 1");
  if (!(alpha_w >= 0.0)) throw QuantError("Meyers weight exponent must be >= 0");
  const Box& b = a.box;
  const auto gh = grad(h);
  auto v = cg_solve_checked(EllipticOperator(a), div_star(gh), cfg, "Meyers probe");
  const auto gv = grad(v.value);
  std::vector<double> num, den;
  for (Site x = 0; x < b.size(); ++x) {
    const double w = alpha_w == 0.0 ? 1.0 : std::pow(b.torus_norm(x) + 1.0, alpha_w);
    double sv = 0.0, sh = 0.0;
    for (int i = 0; i < b.dim(); ++i) {
      sv += gv(x, i) * gv(x, i);
      sh += gh(x, i) * gh(x, i);
    }
    num.push_back(w * std::pow(sv, q));
    den.push_back(w * std::pow(sh, q));
  }
  const double D = compensated_sum(den);
  if (D == 0.0) throw QuantError("Meyers probe needs a non-constant h");
  return {compensated_sum(num) / D, v.report};
}

struct MeyersProbe {
  double q = 1.1;
  double alpha_w = 0.1;
  std::vector<double> ratios;
  double median = 0.0;
  double max = 0.0;
  bool blow_up = false;  // max > 10 median
  std::vector<SolveReport> reports;
};

/// Ratios over n (a, h) pairs; h is white noise in [-1, 1].
inline MeyersProbe meyers_probe(const EnsembleSpec& spec, const Box& box, double q, double alpha_w, std::size_t n,
                                const SolverConfig& cfg, int threads = 1) {
  spec.validate_for(box);
  if (n < 1) throw QuantError("Meyers probe needs at least one sample");
  MeyersProbe out;
  out.q = q;
  out.alpha_w = alpha_w;
  out.ratios.resize(n);
  out.reports.resize(n);
  parallel_for(n, threads, [&](std::size_t s) {
    const auto a = sample(spec, box, SampleId{s});
    ScalarField h(box);
    const std::uint64_t key = detail::purpose_key(spec, s, 0x4d45);
    for (Site x = 0; x < box.size(); ++x) h[x] = 2.0 * to_unit(stream_draw(key, x)) - 1.0;
    try {
      const auto r = meyers_ratio(a, h, q, alpha_w, cfg);
      out.ratios[s] = r.ratio;
      out.reports[s] = r.report;
    } catch (const SolverError& e) {
      throw SampleFailure(s, e.what());
    }
  });
  std::vector<double> sorted = out.ratios;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  out.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  out.max = sorted.back();
  out.blow_up = out.max > 10.0 * out.median;
  return out;
}

// ---------------------------------------------------------------- Birkhoff

struct BirkhoffFit {
  std::vector<int> radii;
  std::vector<MomentEstimate> rms;  // E[|box mean - E a|^2]^(1/2)
  MomentEstimate marginal;          // the same for a single site (R = 1)
  std::vector<double> relative_rms;  // rms / marginal, compares laws with different site variances
  double mean_used = 0.0;
  double slope = 0.0;  // log rms against log R
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// RMS deviation of centered R-box averages of a_component from the ensemble mean.
inline BirkhoffFit birkhoff_rate(const EnsembleSpec& spec, const Box& box, const std::vector<int>& radii,
                                 std::size_t n, int component = 0, int threads = 1) {
  spec.validate_for(box);
  if (n < 2) throw QuantError("averaging rate needs at least two samples");
  if (component < 0 || component >= box.dim()) throw QuantError("component out of range");
  for (std::size_t k = 0; k < radii.size(); ++k) {
    if (radii[k] < 1 || radii[k] > box.side()) throw QuantError("averaging windows must satisfy 1 <= R <= L");
    if (k > 0 && radii[k] <= radii[k - 1]) throw QuantError("averaging windows must be strictly increasing");
  }
  const auto em = detail::stationary_entry_mean(spec);
  if (!em) throw QuantError("averaging rate needs a stationary law");
  const std::size_t R = radii.size();
  std::vector<double> dev(n * R), site(n);
  parallel_for(n, threads, [&](std::size_t s) {
    const auto a = sample(spec, box, SampleId{s});
    const double e1 = spatial_average_observable(a, 1, component) - *em;
    site[s] = e1 * e1;
    for (std::size_t k = 0; k < R; ++k) {
      const double e = spatial_average_observable(a, radii[k], component) - *em;
      dev[s * R + k] = e * e;
    }
  });
  BirkhoffFit out;
  out.radii = radii;
  out.mean_used = *em;
  out.marginal = moment_from_samples(site, 1.0);
  std::vector<double> lr, lv;
  for (std::size_t k = 0; k < R; ++k) {
    std::vector<double> v(n);
    for (std::size_t s = 0; s < n; ++s) v[s] = dev[s * R + k];
    out.rms.push_back(moment_from_samples(v, 1.0));
    out.relative_rms.push_back(out.marginal.value > 0.0 ? out.rms.back().value / out.marginal.value : 0.0);
    if (out.rms.back().value > 0.0) {
      lr.push_back(std::log(radii[k]));
      lv.push_back(std::log(out.rms.back().value));
    }
  }
  if (lr.size() >= 2) {
    const auto f = fit_line(lr, lv);
    out.slope = f.slope;
    out.intercept = f.intercept;
    out.r_squared = f.r_squared;
  }
  return out;
}

}  // namespace homoglab

#endif  // HOMOGLAB_QUANT_HPP
