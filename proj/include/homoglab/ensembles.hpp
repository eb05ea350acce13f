#ifndef HOMOGLAB_ENSEMBLES_HPP
#define HOMOGLAB_ENSEMBLES_HPP

// Seeded generators for stationary random diagonal coefficient fields.
//
// JSON schema of an ensemble document (all kinds accept "lambda" and "seed"):
//   {"kind": "constant",             "value": c}
//   {"kind": "iid-two-point",        "alpha": a, "beta": b}
//   {"kind": "iid-uniform",          "low": lo, "high": hi}
//   {"kind": "correlated-two-point", "alpha": a, "beta": b, "radius": r, "decay": s}
//   {"kind": "periodic-tile",        "tile_side": l, "tile": [l^d * d values, site-major]}
// Every diagonal entry is drawn independently; two-point entries take alpha or
// beta with probability 1/2 each. The correlated kind averages an
// iid-two-point base field with the kernel exp(-|k|/decay) restricted to
// |k|_inf <= radius and normalized to unit mass (periodic convolution).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "homoglab/lattice.hpp"
#include "homoglab/rng.hpp"

namespace homoglab {

class EnsembleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class EnsembleKind { constant, iid_two_point, iid_uniform, correlated_two_point, periodic_tile };

inline std::string to_string(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::constant: return "constant";
    case EnsembleKind::iid_two_point: return "iid-two-point";
    case EnsembleKind::iid_uniform: return "iid-uniform";
    case EnsembleKind::correlated_two_point: return "correlated-two-point";
    case EnsembleKind::periodic_tile: return "periodic-tile";
  }
  return "unknown";
}

inline EnsembleKind parse_kind(const std::string& s) {
  if (s == "constant") return EnsembleKind::constant;
  if (s == "iid-two-point") return EnsembleKind::iid_two_point;
  if (s == "iid-uniform") return EnsembleKind::iid_uniform;
  if (s == "correlated-two-point") return EnsembleKind::correlated_two_point;
  if (s == "periodic-tile") return EnsembleKind::periodic_tile;
  throw EnsembleError("unknown ensemble kind '" + s + "'");
}

struct SampleId {
  std::uint64_t index = 0;
};

struct EnsembleSpec {
  EnsembleKind kind = EnsembleKind::iid_two_point;
  double lambda = 0.2;
  double value = 0.5;
  double alpha = 0.25;
  double beta = 0.75;
  double low = 0.25;
  double high = 0.75;
  int radius = 0;
  double decay = 1.0;
  int tile_side = 1;
  std::vector<double> tile;
  std::uint64_t master_seed = 0;

  static EnsembleSpec constant_field(double c, double lambda = 0.2) {
    EnsembleSpec s;
    s.kind = EnsembleKind::constant;
    s.value = c;
    s.lambda = lambda;
    return s;
  }
  static EnsembleSpec two_point(double a, double b, std::uint64_t seed, double lambda = 0.2) {
    EnsembleSpec s;
    s.kind = EnsembleKind::iid_two_point;
    s.alpha = a;
    s.beta = b;
    s.master_seed = seed;
    s.lambda = lambda;
    return s;
  }

  bool is_iid() const {
    return kind == EnsembleKind::iid_two_point || kind == EnsembleKind::iid_uniform || kind == EnsembleKind::constant;
  }

  /// Throws EnsembleError unless the parameters define a law with entries in (lambda, 1).
  void validate(int d) const {
    auto inside = [&](double v, const char* what) {
      if (!(v > lambda && v < 1.0))
        throw EnsembleError(std::string(what) + " must lie strictly inside (lambda, 1)");
    };
    if (!(lambda > 0.0 && lambda < 1.0)) throw EnsembleError("lambda must lie in (0, 1)");
    switch (kind) {
      case EnsembleKind::constant: inside(value, "value"); break;
      case EnsembleKind::iid_two_point:
      case EnsembleKind::correlated_two_point:
        inside(alpha, "alpha");
        inside(beta, "beta");
        if (alpha > beta) throw EnsembleError("two-point values need alpha <= beta");
        if (kind == EnsembleKind::correlated_two_point) {
          if (radius < 0) throw EnsembleError("kernel radius must be non-negative");
          if (!(decay > 0.0)) throw EnsembleError("kernel decay must be positive");
        }
        break;
      case EnsembleKind::iid_uniform:
        inside(low, "low");
        inside(high, "high");
        if (!(low < high)) throw EnsembleError("uniform law needs low < high");
        break;
      case EnsembleKind::periodic_tile: {
        if (tile_side < 1) throw EnsembleError("tile side must be positive");
        std::size_t cells = 1;
        for (int k = 0; k < d; ++k) cells *= static_cast<std::size_t>(tile_side);
        if (tile.empty()) throw EnsembleError("periodic tile is empty");
        if (tile.size() != cells * d) throw EnsembleError("periodic tile must hold tile_side^d * d values");
        for (double v : tile) inside(v, "tile entry");
        break;
      }
    }
  }

  void validate_for(const Box& box) const {
    validate(box.dim());
    if (kind == EnsembleKind::correlated_two_point && 2 * radius + 1 > box.side())
      throw EnsembleError("kernel diameter exceeds the box");
    if (kind == EnsembleKind::periodic_tile && box.side() % tile_side != 0)
      throw EnsembleError("tile side must divide the box side");
  }

  /// E[a_i(x)], identical for all i and x by stationarity.
  double expected_entry() const {
    switch (kind) {
      case EnsembleKind::constant: return value;
      case EnsembleKind::iid_two_point:
      case EnsembleKind::correlated_two_point: return 0.5 * (alpha + beta);
      case EnsembleKind::iid_uniform: return 0.5 * (low + high);
      case EnsembleKind::periodic_tile: {
        double s = 0.0;
        for (double v : tile) s += v;
        return s / static_cast<double>(tile.size());
      }
    }
    return 0.0;
  }

  /// Var(a_i(x)) of the single-site marginal (iid kinds).
  double entry_variance() const {
    switch (kind) {
      case EnsembleKind::constant: return 0.0;
      case EnsembleKind::iid_two_point: return 0.25 * (beta - alpha) * (beta - alpha);
      case EnsembleKind::iid_uniform: return (high - low) * (high - low) / 12.0;
      default: throw EnsembleError("entry variance is only tabulated for iid kinds");
    }
  }

  /// Values a single diagonal entry can take, when the law has finite support.
  std::optional<std::vector<double>> entry_support() const {
    if (kind == EnsembleKind::constant) return std::vector<double>{value};
    if (kind == EnsembleKind::iid_two_point) return std::vector<double>{alpha, beta};
    return std::nullopt;
  }

  /// One draw of a single diagonal entry from the iid marginal.
  double draw_entry(std::uint64_t bits) const {
    switch (kind) {
      case EnsembleKind::constant: return value;
      case EnsembleKind::iid_two_point:
      case EnsembleKind::correlated_two_point: return (bits >> 63) ? beta : alpha;
      case EnsembleKind::iid_uniform: return low + (high - low) * to_unit(bits);
      case EnsembleKind::periodic_tile: break;
    }
    throw EnsembleError("periodic tiles have no single-site marginal");
  }
};

inline nlohmann::json to_json(const EnsembleSpec& s) {
  nlohmann::json j{{"kind", to_string(s.kind)}, {"lambda", s.lambda}, {"seed", s.master_seed}};
  switch (s.kind) {
    case EnsembleKind::constant: j["value"] = s.value; break;
    case EnsembleKind::iid_two_point:
      j["alpha"] = s.alpha;
      j["beta"] = s.beta;
      break;
    case EnsembleKind::iid_uniform:
      j["low"] = s.low;
      j["high"] = s.high;
      break;
    case EnsembleKind::correlated_two_point:
      j["alpha"] = s.alpha;
      j["beta"] = s.beta;
      j["radius"] = s.radius;
      j["decay"] = s.decay;
      break;
    case EnsembleKind::periodic_tile:
      j["tile_side"] = s.tile_side;
      j["tile"] = s.tile;
      break;
  }
  return j;
}

inline EnsembleSpec ensemble_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw EnsembleError("ensemble document must be a JSON object");
  EnsembleSpec s;
  try {
    s.kind = parse_kind(j.at("kind").get<std::string>());
    s.lambda = j.value("lambda", s.lambda);
    s.master_seed = j.value("seed", std::uint64_t{0});
    switch (s.kind) {
      case EnsembleKind::constant: s.value = j.at("value").get<double>(); break;
      case EnsembleKind::iid_two_point:
        s.alpha = j.value("alpha", s.alpha);
        s.beta = j.value("beta", s.beta);
        break;
      case EnsembleKind::iid_uniform:
        s.low = j.at("low").get<double>();
        s.high = j.at("high").get<double>();
        break;
      case EnsembleKind::correlated_two_point:
        s.alpha = j.value("alpha", s.alpha);
        s.beta = j.value("beta", s.beta);
        s.radius = j.at("radius").get<int>();
        s.decay = j.value("decay", s.decay);
        break;
      case EnsembleKind::periodic_tile:
        s.tile_side = j.at("tile_side").get<int>();
        s.tile = j.at("tile").get<std::vector<double>>();
        break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw EnsembleError(std::string("malformed ensemble document: ") + e.what());
  }
  return s;
}

namespace detail {

inline CoefficientField iid_field(const EnsembleSpec& spec, const Box& box, std::uint64_t key) {
  CoefficientField a(box);
  for (std::size_t k = 0; k < a.diag.size(); ++k) a.diag[k] = spec.draw_entry(stream_draw(key, k));
  return a;
}

/// Normalized kernel weights on the offsets {-r..r}^d, site-major over offsets.
inline std::vector<std::pair<std::array<int, 3>, double>> correlation_kernel(const EnsembleSpec& spec, int d) {
  std::vector<std::pair<std::array<int, 3>, double>> w;
  const int r = spec.radius;
  const int r2 = d >= 2 ? r : 0;
  const int r3 = d >= 3 ? r : 0;
  double total = 0.0;
  for (int k3 = -r3; k3 <= r3; ++k3)
    for (int k2 = -r2; k2 <= r2; ++k2)
      for (int k1 = -r; k1 <= r; ++k1) {
        const double len = std::sqrt(double(k1) * k1 + double(k2) * k2 + double(k3) * k3);
        const double v = std::exp(-len / spec.decay);
        w.push_back({{k1, k2, k3}, v});
        total += v;
      }
  for (auto& [off, v] : w) v /= total;
  return w;
}

}  // namespace detail

/// Deterministic in (spec, box, id).
inline CoefficientField sample(const EnsembleSpec& spec, const Box& box, SampleId id) {
  spec.validate_for(box);
  const std::uint64_t key = sample_key(spec.master_seed, id.index);
  switch (spec.kind) {
    case EnsembleKind::constant: return CoefficientField(box, spec.value);
    case EnsembleKind::iid_two_point:
    case EnsembleKind::iid_uniform: return detail::iid_field(spec, box, key);
    case EnsembleKind::correlated_two_point: {
      const CoefficientField base = detail::iid_field(spec, box, key);
      const auto kernel = detail::correlation_kernel(spec, box.dim());
      CoefficientField a(box);
      const int d = box.dim();
      for (Site x = 0; x < box.size(); ++x)
        for (int i = 0; i < d; ++i) {
          double s = 0.0;
          for (const auto& [off, w] : kernel) s += w * base(box.shift(x, off), i);
          a(x, i) = s;
        }
      return a;
    }
    case EnsembleKind::periodic_tile: {
      CoefficientField a(box);
      const int d = box.dim();
      for (Site x = 0; x < box.size(); ++x) {
        auto c = box.coords(x);
        std::size_t t = 0;
        for (int k = d - 1; k >= 0; --k) t = t * spec.tile_side + static_cast<std::size_t>(c[k] % spec.tile_side);
        for (int i = 0; i < d; ++i) a(x, i) = spec.tile[t * d + i];
      }
      return a;
    }
  }
  throw EnsembleError("unhandled ensemble kind");
}

/// All fields that agree with `field` off site x, enumerating every
/// combination of support values for the d diagonal entries at x.
inline std::vector<CoefficientField> site_variants(const EnsembleSpec& spec, const CoefficientField& field, Site x) {
  const auto support = spec.entry_support();
  if (!support) throw EnsembleError("site variants need a finite-support iid law; use inner Monte Carlo");
  const int d = field.box.dim();
  const std::size_t m = support->size();
  std::size_t count = 1;
  for (int i = 0; i < d; ++i) count *= m;
  std::vector<CoefficientField> out;
  out.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    CoefficientField v = field;
    std::size_t rest = c;
    for (int i = 0; i < d; ++i) {
      v(x, i) = (*support)[rest % m];
      rest /= m;
    }
    out.push_back(std::move(v));
  }
  return out;
}

/// Average of a_component over the R-sub-box centered in the box.
inline double spatial_average_observable(const CoefficientField& field, int R, int component = 0) {
  const Box& b = field.box;
  if (R < 1 || R > b.side()) throw EnsembleError("averaging window must satisfy 1 <= R <= L");
  const int start = (b.side() - R) / 2;
  const int d = b.dim();
  const int R2 = d >= 2 ? R : 1;
  const int R3 = d >= 3 ? R : 1;
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(R) * R2 * R3);
  for (int k3 = 0; k3 < R3; ++k3)
    for (int k2 = 0; k2 < R2; ++k2)
      for (int k1 = 0; k1 < R; ++k1) {
        std::array<int, 3> c{start + k1, d >= 2 ? start + k2 : 0, d >= 3 ? start + k3 : 0};
        vals.push_back(field(b.index(c), component));
      }
  return compensated_sum(vals) / static_cast<double>(vals.size());
}

/// The field translated by z: (tau_z a)(x) = a(x + z).
inline CoefficientField shifted(const CoefficientField& a, const std::array<int, 3>& z) {
  CoefficientField out(a.box);
  const int d = a.box.dim();
  for (Site x = 0; x < a.box.size(); ++x) {
    const Site y = a.box.shift(x, z);
    for (int i = 0; i < d; ++i) out(x, i) = a(y, i);
  }
  return out;
}

}  // namespace homoglab

#endif  // HOMOGLAB_ENSEMBLES_HPP
