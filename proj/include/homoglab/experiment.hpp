#ifndef HOMOGLAB_EXPERIMENT_HPP
#define HOMOGLAB_EXPERIMENT_HPP

// Experiment driver: config parsing and validation, dispatch to the
// modules, atomic CSV/JSON outputs, run manifests and replay.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "homoglab/correctors.hpp"
#include "homoglab/elliptic.hpp"
#include "homoglab/ensembles.hpp"
#include "homoglab/field_io.hpp"
#include "homoglab/oned.hpp"
#include "homoglab/quant.hpp"
#include "homoglab/twoscale.hpp"

namespace homoglab {

inline constexpr const char* kArtifactVersion = "0.1.0";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ExperimentKind { oned, cell, ahom, corrector, twoscale, growth, sg, semigroup, green, meyers, birkhoff };

inline const std::vector<std::pair<ExperimentKind, std::string>>& experiment_names() {
  static const std::vector<std::pair<ExperimentKind, std::string>> names{
      {ExperimentKind::oned, "oned"},         {ExperimentKind::cell, "cell"},
      {ExperimentKind::ahom, "ahom"},         {ExperimentKind::corrector, "corrector"},
      {ExperimentKind::twoscale, "twoscale"}, {ExperimentKind::growth, "growth"},
      {ExperimentKind::sg, "sg"},             {ExperimentKind::semigroup, "semigroup"},
      {ExperimentKind::green, "green"},       {ExperimentKind::meyers, "meyers"},
      {ExperimentKind::birkhoff, "birkhoff"}};
  return names;
}

inline std::string to_string(ExperimentKind k) {
  for (const auto& [kind, name] : experiment_names())
    if (kind == k) return name;
  return "?";
}

inline ExperimentKind parse_experiment(const std::string& s) {
  for (const auto& [kind, name] : experiment_names())
    if (name == s) return kind;
  throw ConfigError("unknown experiment '" + s + "'");
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::ahom;
  std::optional<EnsembleSpec> ensemble;  // unset for oned
  int d = 2;
  int L = 32;
  std::uint64_t seed = 0;
  std::size_t samples = 1;
  SolverConfig solver;
  nlohmann::json params = nlohmann::json::object();  // kind-specific, defaults filled in
  std::string output;
};

// ------------------------------------------------------------------ parsing

namespace detail {

using nlohmann::json;

inline void allow_keys(const json& j, const std::vector<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  return j.contains(key) ? get_as<T>(j, key, where) : fallback;
}

inline std::vector<int> powers_of_two(int lo, int hi) {
  std::vector<int> r;
  for (int v = lo; v <= hi; v *= 2) r.push_back(v);
  return r;
}

inline json sample_size_default(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::ahom: return 64;
    case ExperimentKind::twoscale: return 50;
    case ExperimentKind::growth: return 100;
    case ExperimentKind::sg: return 2000;
    case ExperimentKind::semigroup: return 1000;
    case ExperimentKind::green: return 20;
    case ExperimentKind::meyers: return 50;
    case ExperimentKind::birkhoff: return 500;
    default: return 1;
  }
}

/// Fills defaults and checks types and ranges of the kind-specific block.
inline json normalize_params(ExperimentKind kind, const json& in, int d, int L) {
  const std::string where = "params";
  json p = json::object();
  switch (kind) {
    case ExperimentKind::oned: {
      allow_keys(in, {"eps", "nodes_per_period", "coefficient", "load"}, where);
      p["eps"] = get_or<std::vector<double>>(in, "eps", {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128}, where);
      p["nodes_per_period"] = get_or<int>(in, "nodes_per_period", 256, where);
      json c = in.value("coefficient", json{{"kind", "sine"}});
      allow_keys(c, {"kind", "mean", "amplitude", "values"}, "params.coefficient");
      const auto ck = get_or<std::string>(c, "kind", "sine", "params.coefficient");
      if (ck == "sine") {
        c = {{"kind", "sine"},
             {"mean", get_or<double>(c, "mean", 2.0, "params.coefficient")},
             {"amplitude", get_or<double>(c, "amplitude", 1.0, "params.coefficient")}};
        if (!(std::abs(c["amplitude"].get<double>()) < c["mean"].get<double>()))
          throw ConfigError("sine coefficient needs |amplitude| < mean");
      } else if (ck == "laminate") {
        const auto v = get_as<std::vector<double>>(c, "values", "params.coefficient");
        if (v.empty()) throw ConfigError("laminate coefficient needs values");
        for (double x : v)
          if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError("laminate values must be positive");
        c = {{"kind", "laminate"}, {"values", v}};
      } else {
        throw ConfigError("unknown 1D coefficient kind '" + ck + "'");
      }
      p["coefficient"] = c;
      json f = in.value("load", json{{"kind", "linear"}});
      allow_keys(f, {"kind", "value"}, "params.load");
      const auto fk = get_or<std::string>(f, "kind", "linear", "params.load");
      if (fk == "linear") f = {{"kind", "linear"}};
      else if (fk == "constant") f = {{"kind", "constant"}, {"value", get_or<double>(f, "value", 1.0, "params.load")}};
      else throw ConfigError("unknown 1D load kind '" + fk + "'");
      p["load"] = f;
      const auto eps = p["eps"].get<std::vector<double>>();
      if (eps.size() < 2) throw ConfigError("oned needs at least two eps values");
      for (double e : eps) {
        const double m = 1.0 / e;
        if (!(e > 0.0) || std::abs(m - std::round(m)) > 1e-9) throw ConfigError("each eps must be 1/m for an integer m");
      }
      if (p["nodes_per_period"].get<int>() < 8) throw ConfigError("nodes_per_period must be at least 8");
      break;
    }
    case ExperimentKind::cell:
      allow_keys(in, {"sample"}, where);
      p["sample"] = get_or<std::uint64_t>(in, "sample", 0, where);
      break;
    case ExperimentKind::ahom: allow_keys(in, {}, where); break;
    case ExperimentKind::corrector:
      allow_keys(in, {"dir", "sample"}, where);
      p["dir"] = get_or<int>(in, "dir", 0, where);
      p["sample"] = get_or<std::uint64_t>(in, "sample", 0, where);
      if (p["dir"].get<int>() < 0 || p["dir"].get<int>() >= d) throw ConfigError("corrector direction out of range");
      break;
    case ExperimentKind::twoscale: {
      allow_keys(in, {"alpha", "load_period", "ahom", "sigma_method"}, where);
      p["alpha"] = get_or<double>(in, "alpha", 0.1, where);
      p["load_period"] = get_or<int>(in, "load_period", L, where);
      p["ahom"] = get_or<std::string>(in, "ahom", "rve", where);
      p["sigma_method"] = get_or<std::string>(in, "sigma_method", "cg", where);
      if (!(p["alpha"].get<double>() > 0.0)) throw ConfigError("twoscale alpha must be positive");
      const int P = p["load_period"].get<int>();
      if (P < 2 || L % P != 0) throw ConfigError("load_period must be at least 2 and divide L");
      if (p["ahom"] != "rve" && p["ahom"] != "cell") throw ConfigError("ahom must be 'rve' or 'cell'");
      if (p["sigma_method"] != "cg" && p["sigma_method"] != "spectral")
        throw ConfigError("sigma_method must be 'cg' or 'spectral'");
      break;
    }
    case ExperimentKind::growth:
      allow_keys(in, {"radii", "p"}, where);
      p["radii"] = get_or<std::vector<int>>(in, "radii", powers_of_two(2, L / 4), where);
      p["p"] = get_or<double>(in, "p", 1.0, where);
      try {
        check_radii(p["radii"].get<std::vector<int>>(), L, "growth");
      } catch (const QuantError& e) {
        throw ConfigError(e.what());
      }
      if (!(p["p"].get<double>() >= 1.0)) throw ConfigError("moment order p must be >= 1");
      break;
    case ExperimentKind::sg: {
      allow_keys(in, {"functionals", "R", "inner", "bootstrap"}, where);
      p["functionals"] = get_or<std::vector<std::string>>(in, "functionals", {"single-site", "box-average", "ahom-cell"},
                                                          where);
      p["R"] = get_or<int>(in, "R", std::max(1, L / 2), where);
      p["inner"] = get_or<std::size_t>(in, "inner", 64, where);
      p["bootstrap"] = get_or<std::size_t>(in, "bootstrap", 1000, where);
      for (const auto& f : p["functionals"])
        if (f != "single-site" && f != "box-average" && f != "ahom-cell")
          throw ConfigError("unknown functional '" + f.get<std::string>() + "'");
      if (p["R"].get<int>() < 1 || p["R"].get<int>() > L) throw ConfigError("R must satisfy 1 <= R <= L");
      break;
    }
    case ExperimentKind::semigroup: {
      allow_keys(in, {"times", "functional", "R"}, where);
      std::vector<double> dt;
      for (double t = 1.0; t <= (L / 8.0) * (L / 8.0); t *= 4.0) dt.push_back(t);
      p["times"] = get_or<std::vector<double>>(in, "times", dt, where);
      p["functional"] = get_or<std::string>(in, "functional", "single-site", where);
      p["R"] = get_or<int>(in, "R", 2, where);
      const auto ts = p["times"].get<std::vector<double>>();
      if (ts.empty()) throw ConfigError("semigroup needs a time grid");
      for (std::size_t k = 0; k < ts.size(); ++k) {
        if (!(ts[k] > 0.0) || ts[k] > (L / 8.0) * (L / 8.0))
          throw ConfigError("semigroup times must lie in (0, (L/8)^2]");
        if (k > 0 && ts[k] <= ts[k - 1]) throw ConfigError("semigroup times must be strictly increasing");
      }
      if (p["functional"] != "single-site" && p["functional"] != "box-average")
        throw ConfigError("semigroup functional must be 'single-site' or 'box-average'");
      if (p["R"].get<int>() < 1 || p["R"].get<int>() > L) throw ConfigError("R must satisfy 1 <= R <= L");
      break;
    }
    case ExperimentKind::green:
      allow_keys(in, {"radii"}, where);
      p["radii"] = get_or<std::vector<int>>(in, "radii", powers_of_two(2, L / 4), where);
      if (d < 2) throw ConfigError("green needs d in {2, 3}");
      try {
        check_radii(p["radii"].get<std::vector<int>>(), L, "green");
      } catch (const QuantError& e) {
        throw ConfigError(e.what());
      }
      break;
    case ExperimentKind::meyers:
      allow_keys(in, {"q", "alpha_w"}, where);
      p["q"] = get_or<double>(in, "q", 1.1, where);
      p["alpha_w"] = get_or<double>(in, "alpha_w", 0.1, where);
      if (!(p["q"].get<double>() >= 1.0)) throw ConfigError("Meyers q must be >= 1");
      if (!(p["alpha_w"].get<double>() >= 0.0)) throw ConfigError("Meyers alpha_w must be >= 0");
      break;
    case ExperimentKind::birkhoff: {
      allow_keys(in, {"radii", "component"}, where);
      p["radii"] = get_or<std::vector<int>>(in, "radii", powers_of_two(1, L / 2), where);
      p["component"] = get_or<int>(in, "component", 0, where);
      const auto r = p["radii"].get<std::vector<int>>();
      if (r.empty()) throw ConfigError("birkhoff needs averaging windows");
      for (std::size_t k = 0; k < r.size(); ++k) {
        if (r[k] < 1 || r[k] > L) throw ConfigError("averaging windows must satisfy 1 <= R <= L");
        if (k > 0 && r[k] <= r[k - 1]) throw ConfigError("averaging windows must be strictly increasing");
      }
      if (p["component"].get<int>() < 0 || p["component"].get<int>() >= d) throw ConfigError("component out of range");
      break;
    }
  }
  return p;
}

}  // namespace detail

/// Validates a config document and fills every default. Throws ConfigError.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::get_as;
  using detail::get_or;
  detail::allow_keys(j, {"experiment", "seed", "ensemble", "box", "samples", "solver", "params", "output"}, "config");
  ExperimentConfig c;
  if (!j.contains("experiment")) throw ConfigError("config needs an 'experiment'");
  c.kind = parse_experiment(get_as<std::string>(j, "experiment", "config"));

  std::optional<std::uint64_t> seed;
  if (j.contains("seed")) seed = get_as<std::uint64_t>(j, "seed", "config");
  if (c.kind != ExperimentKind::oned) {
    if (!j.contains("ensemble")) throw ConfigError("config needs an 'ensemble'");
    const auto& e = j.at("ensemble");
    try {
      c.ensemble = ensemble_from_json(e);
    } catch (const EnsembleError& err) {
      throw ConfigError(err.what());
    }
    if (e.is_object() && e.contains("seed")) {
      if (seed && *seed != c.ensemble->master_seed) throw ConfigError("config seed and ensemble seed disagree");
      seed = c.ensemble->master_seed;
    }
  }
  if (!seed && c.kind != ExperimentKind::oned) throw ConfigError("a master seed is mandatory");
  c.seed = seed.value_or(0);
  if (c.ensemble) c.ensemble->master_seed = c.seed;

  const auto box = j.value("box", nlohmann::json::object());
  detail::allow_keys(box, {"d", "L"}, "box");
  c.d = get_or<int>(box, "d", 2, "box");
  c.L = get_or<int>(box, "L", 32, "box");
  if (c.d < 1 || c.d > 3) throw ConfigError("box.d must be 1, 2 or 3");
  if (c.L < 2) throw ConfigError("box.L must be at least 2");

  c.samples = j.contains("samples") ? get_as<std::size_t>(j, "samples", "config")
                                    : detail::sample_size_default(c.kind).get<std::size_t>();
  if (c.samples < 1) throw ConfigError("samples must be positive");
  if ((c.kind == ExperimentKind::ahom || c.kind == ExperimentKind::growth || c.kind == ExperimentKind::sg ||
       c.kind == ExperimentKind::semigroup || c.kind == ExperimentKind::birkhoff) &&
      c.samples < 2)
    throw ConfigError("this experiment needs at least two samples");

  const auto s = j.value("solver", nlohmann::json::object());
  detail::allow_keys(s, {"tol", "max_iter", "preconditioner"}, "solver");
  c.solver.tol = get_or<double>(s, "tol", 1e-10, "solver");
  if (s.contains("max_iter") && !s.at("max_iter").is_null()) c.solver.max_iter = get_as<std::size_t>(s, "max_iter", "solver");
  const auto pc = get_or<std::string>(s, "preconditioner", "none", "solver");
  if (pc == "none") c.solver.precond = Preconditioner::none;
  else if (pc == "spectral") c.solver.precond = Preconditioner::spectral;
  else throw ConfigError("solver.preconditioner must be 'none' or 'spectral'");
  if (!(c.solver.tol > 0.0) || !(c.solver.tol < 1.0)) throw ConfigError("solver.tol must lie in (0, 1)");
  if (c.solver.max_iter && *c.solver.max_iter == 0) throw ConfigError("solver.max_iter must be positive");

  c.params = detail::normalize_params(c.kind, j.value("params", nlohmann::json::object()), c.d, c.L);
  c.output = get_or<std::string>(j, "output", "", "config");

  if (c.ensemble) {
    try {
      c.ensemble->validate_for(Box(c.d, c.L));
    } catch (const EnsembleError& e) {
      throw ConfigError(e.what());
    } catch (const LatticeError& e) {
      throw ConfigError(e.what());
    }
    if (c.kind == ExperimentKind::sg && !c.ensemble->is_iid()) throw ConfigError("sg needs an iid ensemble");
    if ((c.kind == ExperimentKind::semigroup || c.kind == ExperimentKind::birkhoff) &&
        c.ensemble->kind == EnsembleKind::periodic_tile)
      throw ConfigError("this experiment needs a stationary random ensemble");
  }
  return c;
}

/// Canonical document: every default explicit, keys sorted.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j{{"experiment", to_string(c.kind)}, {"seed", c.seed}, {"params", c.params}};
  if (c.kind != ExperimentKind::oned) {
    j["ensemble"] = to_json(*c.ensemble);
    j["ensemble"].erase("seed");
    j["box"] = {{"d", c.d}, {"L", c.L}};
    j["samples"] = c.samples;
    j["solver"] = {{"tol", c.solver.tol},
                   {"max_iter", c.solver.max_iter ? nlohmann::json(*c.solver.max_iter) : nlohmann::json(nullptr)},
                   {"preconditioner", c.solver.precond == Preconditioner::spectral ? "spectral" : "none"}};
  }
  if (!c.output.empty()) j["output"] = c.output;
  return j;
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of the canonical config without the output path.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("output");
  return fnv1a_hex(j.dump());
}

// ------------------------------------------------------------------ outputs

inline nlohmann::json to_json(const SolveReport& r) {
  return {{"iterations", r.iterations},
          {"final_relative_residual", r.final_relative_residual},
          {"converged", r.converged},
          {"removed_rhs_mean", r.removed_rhs_mean}};
}

inline nlohmann::json to_json(const MomentEstimate& m) {
  return {{"value", m.value}, {"stderr", m.stderr_}, {"p", m.p}, {"n", m.n}};
}

inline nlohmann::json matrix_rows(const Matrix& A) {
  nlohmann::json rows = nlohmann::json::array();
  for (int j = 0; j < A.d; ++j) {
    nlohmann::json row = nlohmann::json::array();
    for (int i = 0; i < A.d; ++i) row.push_back(A(j, i));
    rows.push_back(row);
  }
  return rows;
}

/// Columns for an optional gnuplot script.
struct PlotTable {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  bool logx = false;
  bool logy = false;
  std::vector<std::string> columns;  // first column is the abscissa
  std::vector<std::vector<double>> rows;
};

struct OutputFile {
  std::string name;  // relative to the manifest directory
  std::string content;
};

struct RunOutput {
  std::vector<OutputFile> files;
  nlohmann::json summary = nlohmann::json::object();
  nlohmann::json reports = nlohmann::json::array();
  nlohmann::json stages = nlohmann::json::array();
  PlotTable plot;
};

inline std::string gnuplot_script(const PlotTable& t, const std::string& kind) {
  std::ostringstream os;
  os << "# homoglab " << kind << "\n$data << EOD\n";
  for (std::size_t k = 0; k < t.columns.size(); ++k) os << (k ? " " : "# ") << t.columns[k];
  os << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t k = 0; k < r.size(); ++k) os << (k ? " " : "") << format_double(r[k]);
    os << '\n';
  }
  os << "EOD\n";
  os << "set title \"" << t.title << "\"\nset xlabel \"" << t.xlabel << "\"\nset ylabel \"" << t.ylabel << "\"\n";
  if (t.logx) os << "set logscale x\n";
  if (t.logy) os << "set logscale y\n";
  os << "plot ";
  for (std::size_t k = 1; k < t.columns.size(); ++k)
    os << (k > 1 ? ", " : "") << "$data using 1:" << (k + 1) << " with linespoints title \"" << t.columns[k] << "\"";
  os << '\n';
  return os.str();
}

/// Writes via a temporary file in the same directory, then renames.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os << content;
    os.flush();
    if (!os) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------------ compute

namespace detail {

class StageClock {
 public:
  explicit StageClock(nlohmann::json& stages) : stages_(stages) {}
  template <class F>
  auto operator()(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = f();
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stages_.push_back({{"stage", name}, {"wall_seconds", dt}});
    return r;
  }

 private:
  nlohmann::json& stages_;
};

inline std::string csv_row(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t k = 0; k < cells.size(); ++k) s += (k ? "," : "") + cells[k];
  return s + '\n';
}

inline Profile1D oned_profile(const nlohmann::json& p) {
  Profile1D prof;
  const auto& c = p.at("coefficient");
  if (c.at("kind") == "sine") {
    const double m = c.at("mean").get<double>(), amp = c.at("amplitude").get<double>();
    prof.a_unit = [m, amp](double y) { return m + amp * std::sin(2.0 * std::numbers::pi * y); };
  } else {
    const auto v = c.at("values").get<std::vector<double>>();
    prof.a_unit = [v](double y) {
      const double t = y - std::floor(y);
      const auto k = std::min(v.size() - 1, static_cast<std::size_t>(t * static_cast<double>(v.size())));
      return v[k];
    };
  }
  const auto& f = p.at("load");
  if (f.at("kind") == "linear") {
    prof.f = [](double x) { return -3.0 * (2.0 * x - 1.0); };
  } else {
    const double val = f.at("value").get<double>();
    prof.f = [val](double) { return val; };
  }
  prof.nodes_per_period = p.at("nodes_per_period").get<int>();
  return prof;
}

inline std::string dump_report(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace detail

/// Runs the experiment in memory. Outputs are byte-deterministic in the
/// config for any thread count.
inline RunOutput compute(const ExperimentConfig& c, int threads) {
  RunOutput out;
  detail::StageClock clock(out.stages);
  const std::string name =
      c.output.empty() ? "output" : std::filesystem::path(c.output).filename().string();
  const auto& P = c.params;
  nlohmann::json head{{"experiment", to_string(c.kind)}, {"seed", c.seed}, {"config", to_json(c)},
                      {"version", kArtifactVersion}};
  head["config"].erase("output");
  auto add_reports = [&](const std::vector<SolveReport>& rs) {
    for (const auto& r : rs) out.reports.push_back(to_json(r));
  };
  auto report_array = [](const std::vector<SolveReport>& rs) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : rs) a.push_back(to_json(r));
    return a;
  };
  const Box box = c.kind == ExperimentKind::oned ? Box(1, 2) : Box(c.d, c.L);

  switch (c.kind) {
    case ExperimentKind::oned: {
      const auto rep = clock("oned", [&] {
        return oned_pipeline(detail::oned_profile(P), P.at("eps").get<std::vector<double>>());
      });
      std::string csv = detail::csv_row({"eps", "sup_error", "h1_twoscale_error", "bound_rhs", "ratio", "bound_rhs_sq",
                                         "ratio_sq", "strong_gradient_error"});
      for (const auto& r : rep.rows) {
        csv += detail::csv_row({format_double(r.eps), format_double(r.sup_error), format_double(r.two_scale.error),
                                format_double(r.two_scale.bound_rhs), format_double(r.two_scale.ratio),
                                format_double(r.two_scale.bound_rhs_sq), format_double(r.two_scale.ratio_sq),
                                format_double(r.strong_gradient_error)});
        out.plot.rows.push_back({r.eps, r.sup_error, r.two_scale.error});
      }
      out.files.push_back({name, csv});
      out.summary = {{"a0", rep.a0},
                     {"sup_rate", rep.sup_rate.slope},
                     {"sup_rate_r_squared", rep.sup_rate.r_squared},
                     {"halving_ratios", rep.halving_ratios}};
      out.plot = {"1D homogenization errors", "eps", "error", true, true, {"eps", "sup_error", "h1_twoscale_error"},
                  out.plot.rows};
      break;
    }
    case ExperimentKind::cell: {
      const auto id = P.at("sample").get<std::uint64_t>();
      const auto A = clock("cell", [&] { return ahom_cell(sample(*c.ensemble, box, SampleId{id}), c.solver); });
      auto j = head;
      j["sample"] = id;
      j["matrix"] = matrix_rows(A.matrix);
      j["solver_reports"] = report_array(A.reports);
      add_reports(A.reports);
      out.files.push_back({name, detail::dump_report(j)});
      out.summary = {{"matrix", matrix_rows(A.matrix)}};
      for (int i = 0; i < c.d; ++i) out.plot.rows.push_back({double(i), A.matrix(i, i)});
      out.plot = {"cell homogenized matrix diagonal", "i", "entry", false, false, {"i", "a_hom_ii"}, out.plot.rows};
      break;
    }
    case ExperimentKind::ahom: {
      const auto A = clock("rve", [&] { return ahom_rve(*c.ensemble, box, c.samples, c.solver, threads); });
      auto j = head;
      j["matrix"] = matrix_rows(A.matrix);
      j["stderr"] = matrix_rows(A.stderr_);
      j["n"] = A.n_samples;
      j["solver_reports"] = report_array(A.reports);
      add_reports(A.reports);
      out.files.push_back({name, detail::dump_report(j)});
      out.summary = {{"matrix", matrix_rows(A.matrix)}, {"stderr", matrix_rows(A.stderr_)}};
      for (int i = 0; i < c.d; ++i) out.plot.rows.push_back({double(i), A.matrix(i, i), A.stderr_(i, i)});
      out.plot = {"RVE homogenized matrix diagonal", "i", "entry", false, false, {"i", "a_hom_ii", "stderr"},
                  out.plot.rows};
      break;
    }
    case ExperimentKind::corrector: {
      const auto id = P.at("sample").get<std::uint64_t>();
      const int dir = P.at("dir").get<int>();
      const auto set = clock("corrector", [&] {
        try {
          return corrector_set(sample(*c.ensemble, box, SampleId{id}), dir, c.solver);
        } catch (const SolverError& e) {
          throw SampleFailure(id, e.what());
        }
      });
      std::vector<std::string> cols{"sample", "site"};
      for (int k = 0; k < c.d; ++k) cols.push_back("x" + std::to_string(k + 1));
      cols.push_back("phi");
      for (int k = 0; k < c.d; ++k) cols.push_back("q" + std::to_string(k + 1));
      for (int j = 0; j < c.d; ++j)
        for (int k = j + 1; k < c.d; ++k) cols.push_back("sigma" + std::to_string(j + 1) + std::to_string(k + 1));
      std::string csv = detail::csv_row(cols);
      for (Site x = 0; x < box.size(); ++x) {
        const auto co = box.coords(x);
        std::vector<std::string> r{std::to_string(id), std::to_string(x)};
        for (int k = 0; k < c.d; ++k) r.push_back(std::to_string(co[k]));
        r.push_back(format_double(set.phi[x]));
        for (int k = 0; k < c.d; ++k) r.push_back(format_double(set.q(x, k)));
        for (int j = 0; j < c.d; ++j)
          for (int k = j + 1; k < c.d; ++k) r.push_back(format_double(set.sigma(x, j, k)));
        csv += detail::csv_row(r);
        if (co[1] == 0 && co[2] == 0) out.plot.rows.push_back({double(co[0]), set.phi[x]});
      }
      out.files.push_back({name, csv});
      std::vector<SolveReport> rs{set.phi_report};
      rs.insert(rs.end(), set.sigma_reports.begin(), set.sigma_reports.end());
      add_reports(rs);
      out.summary = {{"ahom_column", set.ahom_column}, {"sample", id}, {"dir", dir}};
      out.plot = {"corrector along the first axis", "x1", "phi", false, false, {"x1", "phi"}, out.plot.rows};
      break;
    }
    case ExperimentKind::twoscale: {
      TwoScaleConfig tc;
      tc.alpha = P.at("alpha").get<double>();
      tc.n_samples = c.samples;
      tc.load_period = P.at("load_period").get<int>();
      tc.ahom = P.at("ahom") == "cell" ? AhomSource::cell : AhomSource::rve;
      tc.sigma_method = P.at("sigma_method") == "spectral" ? PoissonMethod::spectral : PoissonMethod::cg;
      tc.solver = c.solver;
      tc.threads = threads;
      const auto rs = clock("twoscale", [&] { return two_scale_experiment(*c.ensemble, box, tc); });
      std::string csv = detail::csv_row({"sample", "lhs", "rhs_phi", "rhs_sigma", "ratio"});
      std::vector<double> ratios;
      for (const auto& r : rs) {
        csv += detail::csv_row({std::to_string(r.sample), format_double(r.lhs), format_double(r.rhs_phi),
                                format_double(r.rhs_sigma), format_double(r.ratio)});
        ratios.push_back(r.ratio);
        add_reports(r.reports);
        out.plot.rows.push_back({double(r.sample), r.ratio});
      }
      out.files.push_back({name, csv});
      out.summary = {{"ratio_q95", quantile(ratios, 0.95)},
                     {"ratio_median", quantile(ratios, 0.5)},
                     {"ratio_max", quantile(ratios, 1.0)}};
      out.plot = {"two-scale remainder ratio", "sample", "lhs / rhs", false, false, {"sample", "ratio"}, out.plot.rows};
      break;
    }
    case ExperimentKind::growth: {
      const auto radii = P.at("radii").get<std::vector<int>>();
      const auto g = clock("growth", [&] {
        return corrector_growth(*c.ensemble, box, radii, P.at("p").get<double>(), c.samples, c.solver, threads);
      });
      auto j = head;
      j["radii"] = g.radii;
      j["moments"] = nlohmann::json::array();
      for (const auto& m : g.moments) j["moments"].push_back(to_json(m));
      j["model"] = to_string(g.model);
      j["slope"] = g.slope;
      j["intercept"] = g.intercept;
      j["residual"] = g.residual;
      j["r_squared"] = g.r_squared;
      j["plateau_ratio"] = g.plateau_ratio;
      j["solver_reports"] = report_array(g.reports);
      add_reports(g.reports);
      out.files.push_back({name, detail::dump_report(j)});
      out.summary = {{"slope", g.slope}, {"r_squared", g.r_squared}, {"plateau_ratio", g.plateau_ratio}};
      for (std::size_t k = 0; k < radii.size(); ++k)
        out.plot.rows.push_back({std::log(radii[k] + 2.0), g.moments[k].value * g.moments[k].value});
      out.plot = {"corrector increment moments", "log(r + 2)", "moment^2", false, false, {"log_r_plus_2", "moment_sq"},
                  out.plot.rows};
      break;
    }
    case ExperimentKind::sg: {
      std::vector<Functional> fam;
      for (const auto& f : P.at("functionals")) {
        if (f == "single-site") fam.push_back(single_site_functional(0));
        else if (f == "box-average") fam.push_back(box_average_functional(P.at("R").get<int>(), 0));
        else fam.push_back(ahom_entry_functional(0, 0, c.solver));
      }
      SGOptions o;
      o.inner = P.at("inner").get<std::size_t>();
      o.bootstrap = P.at("bootstrap").get<std::size_t>();
      o.threads = threads;
      const auto rs = clock("sg", [&] { return sg_check(*c.ensemble, box, fam, c.samples, o); });
      auto j = head;
      j["reports"] = nlohmann::json::array();
      for (std::size_t k = 0; k < rs.size(); ++k) {
        const auto& r = rs[k];
        j["reports"].push_back({{"functional", r.functional},
                                {"variance", to_json(r.variance)},
                                {"derivative_sum", to_json(r.derivative_sum)},
                                {"ratio", r.ratio},
                                {"ratio_stderr", r.ratio_stderr},
                                {"rho_assumed", r.rho_assumed},
                                {"within_bound", r.within_bound}});
        out.summary[r.functional] = {{"ratio", r.ratio}, {"ratio_stderr", r.ratio_stderr}, {"within_bound", r.within_bound}};
        out.plot.rows.push_back({double(k), r.ratio, r.ratio_stderr});
      }
      out.files.push_back({name, detail::dump_report(j)});
      out.plot = {"spectral gap ratio per functional", "functional", "ratio", false, false,
                  {"functional", "ratio", "stderr"}, out.plot.rows};
      break;
    }
    case ExperimentKind::semigroup: {
      const auto zeta = P.at("functional") == "single-site" ? single_site_functional(0)
                                                             : box_average_functional(P.at("R").get<int>(), 0);
      const auto times = P.at("times").get<std::vector<double>>();
      const auto r = clock("semigroup", [&] { return semigroup_decay(*c.ensemble, box, zeta, times, c.samples, threads); });
      auto j = head;
      j["times"] = r.times;
      j["moments"] = nlohmann::json::array();
      for (const auto& m : r.moments) j["moments"].push_back(to_json(m));
      j["variances"] = r.variances;
      j["zeta_variance"] = r.zeta_variance;
      j["mean_used"] = r.mean_used;
      j["exact_mean"] = r.exact_mean;
      j["slope"] = r.slope;
      j["intercept"] = r.intercept;
      j["r_squared"] = r.r_squared;
      j["contraction"] = r.contraction;
      out.files.push_back({name, detail::dump_report(j)});
      out.summary = {{"slope", r.slope}, {"contraction", r.contraction}};
      for (std::size_t k = 0; k < times.size(); ++k)
        out.plot.rows.push_back({times[k], r.moments[k].value * r.moments[k].value});
      out.plot = {"semigroup decay", "t", "E|P(t) zeta - E zeta|^2", true, true, {"t", "second_moment"}, out.plot.rows};
      break;
    }
    case ExperimentKind::green: {
      const auto radii = P.at("radii").get<std::vector<int>>();
      const auto g = clock("green", [&] { return green_decay(*c.ensemble, box, radii, c.samples, c.solver, threads); });
      auto j = head;
      j["radii"] = g.radii;
      j["quenched_profile"] = g.quenched_profile;
      if (g.quenched_fit)
        j["quenched_fit"] = {{"exponent", g.quenched_fit->exponent},
                             {"prefactor", g.quenched_fit->prefactor},
                             {"offset", g.quenched_fit->offset},
                             {"residual", g.quenched_fit->residual}};
      else
        j["quenched_fit"] = nullptr;
      j["log_ratio_max"] = g.log_ratio_max;
      j["annealed"] = nlohmann::json::array();
      for (const auto& m : g.annealed) j["annealed"].push_back(to_json(m));
      j["annealed_fit"] = {{"exponent", g.annealed_fit.slope},
                           {"intercept", g.annealed_fit.intercept},
                           {"r_squared", g.annealed_fit.r_squared},
                           {"residual", g.annealed_fit.residual}};
      j["solver_reports"] = report_array(g.reports);
      add_reports(g.reports);
      out.files.push_back({name, detail::dump_report(j)});
      out.summary = {{"annealed_exponent", g.annealed_fit.slope},
                     {"quenched_exponent", g.quenched_fit ? nlohmann::json(g.quenched_fit->exponent) : nlohmann::json(nullptr)},
                     {"log_ratio_max", g.log_ratio_max}};
      for (std::size_t k = 0; k < radii.size(); ++k)
        out.plot.rows.push_back({double(radii[k]), std::abs(g.quenched_profile[k]), g.annealed[k].value});
      out.plot = {"Green's function decay", "r", "value", true, true, {"r", "abs_G", "annealed_grad_grad_G"},
                  out.plot.rows};
      break;
    }
    case ExperimentKind::meyers: {
      const auto m = clock("meyers", [&] {
        return meyers_probe(*c.ensemble, box, P.at("q").get<double>(), P.at("alpha_w").get<double>(), c.samples,
                            c.solver, threads);
      });
      auto j = head;
      j["q"] = m.q;
      j["alpha_w"] = m.alpha_w;
      j["ratios"] = nlohmann::json::array();
      for (std::size_t s = 0; s < m.ratios.size(); ++s) {
        j["ratios"].push_back({{"sample", s}, {"ratio", m.ratios[s]}});
        out.plot.rows.push_back({double(s), m.ratios[s]});
      }
      j["median"] = m.median;
      j["max"] = m.max;
      j["blow_up"] = m.blow_up;
      j["solver_reports"] = report_array(m.reports);
      add_reports(m.reports);
      out.files.push_back({name, detail::dump_report(j)});
      out.summary = {{"median", m.median}, {"max", m.max}, {"blow_up", m.blow_up}};
      out.plot = {"weighted Meyers ratio", "sample", "ratio", false, false, {"sample", "ratio"}, out.plot.rows};
      break;
    }
    case ExperimentKind::birkhoff: {
      const auto radii = P.at("radii").get<std::vector<int>>();
      const auto b = clock("birkhoff", [&] {
        return birkhoff_rate(*c.ensemble, box, radii, c.samples, P.at("component").get<int>(), threads);
      });
      auto j = head;
      j["radii"] = b.radii;
      j["rms"] = nlohmann::json::array();
      for (const auto& m : b.rms) j["rms"].push_back(to_json(m));
      j["marginal"] = to_json(b.marginal);
      j["relative_rms"] = b.relative_rms;
      j["mean_used"] = b.mean_used;
      j["slope"] = b.slope;
      j["intercept"] = b.intercept;
      j["r_squared"] = b.r_squared;
      out.files.push_back({name, detail::dump_report(j)});
      out.summary = {{"slope", b.slope}, {"r_squared", b.r_squared}};
      for (std::size_t k = 0; k < radii.size(); ++k) out.plot.rows.push_back({double(radii[k]), b.rms[k].value});
      out.plot = {"ergodic averaging rate", "R", "rms deviation", true, true, {"R", "rms"}, out.plot.rows};
      break;
    }
  }
  return out;
}

// ------------------------------------------------------------ run / replay

inline std::filesystem::path manifest_path(const std::string& output) { return output + ".manifest.json"; }

/// Computes, writes every output atomically, then the manifest. Returns the manifest.
inline nlohmann::json run(const ExperimentConfig& c, int threads, bool gnuplot = false) {
  if (c.output.empty()) throw ConfigError("an output path is required");
  const auto t0 = std::chrono::steady_clock::now();
  auto out = compute(c, threads);
  if (gnuplot)
    out.files.push_back({std::filesystem::path(c.output).filename().string() + ".gp",
                         gnuplot_script(out.plot, to_string(c.kind))});
  const auto dir = std::filesystem::path(c.output).parent_path();
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : out.files) {
    write_atomic(dir / f.name, f.content);
    files.push_back({{"name", f.name}, {"bytes", f.content.size()}, {"fnv1a", fnv1a_hex(f.content)}});
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.stages.push_back({{"stage", "total"}, {"wall_seconds", total}});
  nlohmann::json m{{"artifact_version", kArtifactVersion},
                   {"config", to_json(c)},
                   {"config_hash", config_hash(c)},
                   {"seed", c.seed},
                   {"threads", threads},
                   {"gnuplot_script", gnuplot},
                   {"outputs", files},
                   {"stages", out.stages},
                   {"summary", out.summary},
                   {"solver_reports", out.reports}};
  write_atomic(manifest_path(c.output), m.dump(2) + "\n");
  return m;
}

struct FileDiff {
  std::string name;
  bool identical = false;
  bool recorded_hash_matches = false;  // on-disk file still matches the manifest
  double max_abs_deviation = 0.0;      // infinity when the structure differs
};

struct ReplayReport {
  bool config_hash_matches = false;
  std::vector<FileDiff> files;
  bool ok() const {
    if (!config_hash_matches) return false;
    for (const auto& f : files)
      if (!f.identical || !f.recorded_hash_matches) return false;
    return true;
  }
};

namespace detail {

inline std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> t;
  std::string cur;
  for (char ch : s) {
    if (ch == ',' || ch == '\n' || ch == ' ' || ch == ':' || ch == '[' || ch == ']' || ch == '{' || ch == '}' ||
        ch == '"' || ch == '\t' || ch == '\r') {
      if (!cur.empty()) t.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) t.push_back(cur);
  return t;
}

inline std::optional<double> as_number(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') return std::nullopt;
  return v;
}

}  // namespace detail

/// Max absolute difference between numeric tokens of two text outputs;
/// infinity if their non-numeric structure differs.
inline double max_numeric_deviation(const std::string& a, const std::string& b) {
  const auto ta = detail::tokens(a), tb = detail::tokens(b);
  if (ta.size() != tb.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t k = 0; k < ta.size(); ++k) {
    const auto x = detail::as_number(ta[k]), y = detail::as_number(tb[k]);
    if (x && y) {
      const double d = std::abs(*x - *y);
      m = std::max(m, std::isnan(d) ? std::numeric_limits<double>::infinity() : d);
    } else if (ta[k] != tb[k]) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return m;
}

/// Recomputes a manifest's outputs and diffs them against the files beside it.
inline ReplayReport replay(const std::filesystem::path& manifest_file, int threads) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(manifest_file));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  if (!m.contains("config") || !m.contains("outputs")) throw ConfigError("manifest lacks config or outputs");
  auto cfg = parse_config(m.at("config"));
  ReplayReport rep;
  rep.config_hash_matches = m.value("config_hash", std::string{}) == config_hash(cfg);
  auto out = compute(cfg, threads);
  if (m.value("gnuplot_script", false)) {
    const auto name = std::filesystem::path(cfg.output).filename().string();
    out.files.push_back({name + ".gp", gnuplot_script(out.plot, to_string(cfg.kind))});
  }
  const auto dir = manifest_file.parent_path();
  for (const auto& rec : m.at("outputs")) {
    FileDiff fd;
    fd.name = rec.at("name").get<std::string>();
    std::string disk;
    try {
      disk = read_file(dir / fd.name);
    } catch (const std::runtime_error&) {
      fd.max_abs_deviation = std::numeric_limits<double>::infinity();
      rep.files.push_back(fd);
      continue;
    }
    fd.recorded_hash_matches = fnv1a_hex(disk) == rec.value("fnv1a", std::string{});
    const OutputFile* fresh = nullptr;
    for (const auto& f : out.files)
      if (f.name == fd.name) fresh = &f;
    if (!fresh) {
      fd.max_abs_deviation = std::numeric_limits<double>::infinity();
    } else {
      fd.identical = fresh->content == disk;
      fd.max_abs_deviation = fd.identical ? 0.0 : max_numeric_deviation(fresh->content, disk);
    }
    rep.files.push_back(fd);
  }
  return rep;
}

}  // namespace homoglab

#endif  // HOMOGLAB_EXPERIMENT_HPP
