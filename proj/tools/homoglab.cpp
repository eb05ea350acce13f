// homoglab command line: one subcommand per experiment plus replay.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "homoglab/experiment.hpp"

using namespace homoglab;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kMismatch = 1, kSolver = 2, kConfig = 3 };

struct Options {
  std::string config, ensemble, out, precond;
  std::optional<int> dim, L, dir, load_period, R, component, sample;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> samples, max_iter, inner, bootstrap;
  std::optional<double> tol, alpha, p, q, alpha_w;
  std::vector<int> radii;
  std::vector<double> times, eps;
  std::optional<int> threads;
  bool gnuplot = false;
};

json load_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
}

/// Config document: the --config file overlaid with explicit flags.
json assemble(ExperimentKind kind, const Options& o) {
  json j = o.config.empty() ? json::object() : load_json_file(o.config);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (j.contains("experiment") && j["experiment"] != to_string(kind))
    throw ConfigError("config is for experiment " + j["experiment"].dump() + ", not " + to_string(kind));
  j["experiment"] = to_string(kind);
  if (!o.ensemble.empty()) j["ensemble"] = load_json_file(o.ensemble);
  if (o.seed) {
    j["seed"] = *o.seed;
    if (j.contains("ensemble") && j["ensemble"].is_object()) j["ensemble"].erase("seed");
  }
  auto sub = [&](const char* key) -> json& {
    if (!j.contains(key)) j[key] = json::object();
    return j[key];
  };
  if (o.dim) sub("box")["d"] = *o.dim;
  if (o.L) sub("box")["L"] = *o.L;
  if (o.samples) j["samples"] = *o.samples;
  if (o.tol) sub("solver")["tol"] = *o.tol;
  if (o.max_iter) sub("solver")["max_iter"] = *o.max_iter;
  if (!o.precond.empty()) sub("solver")["preconditioner"] = o.precond;
  if (o.dir) sub("params")["dir"] = *o.dir;
  if (o.sample) sub("params")["sample"] = *o.sample;
  if (o.alpha) sub("params")["alpha"] = *o.alpha;
  if (o.load_period) sub("params")["load_period"] = *o.load_period;
  if (o.R) sub("params")["R"] = *o.R;
  if (o.component) sub("params")["component"] = *o.component;
  if (o.p) sub("params")["p"] = *o.p;
  if (o.q) sub("params")["q"] = *o.q;
  if (o.alpha_w) sub("params")["alpha_w"] = *o.alpha_w;
  if (o.inner) sub("params")["inner"] = *o.inner;
  if (o.bootstrap) sub("params")["bootstrap"] = *o.bootstrap;
  if (!o.radii.empty()) sub("params")["radii"] = o.radii;
  if (!o.times.empty()) sub("params")["times"] = o.times;
  if (!o.eps.empty()) sub("params")["eps"] = o.eps;
  if (!o.out.empty()) j["output"] = o.out;
  return j;
}

int resolve_threads(const std::optional<int>& flag) {
  if (flag) {
    if (*flag < 1) throw ConfigError("--threads must be positive");
    return *flag;
  }
  if (const char* env = std::getenv("HOMOGLAB_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1 || v > 4096) throw ConfigError("HOMOGLAB_THREADS must be a positive integer");
    return static_cast<int>(v);
  }
  return 1;
}

/// Maps exceptions to exit codes. Config errors are raised before any file is written.
template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const EnsembleError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const QuantError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const OneDError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const LatticeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolver;
  }
}

void add_common(CLI::App* c, Options& o) {
  c->add_option("--config", o.config, "JSON config file; flags override its entries");
  c->add_option("--out", o.out, "output file; the manifest is written next to it");
  c->add_option("--threads", o.threads, "worker threads (default: HOMOGLAB_THREADS, else 1)");
  c->add_flag("--gnuplot-script", o.gnuplot, "also write <out>.gp");
  c->add_option("--eps", o.eps, "periods for the 1D pipeline")->delimiter(',');
}

void add_random(CLI::App* c, Options& o) {
  c->add_option("--ensemble", o.ensemble, "ensemble JSON file");
  c->add_option("--dim", o.dim, "lattice dimension d");
  c->add_option("--L", o.L, "box side");
  c->add_option("--seed", o.seed, "master seed");
  c->add_option("--samples", o.samples, "number of samples");
  c->add_option("--tol", o.tol, "relative residual tolerance");
  c->add_option("--max-iter", o.max_iter, "CG iteration cap");
  c->add_option("--precond", o.precond, "none or spectral");
  c->add_option("--sample", o.sample, "sample index for single-sample runs");
  c->add_option("--dir", o.dir, "corrector direction (0-based)");
  c->add_option("--alpha", o.alpha, "massive term of the two-scale problem");
  c->add_option("--load-period", o.load_period, "period of the two-scale load");
  c->add_option("--radii", o.radii, "radii or averaging windows")->delimiter(',');
  c->add_option("--times", o.times, "semigroup times")->delimiter(',');
  c->add_option("--R", o.R, "box-average side");
  c->add_option("--component", o.component, "diagonal component");
  c->add_option("--p", o.p, "moment order");
  c->add_option("--q", o.q, "Meyers exponent");
  c->add_option("--alpha-w", o.alpha_w, "Meyers weight exponent");
  c->add_option("--inner", o.inner, "inner Monte Carlo draws for continuous laws");
  c->add_option("--bootstrap", o.bootstrap, "bootstrap resamples");
}

int run_experiment(ExperimentKind kind, const Options& o) {
  return guarded([&] {
    const int threads = resolve_threads(o.threads);
    const auto cfg = parse_config(assemble(kind, o));
    if (cfg.output.empty()) throw ConfigError("--out is required");
    const auto manifest = run(cfg, threads, o.gnuplot);
    std::cout << json{{"summary", manifest["summary"]},
                      {"manifest", manifest_path(cfg.output).string()},
                      {"config_hash", manifest["config_hash"]}}
                     .dump(2)
              << '\n';
    return static_cast<int>(kOk);
  });
}

int run_replay(const std::string& manifest, const std::optional<int>& threads_flag) {
  return guarded([&] {
    const int threads = resolve_threads(threads_flag);
    const auto rep = replay(manifest, threads);
    std::cout << "config_hash " << (rep.config_hash_matches ? "match" : "MISMATCH") << '\n';
    double worst = 0.0;
    for (const auto& f : rep.files) {
      std::cout << f.name << ": " << (f.identical ? "identical" : "DIFFERS")
                << (f.recorded_hash_matches ? "" : " (recorded hash mismatch)")
                << " max_abs_deviation=" << format_double(f.max_abs_deviation) << '\n';
      worst = std::max(worst, f.max_abs_deviation);
    }
    std::cout << "max_abs_deviation " << format_double(worst) << '\n';
    return static_cast<int>(rep.ok() ? kOk : kMismatch);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"homoglab: quantitative stochastic homogenization experiments on the discrete torus"};
  app.require_subcommand(1);
  std::map<std::string, Options> opts;
  std::map<std::string, CLI::App*> subs;
  const std::map<std::string, std::string> help{
      {"oned", "1D periodic homogenization pipeline"},
      {"cell", "homogenized matrix of one sample"},
      {"ahom", "RVE estimate of the homogenized matrix"},
      {"corrector", "corrector, flux and flux corrector of one sample"},
      {"twoscale", "two-scale expansion remainder"},
      {"growth", "corrector increment moments versus distance"},
      {"sg", "spectral gap inequality check"},
      {"semigroup", "variance decay of the environment semigroup"},
      {"green", "Green's function decay"},
      {"meyers", "weighted Meyers estimate probe"},
      {"birkhoff", "ergodic averaging rate"}};
  for (const auto& [kind, name] : experiment_names()) {
    auto* c = app.add_subcommand(name, help.at(name));
    auto& o = opts[name];
    add_common(c, o);
    if (kind != ExperimentKind::oned) add_random(c, o);
    subs[name] = c;
  }
  std::string manifest;
  std::optional<int> replay_threads;
  auto* rp = app.add_subcommand("replay", "recompute a manifest's outputs and diff them");
  rp->add_option("manifest", manifest, "manifest JSON written by a previous run")->required();
  rp->add_option("--threads", replay_threads, "worker threads (default: HOMOGLAB_THREADS, else 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  if (rp->parsed()) return run_replay(manifest, replay_threads);
  for (const auto& [kind, name] : experiment_names())
    if (subs[name]->parsed()) return run_experiment(kind, opts[name]);
  return kConfig;
}
