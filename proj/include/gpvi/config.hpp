#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gpvi/helper.hpp"
#include "gpvi/samplers.hpp"

namespace gpvi {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { Density, Blr, Classify4, Regress1d, SolverCompare, HmcBaseline };
enum class Method { Gpvi, GpviExact, GpviBicgstab, Svgd, AmortizedSvgd, Ensemble, Hmc };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Density: return "density";
    case ExperimentKind::Blr: return "blr";
    case ExperimentKind::Classify4: return "classify4";
    case ExperimentKind::Regress1d: return "regress1d";
    case ExperimentKind::SolverCompare: return "solver-compare";
    case ExperimentKind::HmcBaseline: return "hmc-baseline";
  }
  return "?";
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Gpvi: return "gpvi";
    case Method::GpviExact: return "gpvi-exact";
    case Method::GpviBicgstab: return "gpvi-bicgstab";
    case Method::Svgd: return "svgd";
    case Method::AmortizedSvgd: return "amortized-svgd";
    case Method::Ensemble: return "ensemble";
    case Method::Hmc: return "hmc";
  }
  return "?";
}

/// Fully resolved experiment settings. Defaults follow the desk-scale
/// experiment tables; every value can be overridden from the config file.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Blr;
  Method method = Method::Gpvi;
  std::uint64_t seed = 1;
  std::size_t steps = 50000;
  std::size_t batch = 10;      // z-batch of the generator methods
  std::size_t particles = 100; // ensemble size of svgd / ensemble
  std::size_t minibatch = 10;  // data minibatch per step
  std::size_t dim = 3;         // ambient dimension (density, blr)
  std::string output_dir = "out";
  int threads = 1;
  std::size_t checkpoint_every = 500;

  double lambda = 1.0;
  std::size_t k = 0;  // noise-slice width; 0 = dim
  double lr = 1e-3;   // generator / particle optimizer learning rate
  std::vector<std::size_t> gen_hidden;

  double helper_lr = 1e-4;
  std::size_t helper_width = 10;
  std::size_t helper_branch_width = 0;  // 0 = helper_width
  HelperResidual helper_residual = HelperResidual::Vjp;

  double bicgstab_tol = 1e-10;
  std::size_t bicgstab_iters = 1;

  std::size_t blr_n = 100;
  double blr_noise_var = 1.0;

  double bnn_prior_std = 1.0;
  std::vector<std::size_t> bnn_hidden{10, 10};
  double bnn_noise_var = 0.04;
  std::size_t data_n_train = 100;
  std::size_t data_n_test = 200;

  std::size_t hmc_leapfrog = 25;
  double hmc_step = 0.0005;
  std::size_t hmc_samples = 25000;
  std::size_t hmc_burnin = 20000;
  std::size_t hmc_thin = 1;
  std::string hmc_target = "gauss2d";  // gauss2d | blr

  std::size_t eval_samples = 100;

  std::size_t effective_k() const { return k == 0 ? dim : k; }
  std::size_t helper_branch() const {
    return helper_branch_width == 0 ? helper_width : helper_branch_width;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      long val = std::stol(item);
      if (val <= 0) throw ConfigError(key + ": entries must be positive, got " + item);
      out.push_back(std::size_t(val));
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      throw ConfigError(key + ": cannot parse '" + item + "' as an integer");
    }
  }
  return out;
}

}  // namespace detail

/// Parses the flat key = value format (# starts a comment). Later keys
/// override earlier ones.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    kv[key] = val;
  }
  return kv;
}

/// Per-experiment defaults (the desk-scale hyperparameter tables).
inline void apply_kind_defaults(ExperimentConfig& c) {
  switch (c.kind) {
    case ExperimentKind::Blr:
    case ExperimentKind::SolverCompare:
      c.dim = 3;
      c.steps = 50000;
      c.batch = 10;
      c.minibatch = 10;
      c.particles = 100;
      c.lr = 1e-3;
      c.helper_width = 10;
      c.helper_lr = 1e-4;
      c.gen_hidden.clear();
      break;
    case ExperimentKind::Density:
      c.dim = 2;
      c.steps = 20000;
      c.batch = 32;
      c.minibatch = 0;
      c.particles = 100;
      c.lr = 1e-3;
      c.helper_width = 32;
      c.helper_lr = 1e-4;
      c.gen_hidden.clear();
      break;
    case ExperimentKind::Classify4:
      c.steps = 50000;
      c.batch = 20;
      c.minibatch = 100;
      c.particles = 20;
      c.lr = 1e-3;
      c.k = 64;
      c.gen_hidden = {64, 64};
      c.helper_width = 544;
      c.helper_lr = 1e-4;
      c.bnn_hidden = {10, 10};
      c.data_n_train = 100;
      c.data_n_test = 200;
      c.eval_samples = 20;
      break;
    case ExperimentKind::Regress1d:
      c.steps = 20000;
      c.batch = 20;
      c.minibatch = 80;
      c.particles = 100;
      c.lr = 1e-3;
      c.k = 32;
      c.gen_hidden = {32, 32};
      c.helper_width = 64;
      c.helper_lr = 1e-4;
      c.bnn_hidden = {32};
      c.bnn_noise_var = 0.04;
      c.eval_samples = 100;
      break;
    case ExperimentKind::HmcBaseline:
      c.dim = 2;
      c.hmc_step = 0.2;
      break;
  }
}

/// Builds a validated config from parsed keys. Unknown keys are rejected;
/// error messages name the offending key.
inline ExperimentConfig build_config(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };

  ExperimentConfig c;
  const std::string* v = get("experiment");
  if (!v) throw ConfigError("experiment: required key is missing");
  if (*v == "density")
    c.kind = ExperimentKind::Density;
  else if (*v == "blr")
    c.kind = ExperimentKind::Blr;
  else if (*v == "classify4")
    c.kind = ExperimentKind::Classify4;
  else if (*v == "regress1d")
    c.kind = ExperimentKind::Regress1d;
  else if (*v == "solver-compare")
    c.kind = ExperimentKind::SolverCompare;
  else if (*v == "hmc-baseline")
    c.kind = ExperimentKind::HmcBaseline;
  else
    throw ConfigError("experiment: unknown kind '" + *v + "'");
  apply_kind_defaults(c);

  v = get("method");
  if (!v) throw ConfigError("method: required key is missing");
  if (*v == "gpvi")
    c.method = Method::Gpvi;
  else if (*v == "gpvi-exact")
    c.method = Method::GpviExact;
  else if (*v == "gpvi-bicgstab")
    c.method = Method::GpviBicgstab;
  else if (*v == "svgd")
    c.method = Method::Svgd;
  else if (*v == "amortized-svgd")
    c.method = Method::AmortizedSvgd;
  else if (*v == "ensemble")
    c.method = Method::Ensemble;
  else if (*v == "hmc")
    c.method = Method::Hmc;
  else
    throw ConfigError("method: unknown method '" + *v + "'");

  const std::set<std::string> known{
      "experiment",    "method",        "seed",           "steps",
      "batch",         "particles",     "minibatch",      "dim",
      "output_dir",    "threads",       "checkpoint_every",
      "lambda",        "k",             "lr",             "gen.hidden",
      "helper.lr",     "helper.width",  "helper.branch_width",
      "helper.residual",
      "bicgstab.tol",  "bicgstab.iters",
      "blr.n",         "blr.noise_var",
      "bnn.prior_std", "bnn.hidden",    "bnn.noise_var",
      "data.n_train",  "data.n_test",
      "hmc.leapfrog",  "hmc.step",      "hmc.samples",    "hmc.burnin",
      "hmc.thin",      "hmc.target",    "eval.samples"};
  for (const auto& [key, _] : kv)
    if (!known.count(key)) throw ConfigError(key + ": unknown key");

  auto as_u64 = [&](const char* key, std::uint64_t& dst) {
    if (const std::string* s = get(key)) {
      try {
        long long val = std::stoll(*s);
        if (val < 0) throw ConfigError(std::string(key) + ": must be non-negative");
        dst = std::uint64_t(val);
      } catch (const ConfigError&) {
        throw;
      } catch (...) {
        throw ConfigError(std::string(key) + ": cannot parse '" + *s + "'");
      }
    }
  };
  auto as_size = [&](const char* key, std::size_t& dst, bool positive = true) {
    if (const std::string* s = get(key)) {
      try {
        long long val = std::stoll(*s);
        if (val < 0 || (positive && val == 0))
          throw ConfigError(std::string(key) + ": must be " +
                            (positive ? "positive" : "non-negative") + ", got " + *s);
        dst = std::size_t(val);
      } catch (const ConfigError&) {
        throw;
      } catch (...) {
        throw ConfigError(std::string(key) + ": cannot parse '" + *s + "'");
      }
    }
  };
  auto as_double = [&](const char* key, double& dst, bool positive = true) {
    if (const std::string* s = get(key)) {
      try {
        dst = std::stod(*s);
      } catch (...) {
        throw ConfigError(std::string(key) + ": cannot parse '" + *s + "'");
      }
      if (positive && !(dst > 0.0))
        throw ConfigError(std::string(key) + ": must be positive, got " + *s);
    }
  };
  auto as_int = [&](const char* key, int& dst) {
    if (const std::string* s = get(key)) {
      try {
        dst = std::stoi(*s);
      } catch (...) {
        throw ConfigError(std::string(key) + ": cannot parse '" + *s + "'");
      }
    }
  };

  as_u64("seed", c.seed);
  as_size("steps", c.steps);
  as_size("batch", c.batch);
  as_size("particles", c.particles);
  as_size("minibatch", c.minibatch, /*positive=*/false);
  as_size("dim", c.dim);
  if (const std::string* s = get("output_dir")) c.output_dir = *s;
  as_int("threads", c.threads);
  if (c.threads < 1) throw ConfigError("threads: must be at least 1");
  as_size("checkpoint_every", c.checkpoint_every);
  as_double("lambda", c.lambda);
  as_size("k", c.k, /*positive=*/false);
  as_double("lr", c.lr, /*positive=*/false);
  if (c.lr < 0) throw ConfigError("lr: must be non-negative");
  if (const std::string* s = get("gen.hidden")) c.gen_hidden = detail::parse_size_list("gen.hidden", *s);
  as_double("helper.lr", c.helper_lr, /*positive=*/false);
  if (c.helper_lr < 0) throw ConfigError("helper.lr: must be non-negative");
  as_size("helper.width", c.helper_width);
  as_size("helper.branch_width", c.helper_branch_width, /*positive=*/false);
  if (const std::string* s = get("helper.residual")) {
    if (*s == "jvp")
      c.helper_residual = HelperResidual::Jvp;
    else if (*s == "vjp")
      c.helper_residual = HelperResidual::Vjp;
    else
      throw ConfigError("helper.residual: expected jvp or vjp, got '" + *s + "'");
  }
  as_double("bicgstab.tol", c.bicgstab_tol);
  as_size("bicgstab.iters", c.bicgstab_iters);
  as_size("blr.n", c.blr_n);
  as_double("blr.noise_var", c.blr_noise_var);
  as_double("bnn.prior_std", c.bnn_prior_std);
  if (const std::string* s = get("bnn.hidden")) c.bnn_hidden = detail::parse_size_list("bnn.hidden", *s);
  as_double("bnn.noise_var", c.bnn_noise_var);
  as_size("data.n_train", c.data_n_train);
  as_size("data.n_test", c.data_n_test);
  as_size("hmc.leapfrog", c.hmc_leapfrog);
  as_double("hmc.step", c.hmc_step);
  as_size("hmc.samples", c.hmc_samples);
  as_size("hmc.burnin", c.hmc_burnin, /*positive=*/false);
  as_size("hmc.thin", c.hmc_thin);
  if (const std::string* s = get("hmc.target")) {
    if (*s != "gauss2d" && *s != "blr")
      throw ConfigError("hmc.target: expected gauss2d or blr, got '" + *s + "'");
    c.hmc_target = *s;
  }
  as_size("eval.samples", c.eval_samples);

  // Cross-field validation.
  if (c.kind == ExperimentKind::Density && c.dim > 512)
    throw ConfigError("dim: density experiments are desk scale (dim <= 512)");
  if (c.k > 0 && c.kind != ExperimentKind::Classify4 && c.kind != ExperimentKind::Regress1d &&
      c.k > c.dim)
    throw ConfigError("k: noise slice cannot exceed dim");
  if (c.kind == ExperimentKind::HmcBaseline && c.method != Method::Hmc)
    throw ConfigError("method: hmc-baseline requires method = hmc");
  if (c.kind == ExperimentKind::SolverCompare && c.method != Method::Gpvi)
    throw ConfigError("method: solver-compare requires method = gpvi");
  if (c.method == Method::Hmc &&
      !(c.kind == ExperimentKind::HmcBaseline || c.kind == ExperimentKind::Blr))
    throw ConfigError("method: hmc is supported for blr and hmc-baseline experiments");
  if (c.kind == ExperimentKind::Blr || c.kind == ExperimentKind::SolverCompare) {
    if (c.minibatch == 0 || c.minibatch > c.blr_n)
      throw ConfigError("minibatch: must be in 1..blr.n");
  }
  if (c.kind == ExperimentKind::Classify4 && c.minibatch > c.data_n_train)
    throw ConfigError("minibatch: cannot exceed data.n_train");
  if (c.hmc_burnin >= c.hmc_samples)
    throw ConfigError("hmc.burnin: must be below hmc.samples");
  if (c.eval_samples < 2) throw ConfigError("eval.samples: need at least 2");
  return c;
}

/// Resolved-config echo, sorted by key; written next to experiment outputs.
inline std::string echo_config(const ExperimentConfig& c) {
  std::map<std::string, std::string> kv;
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  auto list = [](const std::vector<std::size_t>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(xs[i]);
    }
    return s;
  };
  kv["experiment"] = to_string(c.kind);
  kv["method"] = to_string(c.method);
  kv["seed"] = std::to_string(c.seed);
  kv["steps"] = std::to_string(c.steps);
  kv["batch"] = std::to_string(c.batch);
  kv["particles"] = std::to_string(c.particles);
  kv["minibatch"] = std::to_string(c.minibatch);
  kv["dim"] = std::to_string(c.dim);
  kv["output_dir"] = c.output_dir;
  kv["threads"] = std::to_string(c.threads);
  kv["checkpoint_every"] = std::to_string(c.checkpoint_every);
  kv["lambda"] = num(c.lambda);
  kv["k"] = std::to_string(c.k);
  kv["lr"] = num(c.lr);
  kv["gen.hidden"] = list(c.gen_hidden);
  kv["helper.lr"] = num(c.helper_lr);
  kv["helper.width"] = std::to_string(c.helper_width);
  kv["helper.branch_width"] = std::to_string(c.helper_branch_width);
  kv["helper.residual"] = c.helper_residual == HelperResidual::Jvp ? "jvp" : "vjp";
  kv["bicgstab.tol"] = num(c.bicgstab_tol);
  kv["bicgstab.iters"] = std::to_string(c.bicgstab_iters);
  kv["blr.n"] = std::to_string(c.blr_n);
  kv["blr.noise_var"] = num(c.blr_noise_var);
  kv["bnn.prior_std"] = num(c.bnn_prior_std);
  kv["bnn.hidden"] = list(c.bnn_hidden);
  kv["bnn.noise_var"] = num(c.bnn_noise_var);
  kv["data.n_train"] = std::to_string(c.data_n_train);
  kv["data.n_test"] = std::to_string(c.data_n_test);
  kv["hmc.leapfrog"] = std::to_string(c.hmc_leapfrog);
  kv["hmc.step"] = num(c.hmc_step);
  kv["hmc.samples"] = std::to_string(c.hmc_samples);
  kv["hmc.burnin"] = std::to_string(c.hmc_burnin);
  kv["hmc.thin"] = std::to_string(c.hmc_thin);
  kv["hmc.target"] = c.hmc_target;
  kv["eval.samples"] = std::to_string(c.eval_samples);
  std::string out;
  for (const auto& [k2, v2] : kv) out += k2 + " = " + v2 + "\n";
  return out;
}

/// Text for the list-experiments command.
inline std::string describe_experiments() {
  std::string s;
  s += "experiments (experiment = <kind>):\n";
  s += "  density         fit a random-covariance gaussian with a linear sampler\n";
  s += "                  methods: gpvi, gpvi-exact, gpvi-bicgstab, amortized-svgd, svgd, ensemble\n";
  s += "                  keys: dim (2), steps (20000), batch (32), lr (1e-3), helper.width (32)\n";
  s += "  blr             bayesian linear regression posterior, d = 3\n";
  s += "                  methods: gpvi, gpvi-exact, gpvi-bicgstab, svgd, amortized-svgd, ensemble, hmc\n";
  s += "                  keys: blr.n (100), steps (50000), batch (10), minibatch (10), lr (1e-3),\n";
  s += "                        particles (100), helper.width (10)\n";
  s += "  classify4       4-class mixture classification with a hypernetwork sampler\n";
  s += "                  methods: gpvi, gpvi-exact, svgd, ensemble\n";
  s += "                  keys: steps (50000), batch (20), minibatch (100), k (64), gen.hidden (64,64),\n";
  s += "                        helper.width (544), bnn.hidden (10,10), data.n_train (100)\n";
  s += "  regress1d       1-d regression posterior over small networks\n";
  s += "                  methods: gpvi, amortized-svgd, svgd, ensemble\n";
  s += "                  keys: steps (20000), batch (20), k (32), gen.hidden (32,32), bnn.hidden (32)\n";
  s += "  solver-compare  gpvi helper mode vs one-step warm-started bicgstab on blr, same seeds\n";
  s += "                  method: gpvi; keys as blr\n";
  s += "  hmc-baseline    hamiltonian monte carlo reference runs\n";
  s += "                  method: hmc; keys: hmc.target (gauss2d|blr), hmc.leapfrog (25),\n";
  s += "                        hmc.step, hmc.samples (25000), hmc.burnin (20000), hmc.thin (1)\n";
  s += "common keys: seed (1), output_dir (out), threads (1), checkpoint_every (500), lambda (1.0),\n";
  s += "             k (0 = dim), helper.lr (1e-4), helper.residual (jvp|vjp), eval.samples,\n";
  s += "             bicgstab.tol (1e-10), bicgstab.iters (1)\n";
  return s;
}

}  // namespace gpvi
