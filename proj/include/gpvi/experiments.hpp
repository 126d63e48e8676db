#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>

#include "gpvi/config.hpp"
#include "gpvi/csv.hpp"
#include "gpvi/gpvi.hpp"
#include "gpvi/metrics.hpp"

namespace gpvi {

/// Outcome of one experiment run. metrics mirrors the final.csv columns.
struct RunResult {
  int exit_code = 0;  // 0 ok, 3 training divergence
  std::map<std::string, double> metrics;
};

namespace detail_exp {

namespace fs = std::filesystem;

inline fs::path resolve_output_dir(const ExperimentConfig& cfg) {
  fs::path p(cfg.output_dir);
  if (const char* root = std::getenv("GPVI_OUTPUT_ROOT"); root && p.is_relative())
    p = fs::path(root) / p;
  return p;
}

struct MomentTruth {
  Tensor mean;
  Tensor cov;
  std::optional<Tensor> alt_cov;  // second covariance convention, when defined
};

struct MomentErrors {
  double mean_raw = 0, mean_rel = 0;
  double cov_raw = 0, cov_rel = 0, cov_spec = 0;
  double cov_alt_rel = std::numeric_limits<double>::quiet_NaN();
};

inline MomentErrors moment_errors(const Tensor& est_mean, const Tensor& est_cov,
                                  const MomentTruth& truth) {
  MomentErrors e;
  FitReport fit = fit_errors(est_mean, est_cov, truth.mean, truth.cov);
  e.mean_raw = fit.mean_error;
  e.cov_raw = fit.cov_error;
  double mnorm = l2_norm(truth.mean);
  double cnorm = l2_norm(truth.cov);
  e.mean_rel = mnorm > 1e-12 ? e.mean_raw / mnorm : e.mean_raw;
  e.cov_rel = cnorm > 1e-12 ? e.cov_raw / cnorm : e.cov_raw;
  e.cov_spec = cov_error_spectral(est_cov, truth.cov);
  if (truth.alt_cov) {
    double altnorm = l2_norm(*truth.alt_cov);
    double raw = l2_norm(est_cov - *truth.alt_cov);
    e.cov_alt_rel = altnorm > 1e-12 ? raw / altnorm : raw;
  }
  return e;
}

inline const std::vector<std::string> kMomentTraceHeader{
    "step",          "helper_loss",       "grad_norm",
    "mean_error_raw", "mean_error_rel",   "cov_error_fro_raw",
    "cov_error_fro_rel", "cov_error_spec", "cov_error_alt_rel"};

inline void moment_trace_row(CsvWriter& csv, std::size_t step, const GpviDiagnostics& diag,
                             const MomentErrors& e) {
  csv.row({std::to_string(step), csv_num(diag.helper_loss), csv_num(diag.grad_norm),
           csv_num(e.mean_raw), csv_num(e.mean_rel), csv_num(e.cov_raw), csv_num(e.cov_rel),
           csv_num(e.cov_spec), csv_num(e.cov_alt_rel)});
}

/// Moments of the current sampler state. Linear generators (no hidden
/// layers) admit the closed form; otherwise moments are estimated from
/// eval draws.
inline void generator_moments(const GeneratorNet& gen, std::size_t eval_samples,
                              RngStream& eval_rng, bool analytic, Tensor& mean, Tensor& cov) {
  if (analytic) {
    linear_sampler_moments(gen.g_params.W[0], gen.g_params.b[0], gen.lambda, mean, cov);
    return;
  }
  Tensor z = normal_tensor({eval_samples, gen.d}, eval_rng);
  Tensor x = generator_forward(gen, z);
  empirical_moments(x, mean, cov);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

inline void export_blr_dataset(const fs::path& path, const BlrProblem& p) {
  CsvWriter csv;
  std::vector<std::string> header;
  for (std::size_t j = 0; j < p.d(); ++j) header.push_back("x" + std::to_string(j));
  header.push_back("y");
  csv.open(path, header);
  for (std::size_t i = 0; i < p.n(); ++i) {
    std::vector<std::string> row;
    for (std::size_t j = 0; j < p.d(); ++j) row.push_back(csv_num(p.X(i, j)));
    row.push_back(csv_num(p.y[i]));
    csv.row(row);
  }
}

inline void export_matrix(const fs::path& path, const Tensor& m, const std::string& stem) {
  CsvWriter csv;
  std::vector<std::string> header;
  for (std::size_t j = 0; j < m.cols(); ++j) header.push_back(stem + std::to_string(j));
  csv.open(path, header);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row;
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(csv_num(m(i, j)));
    csv.row(row);
  }
}

// -------------------------------------------------------------------------
// Moment-fit experiments (density, blr) and the solver comparison
// -------------------------------------------------------------------------

struct MomentProblem {
  Target full_target;
  MomentTruth truth;
  std::optional<BlrProblem> blr;       // owns regression data
  std::optional<GaussianTarget> gauss; // owns the density target
};

inline MomentProblem make_moment_problem(const ExperimentConfig& cfg, const fs::path& out) {
  MomentProblem mp;
  RngStream data_rng = make_stream(cfg.seed, StreamId::Data);
  if (cfg.kind == ExperimentKind::Density) {
    mp.gauss = GaussianTarget::random_covariance(cfg.dim, data_rng);
    mp.full_target = as_target(*mp.gauss);
    mp.truth.mean = Tensor::zeros({cfg.dim});
    mp.truth.cov = mp.gauss->cov;
    export_matrix(out / "target_cov.csv", mp.gauss->cov, "c");
  } else {
    mp.blr = BlrProblem::generate(cfg.blr_n, cfg.dim, cfg.blr_noise_var, data_rng);
    GaussianTarget post = blr_posterior_analytic(*mp.blr);
    mp.full_target = as_target(*mp.blr);
    mp.truth.mean = post.mean;
    mp.truth.cov = post.cov;
    // Second convention: unit-gaussian-prior posterior covariance.
    Tensor xtx = Tensor::zeros({cfg.dim, cfg.dim});
    linalg::matmul_tn(mp.blr->X, mp.blr->X, xtx);
    for (double& v : xtx.data) v /= cfg.blr_noise_var;
    for (std::size_t i = 0; i < cfg.dim; ++i) xtx(i, i) += 1.0;
    mp.truth.alt_cov = dense_inverse(xtx);
    export_blr_dataset(out / "dataset.csv", *mp.blr);
  }
  return mp;
}

/// Draws a minibatch-bound target for one step (full-batch when minibatch
/// covers the data or the target has no dataset).
class StepTargets {
 public:
  StepTargets(const ExperimentConfig& cfg, const MomentProblem& mp)
      : cfg_(cfg), mp_(mp), rng_(make_stream(cfg.seed, StreamId::Minibatch)) {}

  Target next() {
    if (mp_.blr && cfg_.minibatch < cfg_.blr_n) {
      std::vector<std::size_t> mb(cfg_.minibatch);
      for (auto& i : mb) i = rng_.index(cfg_.blr_n);
      return as_target(*mp_.blr, &mb);
    }
    return mp_.full_target;
  }

 private:
  const ExperimentConfig& cfg_;
  const MomentProblem& mp_;
  RngStream rng_;
};

inline InverseMode mode_of(Method m) {
  switch (m) {
    case Method::GpviExact: return InverseMode::Exact;
    case Method::GpviBicgstab: return InverseMode::Bicgstab;
    default: return InverseMode::Helper;
  }
}

struct GeneratorRun {
  MomentErrors final_analytic;
  MomentErrors final_empirical;
  GpviDiagnostics last_diag;
  bool analytic = false;
  bool diverged = false;
};

/// Shared loop for gpvi (all inverse modes) and amortized svgd on a moment
/// problem. Divergence is recorded, not rethrown.
inline GeneratorRun run_moment_generator(const ExperimentConfig& cfg, Method method,
                                         const MomentProblem& mp, const fs::path& trace_path) {
  RngStream ginit = make_stream(cfg.seed, StreamId::GeneratorInit);
  GeneratorNet gen = GeneratorNet::make(cfg.dim, cfg.effective_k(), cfg.gen_hidden, cfg.lambda,
                                        ginit);
  RngStream hinit = make_stream(cfg.seed, StreamId::HelperInit);
  HelperNet helper = HelperNet::make(gen.k, gen.d, cfg.helper_branch(), cfg.helper_width,
                                     cfg.helper_lr, hinit);
  GpviOptions opts;
  opts.batch = cfg.batch;
  opts.mode = mode_of(method);
  opts.residual = cfg.helper_residual;
  opts.bicgstab_tol = cfg.bicgstab_tol;
  opts.bicgstab_iters = cfg.bicgstab_iters;
  GpviState st(std::move(gen), std::move(helper), cfg.lr, opts,
               make_stream(cfg.seed, StreamId::ZBatch));

  AdamHyper asvgd_hyper;
  asvgd_hyper.lr = cfg.lr;
  AdamState asvgd_adam = AdamState::like(st.gen.g_params, asvgd_hyper);
  RngStream asvgd_rng = make_stream(cfg.seed, StreamId::ZBatch);

  RngStream eval_rng = make_stream(cfg.seed, StreamId::Eval);
  const bool analytic = cfg.gen_hidden.empty();

  CsvWriter trace;
  trace.open(trace_path, kMomentTraceHeader);
  GeneratorRun run;
  run.analytic = analytic;

  StepTargets targets(cfg, mp);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Target t = targets.next();
    try {
      if (method == Method::AmortizedSvgd) {
        amortized_svgd_step(st.gen, asvgd_adam, t, cfg.batch, asvgd_rng);
        run.last_diag = GpviDiagnostics{};
      } else {
        run.last_diag = gpvi_train_step(st, t);
      }
    } catch (const std::runtime_error&) {
      run.diverged = true;
      break;
    }
    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      Tensor mean, cov;
      generator_moments(st.gen, cfg.eval_samples, eval_rng, analytic, mean, cov);
      moment_trace_row(trace, step, run.last_diag, moment_errors(mean, cov, mp.truth));
    }
  }

  Tensor mean, cov;
  if (analytic) {
    generator_moments(st.gen, cfg.eval_samples, eval_rng, true, mean, cov);
    run.final_analytic = moment_errors(mean, cov, mp.truth);
  }
  generator_moments(st.gen, cfg.eval_samples, eval_rng, false, mean, cov);
  run.final_empirical = moment_errors(mean, cov, mp.truth);
  if (!analytic) run.final_analytic = run.final_empirical;
  return run;
}

struct ParticleRun {
  MomentErrors final_empirical;
  bool diverged = false;
};

inline ParticleRun run_moment_particles(const ExperimentConfig& cfg, Method method,
                                        const MomentProblem& mp, const fs::path& trace_path) {
  RngStream pinit = make_stream(cfg.seed, StreamId::ParticleInit);
  ParticleSet ps{normal_tensor({cfg.particles, cfg.dim}, pinit), cfg.lr};
  AdamHyper hy;
  hy.lr = cfg.lr;
  AdamState adam = AdamState::like(std::vector<const Tensor*>{&ps.particles}, hy);

  CsvWriter trace;
  trace.open(trace_path, kMomentTraceHeader);
  ParticleRun run;
  StepTargets targets(cfg, mp);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Target t = targets.next();
    try {
      if (method == Method::Svgd)
        svgd_step(ps, t, &adam);
      else
        ensemble_step(ps, t, &adam);
    } catch (const std::runtime_error&) {
      run.diverged = true;
      break;
    }
    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      Tensor mean, cov;
      empirical_moments(ps.particles, mean, cov);
      moment_trace_row(trace, step, GpviDiagnostics{}, moment_errors(mean, cov, mp.truth));
    }
  }
  Tensor mean, cov;
  empirical_moments(ps.particles, mean, cov);
  run.final_empirical = moment_errors(mean, cov, mp.truth);
  return run;
}

struct HmcRun {
  MomentErrors final_empirical;
  double accept_rate = 0.0;
  std::size_t kept = 0;
};

inline HmcRun run_moment_hmc(const ExperimentConfig& cfg, const MomentProblem& mp,
                             const fs::path& trace_path) {
  HmcConfig hc;
  hc.leapfrog = cfg.hmc_leapfrog;
  hc.step = cfg.hmc_step;
  hc.samples = cfg.hmc_samples;
  hc.burn_in = cfg.hmc_burnin;
  hc.thin = cfg.hmc_thin;
  hc.seed = cfg.seed;
  HmcResult res = hmc_sample(mp.full_target, hc, Tensor::zeros({cfg.dim}));

  CsvWriter trace;
  trace.open(trace_path, kMomentTraceHeader);
  const std::size_t kept = res.samples.rows();
  for (std::size_t count = cfg.checkpoint_every; count <= kept; count += cfg.checkpoint_every) {
    Tensor head = Tensor::zeros({count, cfg.dim});
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < cfg.dim; ++j) head(i, j) = res.samples(i, j);
    Tensor mean, cov;
    empirical_moments(head, mean, cov);
    moment_trace_row(trace, count, GpviDiagnostics{}, moment_errors(mean, cov, mp.truth));
  }
  HmcRun run;
  Tensor mean, cov;
  empirical_moments(res.samples, mean, cov);
  run.final_empirical = moment_errors(mean, cov, mp.truth);
  run.accept_rate = res.accept_rate;
  run.kept = kept;
  return run;
}

inline const std::vector<std::string> kMomentFinalHeader{
    "experiment",        "method",          "seed",
    "steps",             "convention",      "diverged",
    "mean_error_raw",    "mean_error_rel",  "cov_error_fro_raw",
    "cov_error_fro_rel", "cov_error_spec",  "cov_error_alt_rel",
    "emp_mean_error_raw", "emp_mean_error_rel", "emp_cov_error_fro_raw",
    "emp_cov_error_fro_rel", "helper_loss", "grad_norm",
    "accept_rate"};

inline RunResult finish_moment_run(const ExperimentConfig& cfg, const fs::path& out,
                                   const std::string& convention, bool diverged,
                                   const MomentErrors& primary, const MomentErrors& empirical,
                                   const GpviDiagnostics& diag, double accept_rate) {
  CsvWriter final_csv;
  final_csv.open(out / "final.csv", kMomentFinalHeader);
  final_csv.row({to_string(cfg.kind), to_string(cfg.method), std::to_string(cfg.seed),
                 std::to_string(cfg.steps), convention, diverged ? "1" : "0",
                 csv_num(primary.mean_raw), csv_num(primary.mean_rel), csv_num(primary.cov_raw),
                 csv_num(primary.cov_rel), csv_num(primary.cov_spec),
                 csv_num(primary.cov_alt_rel), csv_num(empirical.mean_raw),
                 csv_num(empirical.mean_rel), csv_num(empirical.cov_raw),
                 csv_num(empirical.cov_rel), csv_num(diag.helper_loss), csv_num(diag.grad_norm),
                 csv_num(accept_rate)});
  RunResult rr;
  rr.exit_code = diverged ? 3 : 0;
  rr.metrics["diverged"] = diverged ? 1.0 : 0.0;
  rr.metrics["mean_error_raw"] = primary.mean_raw;
  rr.metrics["mean_error_rel"] = primary.mean_rel;
  rr.metrics["cov_error_fro_raw"] = primary.cov_raw;
  rr.metrics["cov_error_fro_rel"] = primary.cov_rel;
  rr.metrics["cov_error_spec"] = primary.cov_spec;
  rr.metrics["cov_error_alt_rel"] = primary.cov_alt_rel;
  rr.metrics["emp_mean_error_rel"] = empirical.mean_rel;
  rr.metrics["emp_cov_error_fro_rel"] = empirical.cov_rel;
  rr.metrics["helper_loss"] = diag.helper_loss;
  rr.metrics["accept_rate"] = accept_rate;
  return rr;
}

inline RunResult run_moment_experiment(const ExperimentConfig& cfg, const fs::path& out) {
  MomentProblem mp = make_moment_problem(cfg, out);
  switch (cfg.method) {
    case Method::Gpvi:
    case Method::GpviExact:
    case Method::GpviBicgstab:
    case Method::AmortizedSvgd: {
      GeneratorRun run = run_moment_generator(cfg, cfg.method, mp, out / "trace.csv");
      return finish_moment_run(cfg, out, run.analytic ? "analytic" : "empirical", run.diverged,
                               run.final_analytic, run.final_empirical, run.last_diag, 0.0);
    }
    case Method::Svgd:
    case Method::Ensemble: {
      ParticleRun run = run_moment_particles(cfg, cfg.method, mp, out / "trace.csv");
      return finish_moment_run(cfg, out, "empirical", run.diverged, run.final_empirical,
                               run.final_empirical, GpviDiagnostics{}, 0.0);
    }
    case Method::Hmc: {
      HmcRun run = run_moment_hmc(cfg, mp, out / "trace.csv");
      return finish_moment_run(cfg, out, "empirical", false, run.final_empirical,
                               run.final_empirical, GpviDiagnostics{}, run.accept_rate);
    }
  }
  throw std::logic_error("run_moment_experiment: unhandled method");
}

inline RunResult run_solver_compare(const ExperimentConfig& cfg, const fs::path& out) {
  MomentProblem mp = make_moment_problem(cfg, out);
  GeneratorRun helper_run =
      run_moment_generator(cfg, Method::Gpvi, mp, out / "trace_helper.csv");
  GeneratorRun bicg_run =
      run_moment_generator(cfg, Method::GpviBicgstab, mp, out / "trace_bicgstab.csv");

  CsvWriter final_csv;
  final_csv.open(out / "final.csv",
                 {"experiment", "seed", "steps", "helper_cov_error_rel",
                  "bicgstab_cov_error_rel", "ratio", "helper_mean_error_rel",
                  "bicgstab_mean_error_rel", "helper_diverged", "bicgstab_diverged"});
  double hc = helper_run.final_analytic.cov_rel;
  double bc = bicg_run.diverged ? std::numeric_limits<double>::infinity()
                                : bicg_run.final_analytic.cov_rel;
  double ratio = bc / hc;
  final_csv.row({to_string(cfg.kind), std::to_string(cfg.seed), std::to_string(cfg.steps),
                 csv_num(hc), csv_num(bc), csv_num(ratio),
                 csv_num(helper_run.final_analytic.mean_rel),
                 csv_num(bicg_run.final_analytic.mean_rel), helper_run.diverged ? "1" : "0",
                 bicg_run.diverged ? "1" : "0"});
  RunResult rr;
  rr.exit_code = helper_run.diverged ? 3 : 0;  // bicgstab failure is a recorded outcome
  rr.metrics["helper_cov_error_rel"] = hc;
  rr.metrics["bicgstab_cov_error_rel"] = bc;
  rr.metrics["ratio"] = ratio;
  rr.metrics["bicgstab_diverged"] = bicg_run.diverged ? 1.0 : 0.0;
  return rr;
}

// -------------------------------------------------------------------------
// BNN experiments (classify4, regress1d)
// -------------------------------------------------------------------------

inline MlpSpec classifier_spec(const ExperimentConfig& cfg) {
  std::vector<std::size_t> widths{2};
  widths.insert(widths.end(), cfg.bnn_hidden.begin(), cfg.bnn_hidden.end());
  widths.push_back(4);
  return MlpSpec(widths);
}

inline MlpSpec regressor_spec(const ExperimentConfig& cfg) {
  std::vector<std::size_t> widths{1};
  widths.insert(widths.end(), cfg.bnn_hidden.begin(), cfg.bnn_hidden.end());
  widths.push_back(1);
  return MlpSpec(widths);
}

inline double classification_accuracy(const BnnTask& task, const Tensor& inputs,
                                      const std::vector<int>& labels, const Tensor& flat_sets) {
  const std::size_t n = inputs.rows(), C = task.net.output_width();
  Tensor mean_probs = Tensor::zeros({n, C});
  for (std::size_t s = 0; s < flat_sets.rows(); ++s) {
    MlpParams params = unflatten_params(task.net, flat_sets.row_ptr(s));
    Tensor logits = mlp_forward(task.net, params, inputs);
    for (std::size_t i = 0; i < n; ++i) {
      double* row = logits.row_ptr(i);
      double mx = row[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      double sum = 0;
      for (std::size_t c = 0; c < C; ++c) {
        row[c] = std::exp(row[c] - mx);
        sum += row[c];
      }
      for (std::size_t c = 0; c < C; ++c) mean_probs(i, c) += row[c] / sum;
    }
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (mean_probs(i, c) > mean_probs(i, best)) best = c;
    if (int(best) + 1 == labels[i]) ++hits;
  }
  return double(hits) / double(n);
}

/// Draws eval_samples parameter vectors from whatever the method maintains.
struct SampleSource {
  const GeneratorNet* gen = nullptr;
  const Tensor* particles = nullptr;

  Tensor draw(std::size_t count, RngStream& rng) const {
    if (gen != nullptr) {
      Tensor z = normal_tensor({count, gen->d}, rng);
      return generator_forward(*gen, z);
    }
    return *particles;
  }
};

inline Tensor square_grid(double lo, double hi, std::size_t per_side) {
  Tensor g = Tensor::zeros({per_side * per_side, 2});
  for (std::size_t i = 0; i < per_side; ++i)
    for (std::size_t j = 0; j < per_side; ++j) {
      g(i * per_side + j, 0) = lo + (hi - lo) * double(i) / double(per_side - 1);
      g(i * per_side + j, 1) = lo + (hi - lo) * double(j) / double(per_side - 1);
    }
  return g;
}

inline RunResult run_classify4(const ExperimentConfig& cfg, const fs::path& out) {
  MixtureSplits data = make_mixture_dataset(cfg.seed, cfg.data_n_train, cfg.data_n_test);
  {
    CsvWriter csv;
    csv.open(out / "dataset.csv", {"x0", "x1", "label", "split"});
    for (std::size_t i = 0; i < data.train.points.rows(); ++i)
      csv.row({csv_num(data.train.points(i, 0)), csv_num(data.train.points(i, 1)),
               std::to_string(data.train.labels[i]), "train"});
    for (std::size_t i = 0; i < data.test.points.rows(); ++i)
      csv.row({csv_num(data.test.points(i, 0)), csv_num(data.test.points(i, 1)),
               std::to_string(data.test.labels[i]), "test"});
  }

  BnnTask task;
  task.net = classifier_spec(cfg);
  task.inputs = data.train.points;
  task.labels = data.train.labels;
  task.classification = true;
  task.prior_std = cfg.bnn_prior_std;
  const std::size_t P = param_count(task.net);

  RngStream mb_rng = make_stream(cfg.seed, StreamId::Minibatch);
  auto step_target = [&]() -> Target {
    if (cfg.minibatch < task.n()) {
      std::vector<std::size_t> mb(cfg.minibatch);
      for (auto& i : mb) i = mb_rng.index(task.n());
      return as_target(task, &mb);
    }
    return as_target(task);
  };

  RngStream eval_rng = make_stream(cfg.seed, StreamId::Eval);
  CsvWriter trace;
  trace.open(out / "trace.csv",
             {"step", "helper_loss", "grad_norm", "train_acc", "test_acc"});

  SampleSource source;
  std::optional<GpviState> st;
  std::optional<ParticleSet> ps;
  std::optional<AdamState> particle_adam;
  bool diverged = false;
  GpviDiagnostics diag;

  if (cfg.method == Method::Gpvi || cfg.method == Method::GpviExact) {
    RngStream ginit = make_stream(cfg.seed, StreamId::GeneratorInit);
    GeneratorNet gen =
        GeneratorNet::make(P, cfg.effective_k(), cfg.gen_hidden, cfg.lambda, ginit);
    RngStream hinit = make_stream(cfg.seed, StreamId::HelperInit);
    HelperNet helper = HelperNet::make(gen.k, gen.d, cfg.helper_branch(), cfg.helper_width,
                                       cfg.helper_lr, hinit);
    GpviOptions opts;
    opts.batch = cfg.batch;
    opts.mode = mode_of(cfg.method);
    opts.residual = cfg.helper_residual;
    st.emplace(std::move(gen), std::move(helper), cfg.lr, opts,
               make_stream(cfg.seed, StreamId::ZBatch));
    source.gen = &st->gen;
  } else if (cfg.method == Method::Svgd || cfg.method == Method::Ensemble) {
    RngStream pinit = make_stream(cfg.seed, StreamId::ParticleInit);
    Tensor init = Tensor::zeros({cfg.particles, P});
    for (std::size_t s = 0; s < cfg.particles; ++s) {
      Tensor flat = flatten_params(MlpParams::glorot(task.net, pinit));
      for (std::size_t j = 0; j < P; ++j) init(s, j) = flat[j];
    }
    ps.emplace(ParticleSet{std::move(init), cfg.lr});
    AdamHyper hy;
    hy.lr = cfg.lr;
    particle_adam.emplace(AdamState::like(std::vector<const Tensor*>{&ps->particles}, hy));
    source.particles = &ps->particles;
  } else {
    throw ConfigError("method: not supported for classify4");
  }

  for (std::size_t step = 1; step <= cfg.steps && !diverged; ++step) {
    Target t = step_target();
    try {
      if (st)
        diag = gpvi_train_step(*st, t);
      else if (cfg.method == Method::Svgd)
        svgd_step(*ps, t, &*particle_adam);
      else
        ensemble_step(*ps, t, &*particle_adam);
    } catch (const std::runtime_error&) {
      diverged = true;
      break;
    }
    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      Tensor sets = source.draw(cfg.eval_samples, eval_rng);
      double train_acc = classification_accuracy(task, data.train.points, data.train.labels, sets);
      double test_acc = classification_accuracy(task, data.test.points, data.test.labels, sets);
      trace.row({std::to_string(step), csv_num(diag.helper_loss), csv_num(diag.grad_norm),
                 csv_num(train_acc), csv_num(test_acc)});
    }
  }

  // Predictive-uncertainty map over a 21x21 grid on [-10, 10]^2.
  Tensor sets = source.draw(cfg.eval_samples, eval_rng);
  Tensor grid = square_grid(-10.0, 10.0, 21);
  Tensor stds = predictive_std_grid(sets, task.net, grid);
  {
    CsvWriter csv;
    csv.open(out / "grid.csv", {"x0", "x1", "pred_std"});
    for (std::size_t i = 0; i < grid.rows(); ++i)
      csv.row({csv_num(grid(i, 0)), csv_num(grid(i, 1)), csv_num(stds[i])});
  }
  auto std_at = [&](double x, double y) {
    for (std::size_t i = 0; i < grid.rows(); ++i)
      if (grid(i, 0) == x && grid(i, 1) == y) return stds[i];
    throw std::logic_error("grid point missing");
  };
  std::vector<double> sorted(stds.data);
  std::sort(sorted.begin(), sorted.end());
  double q25 = sorted[(sorted.size() - 1) / 4];
  double std_88 = std_at(8, 8);
  double std_22 = std_at(2, 2);
  double worst_mean_std = 0.0;
  const double means[4][2] = {{-2, -2}, {-2, 2}, {2, -2}, {2, 2}};
  for (auto& m : means) worst_mean_std = std::max(worst_mean_std, std_at(m[0], m[1]));

  Tensor final_sets = sets;
  double train_acc =
      classification_accuracy(task, data.train.points, data.train.labels, final_sets);
  double test_acc = classification_accuracy(task, data.test.points, data.test.labels, final_sets);

  CsvWriter final_csv;
  final_csv.open(out / "final.csv",
                 {"experiment", "method", "seed", "steps", "diverged", "train_acc", "test_acc",
                  "std_8_8", "std_2_2", "grid_q25", "max_component_mean_std", "helper_loss"});
  final_csv.row({to_string(cfg.kind), to_string(cfg.method), std::to_string(cfg.seed),
                 std::to_string(cfg.steps), diverged ? "1" : "0", csv_num(train_acc),
                 csv_num(test_acc), csv_num(std_88), csv_num(std_22), csv_num(q25),
                 csv_num(worst_mean_std), csv_num(diag.helper_loss)});

  RunResult rr;
  rr.exit_code = diverged ? 3 : 0;
  rr.metrics["diverged"] = diverged ? 1 : 0;
  rr.metrics["train_acc"] = train_acc;
  rr.metrics["test_acc"] = test_acc;
  rr.metrics["std_8_8"] = std_88;
  rr.metrics["std_2_2"] = std_22;
  rr.metrics["grid_q25"] = q25;
  rr.metrics["max_component_mean_std"] = worst_mean_std;
  return rr;
}

inline RunResult run_regress1d(const ExperimentConfig& cfg, const fs::path& out) {
  Regression1dData data = make_1d_regression_dataset(cfg.seed);
  {
    CsvWriter csv;
    csv.open(out / "dataset.csv", {"x", "y"});
    for (std::size_t i = 0; i < 80; ++i) csv.row({csv_num(data.x[i]), csv_num(data.y[i])});
  }
  BnnTask task;
  task.net = regressor_spec(cfg);
  task.inputs = Tensor({80, 1}, data.x.data);
  task.targets = Tensor({80, 1}, data.y.data);
  task.classification = false;
  task.noise_var = cfg.bnn_noise_var;
  task.prior_std = cfg.bnn_prior_std;
  const std::size_t P = param_count(task.net);

  RngStream mb_rng = make_stream(cfg.seed, StreamId::Minibatch);
  auto step_target = [&]() -> Target {
    if (cfg.minibatch < task.n()) {
      std::vector<std::size_t> mb(cfg.minibatch);
      for (auto& i : mb) i = mb_rng.index(task.n());
      return as_target(task, &mb);
    }
    return as_target(task);
  };

  RngStream eval_rng = make_stream(cfg.seed, StreamId::Eval);
  CsvWriter trace;
  trace.open(out / "trace.csv", {"step", "helper_loss", "grad_norm", "train_mse"});

  SampleSource source;
  std::optional<GpviState> st;
  std::optional<AdamState> asvgd_adam;
  std::optional<RngStream> asvgd_rng;
  std::optional<GeneratorNet> asvgd_gen;
  std::optional<ParticleSet> ps;
  std::optional<AdamState> particle_adam;
  bool diverged = false;
  GpviDiagnostics diag;

  auto train_mse = [&](const Tensor& sets) {
    Tensor mean_pred = Tensor::zeros({80});
    for (std::size_t s = 0; s < sets.rows(); ++s) {
      MlpParams params = unflatten_params(task.net, sets.row_ptr(s));
      Tensor pred = mlp_forward(task.net, params, task.inputs);
      for (std::size_t i = 0; i < 80; ++i) mean_pred[i] += pred(i, 0);
    }
    double mse = 0;
    for (std::size_t i = 0; i < 80; ++i) {
      double e = mean_pred[i] / double(sets.rows()) - data.y[i];
      mse += e * e;
    }
    return mse / 80.0;
  };

  if (cfg.method == Method::Gpvi) {
    RngStream ginit = make_stream(cfg.seed, StreamId::GeneratorInit);
    GeneratorNet gen =
        GeneratorNet::make(P, cfg.effective_k(), cfg.gen_hidden, cfg.lambda, ginit);
    RngStream hinit = make_stream(cfg.seed, StreamId::HelperInit);
    HelperNet helper = HelperNet::make(gen.k, gen.d, cfg.helper_branch(), cfg.helper_width,
                                       cfg.helper_lr, hinit);
    GpviOptions opts;
    opts.batch = cfg.batch;
    opts.mode = InverseMode::Helper;
    opts.residual = cfg.helper_residual;
    st.emplace(std::move(gen), std::move(helper), cfg.lr, opts,
               make_stream(cfg.seed, StreamId::ZBatch));
    source.gen = &st->gen;
  } else if (cfg.method == Method::AmortizedSvgd) {
    RngStream ginit = make_stream(cfg.seed, StreamId::GeneratorInit);
    asvgd_gen.emplace(
        GeneratorNet::make(P, cfg.effective_k(), cfg.gen_hidden, cfg.lambda, ginit));
    AdamHyper hy;
    hy.lr = cfg.lr;
    asvgd_adam.emplace(AdamState::like(asvgd_gen->g_params, hy));
    asvgd_rng.emplace(make_stream(cfg.seed, StreamId::ZBatch));
    source.gen = &*asvgd_gen;
  } else if (cfg.method == Method::Svgd || cfg.method == Method::Ensemble) {
    RngStream pinit = make_stream(cfg.seed, StreamId::ParticleInit);
    Tensor init = Tensor::zeros({cfg.particles, P});
    for (std::size_t s = 0; s < cfg.particles; ++s) {
      Tensor flat = flatten_params(MlpParams::glorot(task.net, pinit));
      for (std::size_t j = 0; j < P; ++j) init(s, j) = flat[j];
    }
    ps.emplace(ParticleSet{std::move(init), cfg.lr});
    AdamHyper hy;
    hy.lr = cfg.lr;
    particle_adam.emplace(AdamState::like(std::vector<const Tensor*>{&ps->particles}, hy));
    source.particles = &ps->particles;
  } else {
    throw ConfigError("method: not supported for regress1d");
  }

  for (std::size_t step = 1; step <= cfg.steps && !diverged; ++step) {
    Target t = step_target();
    try {
      if (st)
        diag = gpvi_train_step(*st, t);
      else if (asvgd_gen)
        amortized_svgd_step(*asvgd_gen, *asvgd_adam, t, cfg.batch, *asvgd_rng);
      else if (cfg.method == Method::Svgd)
        svgd_step(*ps, t, &*particle_adam);
      else
        ensemble_step(*ps, t, &*particle_adam);
    } catch (const std::runtime_error&) {
      diverged = true;
      break;
    }
    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      Tensor sets = source.draw(cfg.eval_samples, eval_rng);
      trace.row({std::to_string(step), csv_num(diag.helper_loss), csv_num(diag.grad_norm),
                 csv_num(train_mse(sets))});
    }
  }

  // Predictive curve over a dense x grid.
  Tensor sets = source.draw(cfg.eval_samples, eval_rng);
  const std::size_t G = 241;
  Tensor grid = Tensor::zeros({G, 1});
  for (std::size_t i = 0; i < G; ++i) grid(i, 0) = -6.0 + 12.0 * double(i) / double(G - 1);
  Tensor mean_curve = Tensor::zeros({G});
  Tensor var_curve = Tensor::zeros({G});
  std::vector<Tensor> preds;
  for (std::size_t s = 0; s < sets.rows(); ++s) {
    MlpParams params = unflatten_params(task.net, sets.row_ptr(s));
    preds.push_back(mlp_forward(task.net, params, grid));
  }
  for (std::size_t i = 0; i < G; ++i) {
    double m = 0;
    for (auto& p : preds) m += p(i, 0);
    m /= double(preds.size());
    double v = 0;
    for (auto& p : preds) v += (p(i, 0) - m) * (p(i, 0) - m);
    mean_curve[i] = m;
    var_curve[i] = std::sqrt(v / double(preds.size()));
  }
  {
    CsvWriter csv;
    csv.open(out / "curve.csv", {"x", "pred_mean", "pred_std"});
    for (std::size_t i = 0; i < G; ++i)
      csv.row({csv_num(grid(i, 0)), csv_num(mean_curve[i]), csv_num(var_curve[i])});
  }
  double final_mse = train_mse(sets);
  double gap_std = 0.0, data_std = 0.0;
  std::size_t gap_n = 0, data_n = 0;
  for (std::size_t i = 0; i < G; ++i) {
    double x = grid(i, 0);
    if (x > -2.0 && x < 2.0) {
      gap_std += var_curve[i];
      ++gap_n;
    } else {
      data_std += var_curve[i];
      ++data_n;
    }
  }
  gap_std /= double(gap_n);
  data_std /= double(data_n);

  CsvWriter final_csv;
  final_csv.open(out / "final.csv", {"experiment", "method", "seed", "steps", "diverged",
                                     "train_mse", "gap_pred_std", "data_pred_std",
                                     "helper_loss"});
  final_csv.row({to_string(cfg.kind), to_string(cfg.method), std::to_string(cfg.seed),
                 std::to_string(cfg.steps), diverged ? "1" : "0", csv_num(final_mse),
                 csv_num(gap_std), csv_num(data_std), csv_num(diag.helper_loss)});
  RunResult rr;
  rr.exit_code = diverged ? 3 : 0;
  rr.metrics["diverged"] = diverged ? 1 : 0;
  rr.metrics["train_mse"] = final_mse;
  rr.metrics["gap_pred_std"] = gap_std;
  rr.metrics["data_pred_std"] = data_std;
  return rr;
}

inline RunResult run_hmc_baseline(const ExperimentConfig& cfg, const fs::path& out) {
  ExperimentConfig local = cfg;
  MomentProblem mp;
  if (cfg.hmc_target == "gauss2d") {
    mp.gauss = GaussianTarget::standard(2);
    mp.full_target = as_target(*mp.gauss);
    mp.truth.mean = Tensor::zeros({2});
    mp.truth.cov = Tensor::eye(2);
    local.dim = 2;
  } else {
    RngStream data_rng = make_stream(cfg.seed, StreamId::Data);
    mp.blr = BlrProblem::generate(cfg.blr_n, cfg.dim, cfg.blr_noise_var, data_rng);
    GaussianTarget post = blr_posterior_analytic(*mp.blr);
    mp.full_target = as_target(*mp.blr);
    mp.truth.mean = post.mean;
    mp.truth.cov = post.cov;
    export_blr_dataset(out / "dataset.csv", *mp.blr);
    local.dim = cfg.dim;
  }
  HmcRun run = run_moment_hmc(local, mp, out / "trace.csv");
  GpviDiagnostics none;
  RunResult rr = finish_moment_run(local, out, "empirical", false, run.final_empirical,
                                   run.final_empirical, none, run.accept_rate);
  rr.metrics["kept_samples"] = double(run.kept);
  return rr;
}

}  // namespace detail_exp

/// Runs one experiment: validates nothing (the config must already be
/// built), creates the output directory, writes config.echo, trace/final
/// CSVs, and any dataset exports. Returns the exit code and final metrics.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::path out = detail_exp::resolve_output_dir(cfg);
  fs::create_directories(out);
  linalg::set_threads(cfg.threads);
  detail_exp::write_text(out / "config.echo", echo_config(cfg));
  switch (cfg.kind) {
    case ExperimentKind::Density:
    case ExperimentKind::Blr:
      return detail_exp::run_moment_experiment(cfg, out);
    case ExperimentKind::SolverCompare:
      return detail_exp::run_solver_compare(cfg, out);
    case ExperimentKind::Classify4:
      return detail_exp::run_classify4(cfg, out);
    case ExperimentKind::Regress1d:
      return detail_exp::run_regress1d(cfg, out);
    case ExperimentKind::HmcBaseline:
      return detail_exp::run_hmc_baseline(cfg, out);
  }
  throw std::logic_error("run_experiment: unhandled kind");
}

}  // namespace gpvi
