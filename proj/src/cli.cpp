#include "dgp/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dgp/experiments.hpp"

namespace dgp {

namespace {

std::string g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void print_resolved(const Json& j) { std::cout << "resolved config:\n" << j.dump(2) << "\n"; }

struct Grid {
  double a = 0, b = 0;
  Index n = 0;
};

Grid parse_grid(const std::string& text) {
  Grid g;
  char tail = 0;
  long long n = 0;
  if (std::sscanf(text.c_str(), "%lf:%lf:%lld%c", &g.a, &g.b, &n, &tail) != 3)
    throw ConfigError("grid '" + text + "' is not of the form a:b:n");
  g.n = static_cast<Index>(n);
  if (g.n < 1) throw ConfigError("grid needs at least one point");
  if (g.n > 1 && !(g.a < g.b)) throw ConfigError("grid must satisfy a < b");
  return g;
}

Vector<double> grid_points(const Grid& g) {
  if (g.n == 1) return Vector<double>::Constant(1, g.a);
  return Vector<double>::LinSpaced(g.n, g.a, g.b);
}

struct RunDir {
  FittedModel fm;
  std::string config_hash;
};

RunDir load_run(const std::string& dir) {
  const Json j = read_json_file(std::filesystem::path(dir) / "fitted.json");
  RunDir r;
  r.fm = fitted_from_json(j);
  r.config_hash = j.value("config_hash", std::string("none"));
  return r;
}

int threads_from_env() {
  if (const char* v = std::getenv("DGP_COMPOSE_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1) throw ConfigError("DGP_COMPOSE_THREADS must be a positive integer");
    return static_cast<int>(n);
  }
  return 1;
}

void print_run(const RunRecord& r) {
  std::cout << to_string(r.scheme) << " seed=" << r.seed << ": ";
  if (!r.ok) {
    std::cout << "FAILED (" << r.error << ")\n";
    return;
  }
  std::cout << "elbo=" << g6(r.elbo) << " (se " << g6(r.elbo_se) << ")";
  for (std::size_t l = 0; l < r.probe.variance.size(); ++l)
    std::cout << " var_f" << l + 1 << "(" << g6(r.probe.x0) << ")=" << g6(r.probe.variance[l]) << " (se "
              << g6(r.probe.std_error[l]) << ")";
  std::cout << " rmse=" << g6(r.rmse) << "\n";
}

struct Options {
  int threads = 0;

  std::string datagen_spec, datagen_out;
  std::int64_t datagen_seed = -1;

  std::string fit_config, fit_out, fit_scheme;
  std::int64_t fit_seed = -1;

  std::string sample_run, sample_grid, sample_out;
  Index sample_n = 200;
  std::uint64_t sample_seed = 0;

  double ce_gamma = 1, ce_u = 0, ce_mu = 1, ce_s2 = 0;
  Index ce_mc = 0;
  std::uint64_t ce_seed = 0;

  double scan_gamma = 1;
  std::vector<Index> scan_m{2, 4, 8, 16, 32};
  Index scan_grid_n = 601;
  std::string scan_out;

  std::string ni_run, ni_inducing = "-3:3:8";
  Index ni_layer = 1;
  double ni_gamma = 1, ni_x = 0, ni_noise = 1e-3;

  std::string lv_run;
  double lv_x0 = 0;
  Index lv_n = 2000;
  std::uint64_t lv_seed = 0;

  std::string rep_config, rep_out;
};

int cmd_datagen(const Options& o) {
  Json j = read_json_file(o.datagen_spec);
  if (j.is_object() && j.contains("dataset")) j = j.at("dataset");
  DatasetSpec spec = parse_dataset_spec(j);
  if (o.datagen_seed >= 0) spec.seed = static_cast<std::uint64_t>(o.datagen_seed);
  print_resolved(dataset_spec_to_json(spec));
  const Dataset d = generate_dataset(spec);
  const std::string hash = fnv1a_hex(dataset_spec_to_json(spec).dump());
  write_text_file(o.datagen_out, dataset_csv(d, "config_hash=" + hash + " seed=" + std::to_string(spec.seed) +
                                                    " generator=" + to_string(spec.generator)));
  std::cout << "wrote " << d.size() << " rows to " << o.datagen_out << "\n";
  return kExitOk;
}

int cmd_fit(const Options& o) {
  ExperimentConfig config = load_experiment_config(o.fit_config);
  if (!o.fit_scheme.empty()) config.schemes = {parse_scheme(o.fit_scheme)};
  if (config.schemes.size() != 1)
    throw ConfigError("fit runs one scheme; the config lists several (pick one with --scheme)");
  if (o.fit_seed >= 0) config.seeds = {static_cast<std::uint64_t>(o.fit_seed)};
  config.training.seed = config.seeds.front();
  config.training.threads = o.threads;
  config.outputs.dir = o.fit_out;
  const std::string hash = config.hash();
  Json resolved = config.resolved();
  resolved["config_hash"] = hash;
  print_resolved(resolved);

  const Dataset data = generate_dataset(config.dataset);
  const SchemeKind scheme = config.schemes.front();
  const std::uint64_t seed = config.seeds.front();
  FittedModel fitted;
  const RunRecord r = run_single(config, scheme, seed, data, &fitted);

  const std::filesystem::path dir(o.fit_out);
  const std::string header = "config_hash=" + hash + " scheme=" + to_string(scheme) + " seed=" + std::to_string(seed);
  write_text_file(dir / "config.json", resolved.dump(2) + "\n");
  write_text_file(dir / "data.csv", dataset_csv(data, header));
  write_text_file(dir / "trace.csv", trace_csv(r.trace, header));
  ReplicationReport report{hash, {r}};
  write_text_file(dir / "report.json", report.to_json().dump(2) + "\n");
  if (r.ok) {
    Json fj = fitted_to_json(fitted);
    fj["config_hash"] = hash;
    fj["seed"] = seed;
    write_text_file(dir / "fitted.json", fj.dump(1) + "\n");
  }
  print_run(r);
  return r.ok ? kExitOk : kExitNumerical;
}

int cmd_sample(const Options& o) {
  const Grid g = parse_grid(o.sample_grid);
  if (o.sample_n < 1) throw ConfigError("--n must be positive");
  print_resolved({{"run", o.sample_run}, {"grid", {g.a, g.b, g.n}}, {"n", o.sample_n}, {"seed", o.sample_seed}});
  const RunDir run = load_run(o.sample_run);
  const SampleSet set = sample_layers(run.fm, grid_points(g), o.sample_n, {o.sample_seed, 0x67726964u});
  std::string out = "# config_hash=" + run.config_hash + " scheme=" + to_string(run.fm.scheme) +
                    " seed=" + std::to_string(o.sample_seed) + "\nlayer,sample,x,value\n";
  for (std::size_t l = 0; l < set.layers.size(); ++l) {
    const Matrix<double>& m = set.layers[l];
    for (Index s = 0; s < m.rows(); ++s)
      for (Index q = 0; q < m.cols(); ++q)
        out += std::to_string(l + 1) + "," + std::to_string(s) + "," + format_full(set.query(q)) + "," +
               format_full(m(s, q)) + "\n";
  }
  write_text_file(o.sample_out, out);
  for (std::size_t l = 0; l < set.layers.size(); ++l) {
    const Matrix<double>& m = set.layers[l];
    const double mean_var =
        ((m.rowwise() - m.colwise().mean()).colwise().squaredNorm() / std::max<double>(1.0, m.rows() - 1.0)).mean();
    std::cout << "layer " << l + 1 << ": mean variance over grid " << g6(mean_var) << "\n";
  }
  std::cout << "wrote " << set.layers.size() << " x " << o.sample_n << " x " << g.n << " draws to " << o.sample_out
            << "\n";
  return kExitOk;
}

int cmd_counterexample(const Options& o) {
  print_resolved({{"gamma", o.ce_gamma}, {"u", o.ce_u}, {"mu_star", o.ce_mu}, {"sigma_star2", o.ce_s2},
                  {"mc_samples", o.ce_mc}, {"seed", o.ce_seed}});
  const CounterexampleResult r = counterexample_eval(o.ce_gamma, o.ce_u, o.ce_mu, o.ce_s2);
  std::cout << "Q=" << g6(r.q) << "\n"
            << "v=" << g6(r.variance) << "\n"
            << "dv/dsigma2(sigma_star2)=" << g6(r.derivative) << "\n"
            << "derivative=" << g6(r.derivative_at_zero) << "\n"
            << "flag=" << (r.noise_reduces_variance ? "true" : "false") << "\n";
  if (o.ce_mc > 0) {
    const double s2 = o.ce_s2 + 1e-2;
    const auto a = counterexample_mc_variance(o.ce_gamma, o.ce_u, o.ce_mu, o.ce_s2, o.ce_mc, {o.ce_seed, 0});
    const auto b = counterexample_mc_variance(o.ce_gamma, o.ce_u, o.ce_mu, s2, o.ce_mc, {o.ce_seed, 0});
    std::cout << "mc var(sigma_star2=" << g6(o.ce_s2) << ")=" << g6(a.variance) << " (se " << g6(a.std_error)
              << ")\n"
              << "mc var(sigma_star2=" << g6(s2) << ")=" << g6(b.variance) << " (se " << g6(b.std_error) << ")\n";
  }
  return kExitOk;
}

int cmd_scan(const Options& o) {
  print_resolved({{"gamma", o.scan_gamma}, {"m", o.scan_m}, {"grid_n", o.scan_grid_n}});
  const CurvatureScan s = second_derivative_scan(o.scan_gamma, o.scan_m, o.scan_grid_n, o.threads);
  for (std::size_t j = 0; j < s.m_values.size(); ++j)
    std::cout << "M=" << s.m_values[j] << " min=" << g6(s.minimum[j]) << " at x=" << g6(s.argmin[j]) << "\n";
  if (!o.scan_out.empty()) {
    std::string out = "# gamma=" + format_full(o.scan_gamma) + " grid_n=" + std::to_string(o.scan_grid_n) +
                      "\nm,x,variance,curvature\n";
    for (std::size_t j = 0; j < s.m_values.size(); ++j)
      for (Index i = 0; i < s.grid.size(); ++i)
        out += std::to_string(s.m_values[j]) + "," + format_full(s.grid(i)) + "," + format_full(s.variance[j](i)) +
               "," + format_full(s.curvature[j](i)) + "\n";
    write_text_file(o.scan_out, out);
    std::cout << "wrote grid data to " << o.scan_out << "\n";
  }
  return kExitOk;
}

int cmd_noisy_input(const Options& o) {
  GpLayer<double> layer;
  Vector<double> m;
  Matrix<double> s;
  if (!o.ni_run.empty()) {
    print_resolved({{"run", o.ni_run}, {"layer", o.ni_layer}, {"x_bar", o.ni_x}, {"noise_var", o.ni_noise}});
    const RunDir run = load_run(o.ni_run);
    const Index l = o.ni_layer - 1;
    if (l < 0 || l >= run.fm.model.num_layers()) throw ConfigError("--layer is out of range");
    layer = run.fm.model.layers[l];
    if (const auto* st = std::get_if<MeanFieldState>(&run.fm.state)) {
      m = st->m[l];
      s = st->covariance(l);
    } else if (const auto* st = std::get_if<ChainGaussianState>(&run.fm.state)) {
      const JointBlocks blocks = assemble_joint_blocks(*st);
      m = blocks.mean[l];
      s = blocks.diag[l];
    } else {
      throw ConfigError("noisy-input needs a meanfield or joint run: chained layers condition on random locations");
    }
  } else {
    const Grid g = parse_grid(o.ni_inducing);
    print_resolved({{"gamma", o.ni_gamma}, {"inducing", {g.a, g.b, g.n}}, {"x_bar", o.ni_x}, {"noise_var", o.ni_noise}});
    layer.kernel.lengthscale = o.ni_gamma;
    layer.z = grid_points(g);
    m = Vector<double>::Zero(g.n);
    s = Matrix<double>::Zero(g.n, g.n);
  }
  const NoisyInputExpansion e = noisy_input_expansion(layer, m, s, o.ni_x, o.ni_noise);
  std::cout << "base_variance=" << g6(e.base_variance) << "\n"
            << "mean_slope=" << g6(e.mean_slope) << "\n"
            << "variance_curvature=" << g6(e.variance_curvature) << "\n"
            << "expanded_variance=" << g6(e.variance) << "\n";
  return kExitOk;
}

int cmd_layer_variance(const Options& o) {
  print_resolved({{"run", o.lv_run}, {"x0", o.lv_x0}, {"n", o.lv_n}, {"seed", o.lv_seed}});
  const RunDir run = load_run(o.lv_run);
  const LayerVariance v = layer_variance_probe(run.fm, o.lv_x0, o.lv_n, {o.lv_seed, 0x70726f62u});
  for (std::size_t l = 0; l < v.variance.size(); ++l)
    std::cout << "layer " << l + 1 << ": var=" << g6(v.variance[l]) << " se=" << g6(v.std_error[l]) << "\n";
  return kExitOk;
}

int cmd_replicate(const Options& o) {
  ExperimentConfig config = load_experiment_config(o.rep_config);
  if (!o.rep_out.empty()) config.outputs.dir = o.rep_out;
  config.training.threads = 1;  // parallelism goes to independent runs
  Json resolved = config.resolved();
  resolved["config_hash"] = config.hash();
  print_resolved(resolved);
  const ReplicationReport report = run_replication(config, o.threads, true);
  std::size_t ok = 0;
  for (const auto& r : report.runs) {
    print_run(r);
    ok += r.ok;
  }
  const Json summary = report.to_json().at("summary");
  for (const auto& [scheme, s] : summary.items()) {
    std::cout << scheme << ": elbo " << g6(s.value("elbo_mean", 0.0)) << " +- " << g6(s.value("elbo_sd", 0.0));
    const Json& vm = s.at("var_f_mean");
    for (std::size_t l = 0; l < vm.size(); ++l)
      std::cout << " var_f" << l + 1 << " " << (vm[l].is_number() ? g6(vm[l].get<double>()) : "nan");
    std::cout << " (" << s.at("runs_failed").get<int>() << " failed)\n";
  }
  std::cout << "report: " << (std::filesystem::path(config.outputs.dir) / "report.json").string() << "\n";
  return ok == 0 ? kExitNumerical : kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Deep Gaussian process inference with mean-field, joint-Gaussian and chained inducing schemes",
               "dgp_compose"};
  app.set_help_all_flag("--help-all", "Print help for every subcommand and exit");
  app.require_subcommand(1);
  Options o;
  app.add_option("--threads", o.threads, "Upper bound on worker threads (default: $DGP_COMPOSE_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  auto* datagen = app.add_subcommand("datagen", "Generate a dataset from a JSON spec and write it as CSV");
  datagen->add_option("--spec", o.datagen_spec, "Dataset spec, or a config with a dataset section")->required();
  datagen->add_option("--out", o.datagen_out, "Output CSV")->required();
  datagen->add_option("--seed", o.datagen_seed, "Override the spec's noise seed");

  auto* fit = app.add_subcommand("fit", "Fit one scheme and write the run directory");
  fit->add_option("--config", o.fit_config, "Experiment config (JSON)")->required();
  fit->add_option("--out", o.fit_out, "Run directory")->required();
  fit->add_option("--seed", o.fit_seed, "Override the training seed");
  fit->add_option("--scheme", o.fit_scheme, "Override the scheme (meanfield, joint_sampled, joint_analytic, chained)");

  auto* sample = app.add_subcommand("sample", "Draw per-layer samples from a fitted run on a grid");
  sample->add_option("--run", o.sample_run, "Run directory written by fit")->required();
  sample->add_option("--grid", o.sample_grid, "Query grid a:b:n")->required();
  sample->add_option("--out", o.sample_out, "Output CSV")->required();
  sample->add_option("--n", o.sample_n, "Number of draws")->capture_default_str();
  sample->add_option("--seed", o.sample_seed, "Sampling seed")->capture_default_str();

  auto* diagnose = app.add_subcommand("diagnose", "Collapse diagnostics");
  diagnose->require_subcommand(1);
  auto* ce = diagnose->add_subcommand("counterexample", "Closed-form variance derivative for a single inducing point");
  ce->add_option("--gamma", o.ce_gamma, "Kernel lengthscale")->capture_default_str();
  ce->add_option("--u", o.ce_u, "Inducing location")->capture_default_str();
  ce->add_option("--mu-star", o.ce_mu, "Mean of the noisy input")->capture_default_str();
  ce->add_option("--sigma-star2", o.ce_s2, "Variance of the noisy input")->capture_default_str();
  ce->add_option("--mc-samples", o.ce_mc, "Monte-Carlo cross-check draws (0 skips it)")->capture_default_str();
  ce->add_option("--seed", o.ce_seed, "Monte-Carlo seed")->capture_default_str();

  auto* scan = diagnose->add_subcommand("scan", "Minimum second derivative of the conditional variance per M");
  scan->add_option("--gamma", o.scan_gamma, "Kernel lengthscale")->capture_default_str();
  scan->add_option("--m", o.scan_m, "Inducing counts")->delimiter(',')->capture_default_str();
  scan->add_option("--grid-n", o.scan_grid_n, "Grid points over [-3 gamma, 3 gamma]")->capture_default_str();
  scan->add_option("--out", o.scan_out, "Optional CSV of the grid data");

  auto* ni = diagnose->add_subcommand("noisy-input", "Second-order variance of a layer at a noisy input");
  ni->add_option("--run", o.ni_run, "Run directory (meanfield or joint scheme); omit for a prior layer");
  ni->add_option("--layer", o.ni_layer, "Layer index, 1-based")->capture_default_str();
  ni->add_option("--gamma", o.ni_gamma, "Lengthscale of the prior layer")->capture_default_str();
  ni->add_option("--inducing", o.ni_inducing, "Inducing grid a:b:n of the prior layer")->capture_default_str();
  ni->add_option("--x-bar", o.ni_x, "Noise-free input")->capture_default_str();
  ni->add_option("--noise-var", o.ni_noise, "Input noise variance")->capture_default_str();

  auto* lv = diagnose->add_subcommand("layer-variance", "Per-layer variance at one input with jackknife errors");
  lv->add_option("--run", o.lv_run, "Run directory written by fit")->required();
  lv->add_option("--x0", o.lv_x0, "Query input")->capture_default_str();
  lv->add_option("--n", o.lv_n, "Number of draws")->capture_default_str();
  lv->add_option("--seed", o.lv_seed, "Sampling seed")->capture_default_str();

  auto* rep = app.add_subcommand("replicate", "Run every scheme and seed of a config and write a report");
  rep->add_option("--config", o.rep_config, "Experiment config (JSON)")->required();
  rep->add_option("--out", o.rep_out, "Override outputs.dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (o.threads == 0) o.threads = threads_from_env();
    if (*datagen) return cmd_datagen(o);
    if (*fit) return cmd_fit(o);
    if (*sample) return cmd_sample(o);
    if (*ce) return cmd_counterexample(o);
    if (*scan) return cmd_scan(o);
    if (*ni) return cmd_noisy_input(o);
    if (*lv) return cmd_layer_variance(o);
    if (*rep) return cmd_replicate(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitConfig;
}

}  // namespace dgp
