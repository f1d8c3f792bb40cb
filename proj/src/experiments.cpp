#include "dgp/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

namespace dgp {

std::string to_string(DatasetGenerator g) {
  switch (g) {
    case DatasetGenerator::Sine: return "sine";
    case DatasetGenerator::Identity: return "identity";
    case DatasetGenerator::Chirp: return "chirp";
    case DatasetGenerator::FromFile: return "file";
  }
  return "unknown";
}

DatasetGenerator parse_dataset_generator(const std::string& name) {
  if (name == "sine") return DatasetGenerator::Sine;
  if (name == "identity") return DatasetGenerator::Identity;
  if (name == "chirp") return DatasetGenerator::Chirp;
  if (name == "file" || name == "from_file") return DatasetGenerator::FromFile;
  throw ConfigError("unknown dataset generator '" + name + "' (expected sine, identity, chirp or file)");
}

void DatasetSpec::validate() const {
  if (generator == DatasetGenerator::FromFile) {
    if (path.empty()) throw ConfigError("dataset.path is required for the file generator");
    return;
  }
  if (n < 2) throw ConfigError("dataset.n must be at least 2");
  if (!(a < b) || !std::isfinite(a) || !std::isfinite(b)) throw ConfigError("dataset.range must satisfy a < b");
  if (!(noise >= 0)) throw ConfigError("dataset.noise must be non-negative");
}

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items())
    if (!ok.count(item.key())) throw ConfigError("unknown key '" + item.key() + "' in " + section);
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_range(const Json& j, const char* key, double& a, double& b) {
  if (!j.contains(key)) return;
  const Json& r = j.at(key);
  if (!r.is_array() || r.size() != 2) throw ConfigError(std::string(key) + " must be [a, b]");
  a = r[0].get<double>();
  b = r[1].get<double>();
}

}  // namespace

DatasetSpec parse_dataset_spec(const Json& j) {
  check_keys(j, {"generator", "n", "range", "noise", "seed", "path"}, "dataset");
  DatasetSpec s;
  try {
    if (j.contains("generator")) s.generator = parse_dataset_generator(j.at("generator").get<std::string>());
    read(j, "n", s.n);
    read_range(j, "range", s.a, s.b);
    read(j, "noise", s.noise);
    read(j, "seed", s.seed);
    read(j, "path", s.path);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  s.validate();
  return s;
}

Json dataset_spec_to_json(const DatasetSpec& s) {
  Json j{{"generator", to_string(s.generator)}};
  if (s.generator == DatasetGenerator::FromFile) {
    j["path"] = s.path;
  } else {
    j["n"] = s.n;
    j["range"] = {s.a, s.b};
    j["noise"] = s.noise;
    j["seed"] = s.seed;
  }
  return j;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  if (spec.generator == DatasetGenerator::FromFile) return read_dataset_csv(spec.path);
  Dataset d;
  d.x = Vector<double>::LinSpaced(spec.n, spec.a, spec.b);
  const double two_pi = 2 * std::numbers::pi;
  switch (spec.generator) {
    case DatasetGenerator::Sine: d.y = (two_pi * d.x.array()).sin().matrix(); break;
    case DatasetGenerator::Identity: d.y = d.x; break;
    case DatasetGenerator::Chirp:
      d.y = (two_pi * kChirpBaseFrequency * (d.x.array() + 1.5 * d.x.array().square())).sin().matrix();
      break;
    case DatasetGenerator::FromFile: break;
  }
  if (spec.noise > 0) {
    NormalStream rng({spec.seed, 0x64617461u});
    for (Index i = 0; i < d.y.size(); ++i) d.y(i) += spec.noise * rng();
  }
  d.validate();
  return d;
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<double> xs, ys;
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected two comma-separated columns");
    const std::string a = line.substr(0, comma), b = line.substr(comma + 1);
    try {
      std::size_t ia = 0, ib = 0;
      const double x = std::stod(a, &ia);
      const double y = std::stod(b, &ib);
      if (ia != a.size() || ib != b.size()) throw std::invalid_argument("trailing text");
      xs.push_back(x);
      ys.push_back(y);
    } catch (const std::exception&) {
      if (!header_seen && xs.empty()) {
        header_seen = true;
        continue;
      }
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": cannot parse '" + line + "'");
    }
  }
  Dataset d;
  d.x = Eigen::Map<Vector<double>>(xs.data(), static_cast<Index>(xs.size()));
  d.y = Eigen::Map<Vector<double>>(ys.data(), static_cast<Index>(ys.size()));
  try {
    d.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return d;
}

std::string dataset_csv(const Dataset& data, const std::string& comment) {
  std::string out = "# " + comment + "\nx,y\n";
  for (Index i = 0; i < data.size(); ++i) out += format_full(data.x(i)) + "," + format_full(data.y(i)) + "\n";
  return out;
}

DgpModel<double> build_model(const ModelSpec& spec, const Dataset& data) {
  if (spec.layers < 1) throw ConfigError("model.layers must be at least 1");
  const Index n_layers = spec.layers;
  if (spec.kernels.size() != 1 && static_cast<Index>(spec.kernels.size()) != n_layers)
    throw ConfigError("model.kernels must have one entry or one per layer");
  if (!spec.means.empty() && static_cast<Index>(spec.means.size()) != n_layers)
    throw ConfigError("model.mean_fns must have one entry per layer");
  const Index m = spec.inducing > 0
                      ? spec.inducing
                      : std::max<Index>(8, (data.size() + 3) / 4);
  const double a = spec.has_inducing_range ? spec.inducing_a : data.x.minCoeff();
  const double b = spec.has_inducing_range ? spec.inducing_b : data.x.maxCoeff();
  if (m > 1 && !(a < b)) throw ConfigError("inducing range must satisfy a < b");
  Vector<double> z = Vector<double>::LinSpaced(m, a, b);
  if (m == 1) z(0) = 0.5 * (a + b);

  DgpModel<double> model;
  model.noise_variance = spec.noise_variance;
  for (Index l = 0; l < n_layers; ++l) {
    GpLayer<double> layer;
    layer.kernel = spec.kernels.size() == 1 ? spec.kernels[0] : spec.kernels[l];
    layer.mean = spec.means.empty() ? (l + 1 < n_layers ? MeanFunction::Identity : MeanFunction::Zero)
                                    : spec.means[l];
    layer.z = z;
    model.layers.push_back(std::move(layer));
  }
  try {
    model.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return model;
}

namespace {

std::string grad_name(GradientMethod g) { return to_string(g); }

Json trainable_json(const TrainableSet& t) {
  return {{"variational", t.variational},
          {"kernel", t.kernel},
          {"noise", t.noise},
          {"inducing_first", t.inducing_first},
          {"inducing_inner", t.inducing_inner}};
}

}  // namespace

Json ExperimentConfig::resolved() const {
  Json kernels = Json::array();
  for (Index l = 0; l < model.layers; ++l)
    kernels.push_back(kernel_to_json(model.kernels.size() == 1 ? model.kernels[0] : model.kernels[l]));
  Json means = Json::array();
  for (Index l = 0; l < model.layers; ++l)
    means.push_back(to_string(model.means.empty()
                                  ? (l + 1 < model.layers ? MeanFunction::Identity : MeanFunction::Zero)
                                  : model.means[l]));
  Json mj{{"layers", model.layers},
          {"inducing", model.inducing},
          {"kernels", kernels},
          {"mean_fns", means},
          {"noise_variance", model.noise_variance}};
  if (model.has_inducing_range) mj["inducing_range"] = {model.inducing_a, model.inducing_b};

  Json schemes_j = Json::array();
  for (auto s : schemes) schemes_j.push_back(to_string(s));

  const auto& t = training;
  Json tj{{"iters", t.iters},
          {"lr", t.lr},
          {"n_samples", t.n_samples},
          {"n_inner", t.n_inner},
          {"refresh_noise_every", t.refresh_noise_every},
          {"eval_samples", t.eval_samples},
          {"trace_every", t.trace_every},
          {"analytic_final_layer", t.analytic_final_layer},
          {"gradient", grad_name(t.gradient)},
          {"rel_step", t.rel_step},
          {"trainable", trainable_json(t.trainable)}};

  Json oj{{"dir", outputs.dir},
          {"grid", {outputs.grid_a, outputs.grid_b, outputs.grid_n}},
          {"grid_samples", outputs.grid_samples},
          {"probe_x", outputs.probe_x},
          {"probe_samples", outputs.probe_samples},
          {"rmse_samples", outputs.rmse_samples}};

  return {{"dataset", dataset_spec_to_json(dataset)},
          {"model", mj},
          {"schemes", schemes_j},
          {"seeds", seeds},
          {"training", tj},
          {"init", {{"scale", init.scale}, {"seed_final_layer", init.seed_final_layer}}},
          {"outputs", oj}};
}

std::string ExperimentConfig::hash() const {
  Json j = resolved();
  // The output location does not change any artifact's content.
  j["outputs"].erase("dir");
  return fnv1a_hex(j.dump());
}

ExperimentConfig parse_experiment_config(const Json& j) {
  ExperimentConfig c;
  // config_hash is written into config.json artifacts and ignored on input.
  check_keys(j, {"dataset", "model", "scheme", "schemes", "seeds", "training", "init", "outputs", "config_hash"},
             "config");
  try {
    if (j.contains("dataset")) c.dataset = parse_dataset_spec(j.at("dataset"));

    if (j.contains("model")) {
      const Json& m = j.at("model");
      check_keys(m, {"layers", "inducing", "kernels", "mean_fns", "noise_variance", "inducing_range"}, "model");
      read(m, "layers", c.model.layers);
      read(m, "inducing", c.model.inducing);
      read(m, "noise_variance", c.model.noise_variance);
      if (m.contains("kernels")) {
        c.model.kernels.clear();
        const Json& ks = m.at("kernels");
        if (ks.is_object()) {
          c.model.kernels.push_back(kernel_from_json(ks));
        } else {
          for (const auto& k : ks) {
            check_keys(k, {"family", "variance", "lengthscale", "period"}, "model.kernels[]");
            c.model.kernels.push_back(kernel_from_json(k));
          }
        }
        if (c.model.kernels.empty()) throw ConfigError("model.kernels is empty");
      }
      if (m.contains("mean_fns"))
        for (const auto& f : m.at("mean_fns")) c.model.means.push_back(parse_mean_function(f.get<std::string>()));
      if (m.contains("inducing_range")) {
        c.model.has_inducing_range = true;
        read_range(m, "inducing_range", c.model.inducing_a, c.model.inducing_b);
      }
      if (c.model.layers < 1) throw ConfigError("model.layers must be at least 1");
      if (c.model.inducing < 0) throw ConfigError("model.inducing must be non-negative");
      if (!(c.model.noise_variance >= kMinNoiseVariance))
        throw ConfigError("model.noise_variance is below the floor 1e-8");
      if (c.model.kernels.size() != 1 && static_cast<Index>(c.model.kernels.size()) != c.model.layers)
        throw ConfigError("model.kernels must have one entry or one per layer");
      if (!c.model.means.empty() && static_cast<Index>(c.model.means.size()) != c.model.layers)
        throw ConfigError("model.mean_fns must have one entry per layer");
    }

    if (j.contains("scheme") && j.contains("schemes")) throw ConfigError("give either scheme or schemes, not both");
    if (j.contains("scheme")) c.schemes = {parse_scheme(j.at("scheme").get<std::string>())};
    if (j.contains("schemes")) {
      c.schemes.clear();
      for (const auto& s : j.at("schemes")) c.schemes.push_back(parse_scheme(s.get<std::string>()));
      if (c.schemes.empty()) throw ConfigError("schemes is empty");
    }

    std::uint64_t base_seed = 0;
    if (j.contains("training")) {
      const Json& t = j.at("training");
      check_keys(t,
                 {"iters", "lr", "n_samples", "n_inner", "seed", "refresh_noise_every", "eval_samples",
                  "trace_every", "analytic_final_layer", "gradient", "rel_step", "trainable"},
                 "training");
      auto& f = c.training;
      read(t, "iters", f.iters);
      read(t, "lr", f.lr);
      read(t, "n_samples", f.n_samples);
      read(t, "n_inner", f.n_inner);
      read(t, "seed", base_seed);
      read(t, "refresh_noise_every", f.refresh_noise_every);
      read(t, "eval_samples", f.eval_samples);
      read(t, "trace_every", f.trace_every);
      read(t, "analytic_final_layer", f.analytic_final_layer);
      read(t, "rel_step", f.rel_step);
      if (t.contains("gradient")) f.gradient = parse_gradient_method(t.at("gradient").get<std::string>());
      if (t.contains("trainable")) {
        const Json& tr = t.at("trainable");
        check_keys(tr, {"variational", "kernel", "noise", "inducing_first", "inducing_inner"}, "training.trainable");
        read(tr, "variational", f.trainable.variational);
        read(tr, "kernel", f.trainable.kernel);
        read(tr, "noise", f.trainable.noise);
        read(tr, "inducing_first", f.trainable.inducing_first);
        read(tr, "inducing_inner", f.trainable.inducing_inner);
      }
      f.validate();
    }
    c.seeds = {base_seed};
    if (j.contains("seeds")) {
      const Json& s = j.at("seeds");
      c.seeds.clear();
      if (s.is_number_integer()) {
        const auto n = s.get<std::int64_t>();
        if (n < 1) throw ConfigError("seeds must be a positive count or a list");
        for (std::int64_t i = 0; i < n; ++i) c.seeds.push_back(base_seed + static_cast<std::uint64_t>(i));
      } else {
        for (const auto& v : s) c.seeds.push_back(v.get<std::uint64_t>());
        if (c.seeds.empty()) throw ConfigError("seeds is empty");
      }
    }
    c.training.seed = c.seeds.front();

    if (j.contains("init")) {
      const Json& in = j.at("init");
      check_keys(in, {"scale", "seed_final_layer"}, "init");
      read(in, "scale", c.init.scale);
      read(in, "seed_final_layer", c.init.seed_final_layer);
      if (!(c.init.scale > 0)) throw ConfigError("init.scale must be positive");
    }

    if (j.contains("outputs")) {
      const Json& o = j.at("outputs");
      check_keys(o, {"dir", "grid", "grid_samples", "probe_x", "probe_samples", "rmse_samples"}, "outputs");
      auto& out = c.outputs;
      read(o, "dir", out.dir);
      if (o.contains("grid")) {
        const Json& g = o.at("grid");
        if (!g.is_array() || g.size() != 3) throw ConfigError("outputs.grid must be [a, b, n]");
        out.grid_a = g[0].get<double>();
        out.grid_b = g[1].get<double>();
        out.grid_n = g[2].get<Index>();
      }
      read(o, "grid_samples", out.grid_samples);
      read(o, "probe_x", out.probe_x);
      read(o, "probe_samples", out.probe_samples);
      read(o, "rmse_samples", out.rmse_samples);
      if (out.grid_n < 1 || out.grid_samples < 1 || out.rmse_samples < 1)
        throw ConfigError("outputs counts must be positive");
      if (out.probe_samples < 20) throw ConfigError("outputs.probe_samples must be at least 20");
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_json_file(path));
}

FittedModel prepare_run(const ExperimentConfig& config, SchemeKind scheme, const Dataset& data) {
  const DgpModel<double> model = build_model(config.model, data);
  FittedModel fm = initialise(scheme, model, data.x, config.init.scale);
  if (config.init.seed_final_layer) seed_final_layer(fm, data);
  return fm;
}

double trace_tail_slope(const std::vector<TracePoint>& trace, Index iters) {
  double sx = 0, sy = 0, n = 0;
  for (const auto& p : trace)
    if (2 * p.iter >= iters) {
      sx += static_cast<double>(p.iter);
      sy += p.elbo;
      ++n;
    }
  if (n < 2) return 0;
  const double mx = sx / n, my = sy / n;
  double sxy = 0, sxx = 0;
  for (const auto& p : trace)
    if (2 * p.iter >= iters) {
      const double dx = static_cast<double>(p.iter) - mx;
      sxy += dx * (p.elbo - my);
      sxx += dx * dx;
    }
  return sxx > 0 ? sxy / sxx : 0;
}

namespace {

constexpr std::uint32_t kProbeStream = 0x70726f62u;
constexpr std::uint32_t kRmseStream = 0x726d7365u;
constexpr std::uint32_t kGridStream = 0x67726964u;

}  // namespace

RunRecord run_single(const ExperimentConfig& config, SchemeKind scheme, std::uint64_t seed, const Dataset& data,
                     FittedModel* fitted) {
  RunRecord r;
  r.scheme = scheme;
  r.seed = seed;
  const FittedModel initial = prepare_run(config, scheme, data);
  FitConfig fc = config.training;
  fc.seed = seed;
  try {
    FitResult res = fit(initial, data, fc);
    r.trace = res.trace;
    r.elbo = res.final_eval.value;
    r.elbo_se = res.final_eval.std_error;
    r.trace_slope = trace_tail_slope(r.trace, fc.iters);
    r.probe = layer_variance_probe(res.fitted, config.outputs.probe_x, config.outputs.probe_samples,
                                   {seed, kProbeStream});
    const SampleSet s = sample_layers(res.fitted, data.x, config.outputs.rmse_samples, {seed, kRmseStream});
    const Vector<double> mean = s.layers.back().colwise().mean().transpose();
    r.rmse = std::sqrt((mean - data.y).squaredNorm() / static_cast<double>(data.size()));
    r.ok = true;
    if (fitted) *fitted = std::move(res.fitted);
  } catch (const DivergenceError& e) {
    r.trace = e.trace();
    r.error = e.what();
  } catch (const NumericalError& e) {
    r.error = e.what();
  } catch (const NotPsdError& e) {
    r.error = e.what();
  }
  return r;
}

std::string trace_csv(const std::vector<TracePoint>& trace, const std::string& header) {
  std::string out = "# " + header + "\niter,elbo,std_error\n";
  for (const auto& p : trace)
    out += std::to_string(p.iter) + "," + format_full(p.elbo) + "," + format_full(p.std_error) + "\n";
  return out;
}

std::string samples_csv(const SampleSet& set, Index layer, const std::string& header) {
  const Matrix<double>& m = set.layers.at(static_cast<std::size_t>(layer));
  std::string out = "# " + header + " layer=" + std::to_string(layer + 1) + "\nsample,x,value\n";
  for (Index s = 0; s < m.rows(); ++s)
    for (Index q = 0; q < m.cols(); ++q)
      out += std::to_string(s) + "," + format_full(set.query(q)) + "," + format_full(m(s, q)) + "\n";
  return out;
}

namespace {

Json run_json(const RunRecord& r, const std::string& hash) {
  Json j{{"scheme", to_string(r.scheme)}, {"seed", r.seed}, {"config_hash", hash}, {"status", r.ok ? "ok" : "failed"}};
  if (!r.ok) {
    j["error"] = r.error;
    return j;
  }
  j["elbo"] = r.elbo;
  j["elbo_se"] = r.elbo_se;
  j["var_f"] = r.probe.variance;
  j["var_f_se"] = r.probe.std_error;
  j["probe_x"] = r.probe.x0;
  j["rmse"] = r.rmse;
  j["trace_slope"] = r.trace_slope;
  return j;
}

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace

Json ReplicationReport::to_json() const {
  Json runs_j = Json::array();
  std::vector<SchemeKind> order;
  for (const auto& r : runs) {
    runs_j.push_back(run_json(r, config_hash));
    if (std::find(order.begin(), order.end(), r.scheme) == order.end()) order.push_back(r.scheme);
  }
  Json summary = Json::object();
  for (SchemeKind k : order) {
    std::vector<double> elbo, rmse;
    std::vector<std::vector<double>> var;
    Index failed = 0;
    for (const auto& r : runs) {
      if (r.scheme != k) continue;
      if (!r.ok) {
        ++failed;
        continue;
      }
      elbo.push_back(r.elbo);
      rmse.push_back(r.rmse);
      if (var.size() < r.probe.variance.size()) var.resize(r.probe.variance.size());
      for (std::size_t l = 0; l < r.probe.variance.size(); ++l) var[l].push_back(r.probe.variance[l]);
    }
    const auto [em, es] = mean_sd(elbo);
    const auto [rm, rs] = mean_sd(rmse);
    Json vm = Json::array(), vs = Json::array();
    for (const auto& v : var) {
      const auto [a, b] = mean_sd(v);
      vm.push_back(a);
      vs.push_back(b);
    }
    summary[to_string(k)] = {{"runs_ok", elbo.size()}, {"runs_failed", failed}, {"elbo_mean", em},
                             {"elbo_sd", es},          {"var_f_mean", vm},      {"var_f_sd", vs},
                             {"rmse_mean", rm},        {"rmse_sd", rs}};
  }
  return {{"config_hash", config_hash}, {"runs", runs_j}, {"summary", summary}};
}

ReplicationReport run_replication(const ExperimentConfig& config, int threads, bool write_artifacts) {
  const Dataset data = generate_dataset(config.dataset);
  const std::string hash = config.hash();
  const std::filesystem::path root(config.outputs.dir);

  struct Task {
    SchemeKind scheme;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (SchemeKind s : config.schemes)
    for (std::uint64_t seed : config.seeds) tasks.push_back({s, seed});

  Vector<double> grid;
  if (config.outputs.grid_a < config.outputs.grid_b)
    grid = Vector<double>::LinSpaced(config.outputs.grid_n, config.outputs.grid_a, config.outputs.grid_b);
  else
    grid = Vector<double>::LinSpaced(config.outputs.grid_n, data.x.minCoeff(), data.x.maxCoeff());

  ReplicationReport report;
  report.config_hash = hash;
  report.runs.resize(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i; (i = next++) < tasks.size();) {
      try {
        const Task& t = tasks[i];
        FittedModel fitted;
        RunRecord r = run_single(config, t.scheme, t.seed, data, &fitted);
        if (write_artifacts) {
          const std::string header =
              "config_hash=" + hash + " scheme=" + to_string(t.scheme) + " seed=" + std::to_string(t.seed);
          const auto dir = root / to_string(t.scheme) / ("seed_" + std::to_string(t.seed));
          write_text_file(dir / "trace.csv", trace_csv(r.trace, header));
          if (r.ok) {
            const SampleSet set = sample_layers(fitted, grid, config.outputs.grid_samples, {t.seed, kGridStream});
            for (Index l = 0; l < static_cast<Index>(set.layers.size()); ++l)
              write_text_file(dir / ("samples_layer" + std::to_string(l + 1) + ".csv"), samples_csv(set, l, header));
            Json fj = fitted_to_json(fitted);
            fj["config_hash"] = hash;
            fj["seed"] = t.seed;
            write_text_file(dir / "fitted.json", fj.dump(1) + "\n");
          } else {
            write_text_file(dir / "FAILED", "# " + header + "\n" + r.error + "\n");
          }
        }
        report.runs[i] = std::move(r);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  if (write_artifacts) {
    Json cj = config.resolved();
    cj["config_hash"] = hash;
    write_text_file(root / "config.json", cj.dump(2) + "\n");
    write_text_file(root / "report.json", report.to_json().dump(2) + "\n");
  }
  return report;
}

}  // namespace dgp
