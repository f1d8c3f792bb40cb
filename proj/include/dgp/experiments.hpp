#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgp/diagnostics.hpp"
#include "dgp/serialization.hpp"
#include "dgp/training.hpp"

namespace dgp {

enum class DatasetGenerator { Sine, Identity, Chirp, FromFile };

std::string to_string(DatasetGenerator g);
DatasetGenerator parse_dataset_generator(const std::string& name);

/// x linearly spaced on [a, b];
///   Sine:     y = sin(2 pi x)
///   Identity: y = x
///   Chirp:    y = sin(2 pi (x + 1.5 x^2) f0), f0 = 2
/// plus optional Gaussian noise of standard deviation `noise` drawn from `seed`.
/// FromFile reads two columns x,y from `path`.
struct DatasetSpec {
  DatasetGenerator generator = DatasetGenerator::Sine;
  Index n = 40;
  double a = -0.5;
  double b = 0.5;
  double noise = 0;
  std::uint64_t seed = 0;
  std::string path;

  void validate() const;
};

inline constexpr double kChirpBaseFrequency = 2.0;

/// {"generator", "n", "range": [a, b], "noise", "seed", "path"}; absent keys keep defaults.
DatasetSpec parse_dataset_spec(const Json& j);
Json dataset_spec_to_json(const DatasetSpec& spec);

Dataset generate_dataset(const DatasetSpec& spec);

/// CSV with a header row "x,y"; lines starting with '#' are skipped.
Dataset read_dataset_csv(const std::filesystem::path& path);
std::string dataset_csv(const Dataset& data, const std::string& comment);

struct ModelSpec {
  Index layers = 2;
  /// Inducing points per layer; 0 picks max(8, ceil(N / 4)).
  Index inducing = 0;
  /// One entry per layer, or one shared by all layers.
  std::vector<KernelSpec<double>> kernels{KernelSpec<double>{}};
  /// Empty: identity for inner layers, zero for the last.
  std::vector<MeanFunction> means;
  double noise_variance = 1e-2;
  /// Range of the layer-1 inducing grid; defaults to the data range.
  bool has_inducing_range = false;
  double inducing_a = 0;
  double inducing_b = 0;
};

/// Layer-1 z on a regular grid; inner layers start from a copy of it.
DgpModel<double> build_model(const ModelSpec& spec, const Dataset& data);

struct InitSpec {
  double scale = 1e-2;
  /// Run seed_final_layer after initialise.
  bool seed_final_layer = false;
};

struct OutputSpec {
  std::string dir = "runs";
  /// Dense grid for sample dumps; a == b picks the data range.
  double grid_a = 0;
  double grid_b = 0;
  Index grid_n = 101;
  Index grid_samples = 200;
  double probe_x = 0;
  Index probe_samples = 4000;
  Index rmse_samples = 500;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ModelSpec model;
  std::vector<SchemeKind> schemes{SchemeKind::MeanField};
  std::vector<std::uint64_t> seeds{0};
  FitConfig training;
  InitSpec init;
  OutputSpec outputs;

  /// Every setting with defaults filled in; the hash is taken over its dump.
  Json resolved() const;
  std::string hash() const;
};

/// Unknown keys are rejected so that typos do not silently fall back to defaults.
ExperimentConfig parse_experiment_config(const Json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Model, initial state and optional final-layer seeding for one scheme.
FittedModel prepare_run(const ExperimentConfig& config, SchemeKind scheme, const Dataset& data);

struct RunRecord {
  SchemeKind scheme = SchemeKind::MeanField;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double elbo = 0;
  double elbo_se = 0;
  LayerVariance probe;
  double rmse = 0;           // final-layer predictive mean against the training targets
  double trace_slope = 0;    // least-squares slope over the final half of the trace
  std::vector<TracePoint> trace;
};

/// Least-squares slope of elbo against iteration over points with iter >= iters / 2.
double trace_tail_slope(const std::vector<TracePoint>& trace, Index iters);

/// Fits one (scheme, seed) and probes it. Numerical failures are captured in
/// the record; `fitted` receives the trained model when the fit succeeds.
RunRecord run_single(const ExperimentConfig& config, SchemeKind scheme, std::uint64_t seed, const Dataset& data,
                     FittedModel* fitted = nullptr);

std::string trace_csv(const std::vector<TracePoint>& trace, const std::string& header);
/// Long format: sample,x,value for one layer.
std::string samples_csv(const SampleSet& set, Index layer, const std::string& header);

struct ReplicationReport {
  std::string config_hash;
  std::vector<RunRecord> runs;

  Json to_json() const;
};

/// Every scheme x seed of the config, run on up to `threads` threads. When
/// `write_artifacts` is set, writes under outputs.dir:
///   config.json, report.json,
///   <scheme>/seed_<s>/{trace.csv, samples_layer<l>.csv, fitted.json}
ReplicationReport run_replication(const ExperimentConfig& config, int threads = 1, bool write_artifacts = true);

}  // namespace dgp
