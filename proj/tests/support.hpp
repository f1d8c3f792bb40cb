#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "dgp/experiments.hpp"

namespace testing {

inline const dgp::Json& oracle() {
  static const dgp::Json j = dgp::read_json_file(DGP_ORACLE_FILE);
  return j;
}

inline dgp::Vector<double> vec(std::initializer_list<double> v) {
  dgp::Vector<double> out(static_cast<dgp::Index>(v.size()));
  dgp::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline dgp::Vector<double> vec(const std::vector<double>& v) {
  return Eigen::Map<const dgp::Vector<double>>(v.data(), static_cast<dgp::Index>(v.size()));
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// SE layer with the given inducing locations.
inline dgp::GpLayer<double> se_layer(const dgp::Vector<double>& z, double variance = 1.0, double lengthscale = 1.0,
                                     dgp::MeanFunction mean = dgp::MeanFunction::Zero) {
  dgp::GpLayer<double> layer;
  layer.kernel.variance = variance;
  layer.kernel.lengthscale = lengthscale;
  layer.mean = mean;
  layer.z = z;
  return layer;
}

/// Random lower factor with a positive diagonal.
inline dgp::Matrix<double> random_factor(dgp::Index n, dgp::NormalStream& rng, double scale = 0.5) {
  dgp::Matrix<double> c = dgp::Matrix<double>::Zero(n, n);
  for (dgp::Index j = 0; j < n; ++j) {
    c(j, j) = scale * (0.5 + rng.uniform());
    for (dgp::Index i = j + 1; i < n; ++i) c(i, j) = 0.2 * scale * rng();
  }
  return c;
}

inline dgp::Vector<double> random_vector(dgp::Index n, dgp::NormalStream& rng, double scale = 1.0) {
  dgp::Vector<double> v(n);
  for (dgp::Index i = 0; i < n; ++i) v(i) = scale * rng();
  return v;
}

inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::path(DGP_SCRATCH_DIR) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing

namespace testing {

/// One of the single-layer parameter points of the gradient oracle: the
/// model, the data and the packed parameters with the oracle's raw values.
struct L1Point {
  dgp::FittedModel fm;
  dgp::Dataset data;
  dgp::ParamVector params;
  double elbo = 0;
  dgp::Vector<double> gradient;
};

inline L1Point l1_point(std::size_t i, const char* set = "gradient_l1") {
  const auto& g = oracle()[set];
  const auto& pt = g["points"][i];
  L1Point out;
  out.data.x = vec(g["x"].get<std::vector<double>>());
  out.data.y = vec(g["y"].get<std::vector<double>>());
  const dgp::Vector<double> z = vec(g["z"].get<std::vector<double>>());
  dgp::DgpModel<double> model;
  model.layers.push_back(se_layer(z));
  model.noise_variance = 0.1;
  out.fm = dgp::initialise(dgp::SchemeKind::MeanField, model, out.data.x);
  out.params = dgp::pack_parameters(out.fm, dgp::TrainableSet{});
  out.params.raw() = vec(pt["theta"].get<std::vector<double>>());
  out.fm = dgp::unpack_parameters(out.params, out.fm);
  out.elbo = pt["elbo"].get<double>();
  out.gradient = vec(pt["gradient"].get<std::vector<double>>());
  return out;
}

}  // namespace testing

#include <cstdlib>
#include <sys/wait.h>

namespace testing {

/// Runs the command line tool with `args`, stdout to `out` and stderr to
/// `out` + ".err"; returns the exit status.
inline int run_tool(const std::string& args, const std::filesystem::path& out) {
  const std::string cmd = std::string("'") + DGP_CLI_PATH + "' " + args + " > '" + out.string() + "' 2> '" +
                          out.string() + ".err'";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline std::string slurp(const std::filesystem::path& p) { return dgp::read_text_file(p); }

}  // namespace testing
