#include <doctest.h>

#include "dgp/vi_meanfield.hpp"
#include "support.hpp"

using namespace dgp;
using testing::se_layer;
using testing::vec;

namespace {

DgpModel<double> two_layer_model() {
  DgpModel<double> model;
  model.layers.push_back(se_layer(vec({-1.0, -0.3, 0.4, 1.0}), 1.0, 0.5, MeanFunction::Identity));
  model.layers.push_back(se_layer(vec({-1.2, -0.4, 0.3, 1.1}), 0.7, 0.8));
  model.noise_variance = 0.05;
  return model;
}

MeanFieldState prior_state(const DgpModel<double>& model) {
  MeanFieldState s;
  for (const auto& l : model.layers) {
    s.m.push_back(apply_mean(l.mean, l.z));
    s.chol.push_back(chol_psd(eval_kernel_matrix(l.kernel, l.z)).lower);
  }
  return s;
}

Dataset small_data() {
  Dataset d;
  d.x = vec({-0.8, -0.3, 0.1, 0.6, 0.9});
  d.y = vec({0.2, -0.5, 0.4, 0.9, -0.1});
  return d;
}

double variance_of(const std::vector<double>& v) {
  double mean = 0, ss = 0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / double(v.size() - 1);
}

}  // namespace

TEST_SUITE("vi_meanfield") {

TEST_CASE("KL is zero when every q(u) equals its prior") {
  const auto model = two_layer_model();
  CHECK(kl_meanfield(model, prior_state(model)) == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("single-layer bound against the independent closed-form oracle") {
  for (std::size_t i : {0u, 7u, 13u}) {
    const auto p = testing::l1_point(i);
    const auto& s = std::get<MeanFieldState>(p.fm.state);
    EstimatorOptions analytic;
    analytic.analytic_final_layer = true;
    const auto exact = elbo_mf(p.fm.model, s, p.data, 4, {1, 0}, analytic);
    CHECK(exact.value == doctest::Approx(p.elbo).epsilon(1e-9));
    const auto mc = elbo_mf(p.fm.model, s, p.data, 4000, {1, 0});
    CHECK(std::abs(mc.value - p.elbo) < 3 * mc.std_error);
  }
}

TEST_CASE("doubling the sample count halves the estimator variance") {
  const auto model = two_layer_model();
  const auto state = init_meanfield(model, 0.3);
  const auto data = small_data();
  const Index n = 20;
  std::vector<double> single, doubled;
  for (std::uint32_t r = 0; r < 50; ++r) {
    const NoiseBlock noise = draw_standard_normals(meanfield_noise_rows(model, data.size()), 2 * n, {77, r});
    single.push_back(elbo_mf(model, state, data, noise.leftCols(n)).value);
    doubled.push_back(elbo_mf(model, state, data, noise).value);
  }
  const double ratio = variance_of(single) / variance_of(doubled);
  INFO("variance ratio " << ratio);
  CHECK(ratio >= 1.5);
  CHECK(ratio <= 2.5);
}

TEST_CASE("collapsed single layer reproduces its inducing outputs") {
  DgpModel<double> model;
  model.layers.push_back(se_layer(vec({-1.0, 0.0, 1.0}), 1.0, 0.7));
  MeanFieldState s;
  s.m.push_back(vec({std::sin(-1.0), 0.0, std::sin(1.0)}));
  s.chol.push_back(1e-7 * Matrix<double>::Identity(3, 3));
  const auto set = sample_layers_mf(model, s, model.layers[0].z, 500, {4, 0});
  for (Index j = 0; j < 3; ++j) {
    const Vector<double> col = set.layers[0].col(j);
    CHECK((col.array() - s.m[0](j)).square().mean() < 1e-8);
  }
}

TEST_CASE("prior state gives the prior variance far from the inducing grid") {
  const auto model = two_layer_model();
  const Index n = 2000;
  const auto set = sample_layers_mf(model, prior_state(model), vec({25.0}), n, {6, 0});
  const double kernel_var[2] = {1.0, 0.7};
  for (int l = 0; l < 2; ++l) {
    const Vector<double> col = set.layers[l].col(0);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / double(n - 1);
    const double se = kernel_var[l] * std::sqrt(2.0 / double(n - 1));
    INFO("layer " << l + 1 << " variance " << var);
    CHECK(std::abs(var - kernel_var[l]) < 3 * se);
  }
}

TEST_CASE("fixed seed gives identical samples and estimates") {
  const auto model = two_layer_model();
  const auto state = init_meanfield(model, 0.1);
  const auto a = sample_layers_mf(model, state, vec({0.0, 0.5}), 30, {8, 2});
  const auto b = sample_layers_mf(model, state, vec({0.0, 0.5}), 30, {8, 2});
  CHECK(a.layers[1] == b.layers[1]);
  CHECK(elbo_mf(model, state, small_data(), 10, {1, 1}).value == elbo_mf(model, state, small_data(), 10, {1, 1}).value);
}

TEST_CASE("noise blocks of the wrong shape are refused") {
  const auto model = two_layer_model();
  CHECK_THROWS_AS(elbo_mf(model, init_meanfield(model), small_data(), NoiseBlock::Zero(3, 4)), InvalidInput);
}

}  // TEST_SUITE
