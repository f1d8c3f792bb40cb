#include <doctest.h>

#include "dgp/gp_layers.hpp"
#include "support.hpp"

using namespace dgp;
using testing::oracle;
using testing::se_layer;
using testing::vec;

TEST_SUITE("gp_layers") {

TEST_CASE("alpha at the inducing locations is the identity") {
  const auto layer = se_layer(vec({-1.0, 0.0, 0.7}), 1.0, 0.6);
  const Matrix<double> a = alpha(layer, layer.z);
  CHECK((a - Matrix<double>::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("alpha for one inducing point and far-away inputs") {
  const auto layer = se_layer(vec({0.0}));
  CHECK(alpha(layer, vec({1.0}))(0, 0) == doctest::Approx(oracle()["kernel"]["se_0_1"].get<double>()).epsilon(1e-9));
  const auto wide = se_layer(vec({-0.5, 0.0, 0.5}), 1.0, 0.3);
  CHECK(alpha(wide, vec({30.0})).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("conditional given u interpolates and recovers the prior far away") {
  const auto layer = se_layer(vec({-1.0, 0.2, 1.0}), 1.5, 0.5, MeanFunction::Identity);
  const Vector<double> u = vec({0.3, -0.7, 2.0});
  const auto at_z = conditional_given_u(layer, layer.z, u);
  CHECK((at_z.mean - u).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(at_z.covariance.cwiseAbs().maxCoeff() < 1e-6);

  const auto zero_mean = se_layer(layer.z, 1.5, 0.5);
  const auto far = conditional_given_u(zero_mean, vec({40.0}), u);
  CHECK(std::abs(far.mean(0)) < 1e-10);
  CHECK(far.covariance(0, 0) == doctest::Approx(1.5).epsilon(1e-9));
}

TEST_CASE("conditional given u matches brute-force GP regression") {
  const auto& o = oracle()["conditional"]["given_u"];
  const auto c = conditional_given_u(se_layer(vec({0.0})), vec({1.0}), vec({1.0}));
  CHECK(c.mean(0) == doctest::Approx(o["mean"].get<double>()).epsilon(1e-9));
  CHECK(c.covariance(0, 0) == doctest::Approx(o["variance"].get<double>()).epsilon(1e-9));
}

TEST_CASE("marginal conditional limits") {
  NormalStream rng({2, 0});
  const auto layer = se_layer(vec({-1.0, -0.2, 0.5, 1.1}), 0.8, 0.7, MeanFunction::Identity);
  const Vector<double> inputs = vec({-1.5, -0.6, 0.0, 0.3, 2.0});
  const Vector<double> m = testing::random_vector(4, rng);

  // S = K(z, z) gives back the prior covariance.
  const Matrix<double> kzz = eval_kernel_matrix(layer.kernel, layer.z);
  const auto prior = marginal_conditional(layer, inputs, m, kzz);
  CHECK((prior.covariance - eval_kernel_matrix(layer.kernel, inputs)).cwiseAbs().maxCoeff() < 1e-8);

  // S -> 0 converges to the conditional given u = m.
  const auto given = conditional_given_u(layer, inputs, m);
  const auto tiny = marginal_conditional(layer, inputs, m, Matrix<double>(1e-12 * Matrix<double>::Identity(4, 4)));
  CHECK((tiny.mean - given.mean).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((tiny.covariance - given.covariance).cwiseAbs().maxCoeff() < 1e-8);
  const auto zero = marginal_conditional(layer, inputs, m, Matrix<double>(Matrix<double>::Zero(4, 4)));
  CHECK((zero.covariance - given.covariance).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("marginal conditional matches the total-variance Monte-Carlo oracle") {
  const auto& o = oracle()["conditional"]["marginal"];
  const auto mc = marginal_conditional(se_layer(vec({0.0})), vec({1.0}), vec({1.0}), Matrix<double>(Matrix<double>::Constant(1, 1, 0.25)));
  CHECK(mc.mean(0) == doctest::Approx(o["mean_closed"].get<double>()).epsilon(1e-9));
  CHECK(mc.covariance(0, 0) == doctest::Approx(o["variance_closed"].get<double>()).epsilon(1e-9));
  // The MC estimate from two million draws; its standard error on the variance is ~1e-3.
  CHECK(std::abs(mc.covariance(0, 0) - o["mc_variance"].get<double>()) < 3e-3);
  CHECK(std::abs(mc.mean(0) - o["mc_mean"].get<double>()) < 3e-3);
}

TEST_CASE("diagonal paths agree with the dense moments") {
  NormalStream rng({9, 0});
  const auto layer = se_layer(vec({-1.0, -0.3, 0.4, 1.2}), 1.2, 0.6, MeanFunction::Identity);
  const Vector<double> inputs = vec({-1.1, 0.0, 0.5, 3.0});
  const Vector<double> m = testing::random_vector(4, rng);
  const Matrix<double> c = testing::random_factor(4, rng);
  const Matrix<double> s = c * c.transpose();
  LayerConditioner<double> cond(layer);
  const auto dense = cond.marginal_conditional(inputs, m, s);
  const auto diag = cond.marginal_diag(inputs, m, &s);
  const auto fac = cond.marginal_diag_factor(cond.whiten(inputs), m, c);
  CHECK((diag.mean - dense.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((diag.variance - dense.covariance.diagonal()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((fac.mean - dense.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((fac.variance - dense.covariance.diagonal()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer validation") {
  auto layer = se_layer(vec({0.0, 0.0}));
  CHECK_THROWS_AS(layer.validate(), InvalidInput);
  DgpModel<double> model;
  CHECK_THROWS_AS(model.validate(), InvalidInput);
  model.layers.push_back(se_layer(vec({0.0})));
  model.noise_variance = 1e-12;
  CHECK_THROWS_AS(model.validate(), InvalidInput);
}

}  // TEST_SUITE
