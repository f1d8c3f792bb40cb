#include <doctest.h>

#include "support.hpp"

using namespace dgp;
using testing::vec;

TEST_SUITE("experiments") {

TEST_CASE("dataset generators") {
  DatasetSpec id;
  id.generator = DatasetGenerator::Identity;
  id.n = 3;
  id.a = -1;
  id.b = 1;
  const auto d = generate_dataset(id);
  CHECK(d.x == vec({-1.0, 0.0, 1.0}));
  CHECK(d.y == d.x);

  DatasetSpec s;
  s.n = 5;
  s.a = -0.5;
  s.b = 0.5;
  const auto sine = generate_dataset(s);
  CHECK(std::abs(sine.y(2)) < 1e-15);
  CHECK(sine.y(3) == doctest::Approx(1.0).epsilon(1e-15));

  DatasetSpec chirp;
  chirp.generator = DatasetGenerator::Chirp;
  chirp.n = 4;
  const auto c = generate_dataset(chirp);
  for (Index i = 0; i < 4; ++i) {
    const double x = c.x(i);
    CHECK(c.y(i) == doctest::Approx(std::sin(2 * 3.141592653589793 * (x + 1.5 * x * x) * 2.0)).epsilon(1e-12));
  }
}

TEST_CASE("noise is reproducible per seed") {
  DatasetSpec s;
  s.noise = 0.1;
  s.seed = 7;
  CHECK(generate_dataset(s).y == generate_dataset(s).y);
  DatasetSpec t = s;
  t.seed = 8;
  CHECK(generate_dataset(s).y != generate_dataset(t).y);
  DatasetSpec clean;
  CHECK(generate_dataset(clean).y == generate_dataset(clean).y);
}

TEST_CASE("dataset validation and CSV round trip") {
  DatasetSpec bad;
  bad.n = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  DatasetSpec rev;
  rev.a = 1;
  rev.b = 0;
  CHECK_THROWS_AS(rev.validate(), ConfigError);

  const auto dir = testing::scratch("csv");
  const auto d = generate_dataset(DatasetSpec{});
  write_text_file(dir / "d.csv", dataset_csv(d, "generated"));
  const auto back = read_dataset_csv(dir / "d.csv");
  CHECK((back.x - d.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.y - d.y).cwiseAbs().maxCoeff() == 0.0);

  write_text_file(dir / "broken.csv", "x,y\n0.1,abc\n");
  CHECK_THROWS_AS(read_dataset_csv(dir / "broken.csv"), ConfigError);
  CHECK_THROWS_AS(read_dataset_csv(dir / "missing.csv"), IoError);
}

TEST_CASE("config parsing rejects unknown keys and fills defaults") {
  CHECK_THROWS_AS(parse_experiment_config(Json::parse(R"({"datasett": {}})")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(Json::parse(R"({"training": {"lr": -1}})")), ConfigError);
  const auto c = parse_experiment_config(Json::parse(R"({"schemes": ["meanfield", "chained"], "seeds": 3})"));
  CHECK(c.schemes.size() == 2);
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(c.training.iters == 3000);
  CHECK(c.training.lr == doctest::Approx(5e-3));
  CHECK(c.hash() == parse_experiment_config(c.resolved()).hash());
  auto moved = c;
  moved.outputs.dir = "elsewhere";
  CHECK(moved.hash() == c.hash());
  auto other = c;
  other.training.lr = 1e-3;
  CHECK(other.hash() != c.hash());
}

TEST_CASE("default inducing count and grid") {
  ModelSpec ms;
  DatasetSpec ds;
  ds.n = 40;
  const auto model = build_model(ms, generate_dataset(ds));
  CHECK(model.layers[0].num_inducing() == 10);
  CHECK(model.layers[0].z(0) == doctest::Approx(-0.5));
  CHECK(model.layers[1].mean == MeanFunction::Zero);
  CHECK(model.layers[0].mean == MeanFunction::Identity);
  ds.n = 12;
  CHECK(build_model(ms, generate_dataset(ds)).layers[0].num_inducing() == 8);
}

TEST_CASE("smoke replication writes its artifacts reproducibly") {
  auto config = load_experiment_config(std::filesystem::path(DGP_CONFIG_DIR) / "smoke.json");
  const auto dir = testing::scratch("smoke");
  config.outputs.dir = dir.string();
  const auto report = run_replication(config, 1, true);
  REQUIRE(report.runs.size() == 1);
  CHECK(report.runs[0].ok);
  const auto run = dir / "meanfield" / "seed_3";
  int csv = 0;
  for (const auto& e : std::filesystem::directory_iterator(run)) csv += e.path().extension() == ".csv";
  CHECK(csv == 3);
  CHECK(std::filesystem::exists(run / "fitted.json"));
  CHECK(std::filesystem::exists(dir / "report.json"));
  const Json j = read_json_file(dir / "report.json");
  CHECK(j["config_hash"] == config.hash());
  CHECK(j["runs"].size() == 1);
  CHECK(j["runs"][0]["seed"] == 3);

  const std::string first = testing::slurp(run / "trace.csv") + testing::slurp(dir / "report.json");
  run_replication(config, 1, true);
  CHECK(first == testing::slurp(run / "trace.csv") + testing::slurp(dir / "report.json"));
}

TEST_CASE("trace tail slope") {
  std::vector<TracePoint> trace;
  for (Index i = 0; i <= 100; i += 10) trace.push_back({i, 2.0 * double(i) + (i < 50 ? 100.0 : 0.0), 0});
  CHECK(trace_tail_slope(trace, 100) == doctest::Approx(2.0));
}

TEST_CASE("failed fits are recorded rather than thrown") {
  auto config = load_experiment_config(std::filesystem::path(DGP_CONFIG_DIR) / "smoke.json");
  config.training.lr = 1e6;
  config.training.iters = 30;
  config.training.trace_every = 1;
  const auto data = generate_dataset(config.dataset);
  const auto r = run_single(config, SchemeKind::MeanField, 3, data);
  if (!r.ok) CHECK_FALSE(r.error.empty());
}

}  // TEST_SUITE
