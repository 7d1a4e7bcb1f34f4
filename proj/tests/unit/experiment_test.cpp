#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedhuber/experiment.hpp"

using namespace fedhuber;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fedhuber_exp_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentSpec tiny_spec(const fs::path& out) {
  ExperimentSpec spec = parse_spec(
      "n = 60\n"
      "p = 20\n"
      "m = 6\n"
      "seed = 4\n"
      "replications = 3\n"
      "rounds = 30\n"
      "methods = iht-local, iht-gp, iht-l2, iht-ml, oracle\n");
  spec.output_dir = out;
  return spec;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("spec parsing") {
  const ExperimentSpec spec = parse_spec(
      "# comment line\n"
      "setting = S2   # trailing comment\n"
      "n=50\n"
      "  methods = iht-gp ,iht-l2\n"
      "s = 4\n"
      "lambda = 0.25\n"
      "warm_start = true\n");
  CHECK(spec.scenario.setting == Setting::s2);
  CHECK(spec.scenario.noise == Noise::normal);
  CHECK(spec.scenario.n == 50);
  CHECK(spec.methods == std::vector<Method>{Method::iht_gp, Method::iht_l2});
  CHECK(spec.fed.budget.s == 4);
  CHECK(spec.fed.budget.q == 4);
  CHECK(spec.fed.central.lambda == 0.25);
  CHECK(spec.fed.central.warm_start);
  CHECK(parse_spec("").scenario.noise == Noise::student_t2);
  CHECK(parse_spec("setting = S2\nnoise = cauchy").scenario.noise == Noise::cauchy);
}

TEST_CASE("spec defaults") {
  const ExperimentSpec spec = parse_spec("");
  CHECK(spec.replications == 20);
  CHECK(spec.fed.local.sigma == 3.0);
  CHECK(spec.fed.budget.s == 3);
  CHECK(spec.fed.central.k == 2);
  CHECK(spec.methods.size() == 3);
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("spec errors") {
  CHECK_THROWS_AS(parse_spec("unknown = 1"), SpecError);
  CHECK_THROWS_AS(parse_spec("n = ten"), SpecError);
  CHECK_THROWS_AS(parse_spec("n = -3"), SpecError);
  CHECK_THROWS_AS(parse_spec("just words"), SpecError);
  CHECK_THROWS_AS(parse_spec("methods = iht-magic"), SpecError);
  CHECK_THROWS_AS(parse_spec("setting = S9"), SpecError);
  CHECK_THROWS_AS(parse_spec("timing = maybe"), SpecError);
  CHECK_THROWS_AS(parse_spec("methods = ").validate(), SpecError);
  CHECK_THROWS_AS(parse_spec("replications = 0").validate(), SpecError);
  CHECK_THROWS_AS(parse_spec("test_fraction = 1").validate(), SpecError);
  CHECK_THROWS_AS(parse_spec("k = 20").validate(), SpecError);
  CHECK_THROWS_AS(load_spec("/nonexistent/spec.txt"), SpecError);
  try {
    parse_spec("n = 5\nbogus = 1\n");
  } catch (const SpecError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("overrides") {
  ExperimentSpec spec = parse_spec("seed = 3");
  apply_setting(spec, "q", "5");
  apply_setting(spec, "s", "4");
  CHECK(spec.fed.budget.q == 5);
  CHECK_THROWS_AS(apply_setting(spec, "nope", "1"), SpecError);
  setenv("FEDHUBER_SEED", "41", 1);
  apply_env_overrides(spec);
  unsetenv("FEDHUBER_SEED");
  CHECK(spec.scenario.seed == 41);
  CHECK(spec_keys().size() > 30);
}

TEST_CASE("method names") {
  for (auto m : {Method::iht_local, Method::iht_gp, Method::iht_l2, Method::iht_ml, Method::oracle})
    CHECK(parse_method(to_string(m)) == m);
  CHECK(to_string(Method::iht_gp) == "iht-gp");
}

TEST_CASE("run writes deterministic tables") {
  const fs::path dir = scratch_dir("det");
  ExperimentSpec spec = tiny_spec(dir / "a");
  const auto first = run_experiment(spec);
  CHECK_FALSE(first.any_failure);
  REQUIRE(first.rows.size() == 15);
  const std::string rows_a = slurp(first.rows_csv);
  CHECK(rows_a.rfind("method,replication,mse,fp,fn,rand_index,pe,wall_ms\n", 0) == 0);
  CHECK(rows_a.find("\niht-local,0,") != std::string::npos);
  CHECK(fs::exists(first.summary_csv));

  spec.output_dir = dir / "b";
  spec.workers = 3;
  const auto second = run_experiment(spec);
  CHECK(slurp(second.rows_csv) == rows_a);
  CHECK(slurp(second.summary_csv) == slurp(first.summary_csv));

  // Rows are ordered by replication, then method.
  for (std::size_t i = 0; i < first.rows.size(); ++i) CHECK(first.rows[i].replication == i / 5);
}

TEST_CASE("summary means are row means") {
  const fs::path dir = scratch_dir("summary");
  const auto result = run_experiment(tiny_spec(dir));
  for (const auto& s : result.summary) {
    double mse_sum = 0.0, ri_sum = 0.0;
    int count = 0, ri_count = 0;
    for (const auto& r : result.rows) {
      if (r.method != s.method) continue;
      mse_sum += r.mse;
      ++count;
      if (!std::isnan(r.rand_index)) {
        ri_sum += r.rand_index;
        ++ri_count;
      }
    }
    CHECK(s.count == static_cast<std::size_t>(count));
    CHECK(s.mse.mean == doctest::Approx(mse_sum / count));
    if (ri_count > 0) {
      CHECK(s.rand_index.mean == doctest::Approx(ri_sum / ri_count));
    } else {
      CHECK(std::isnan(s.rand_index.mean));
    }
  }
}

TEST_CASE("failed fits are recorded and the rest complete") {
  const fs::path dir = scratch_dir("fail");
  ExperimentSpec spec = tiny_spec(dir);
  spec.methods = {Method::iht_l2};
  spec.scenario.setting = Setting::s2;
  spec.scenario.noise = Noise::cauchy;
  // A step this large diverges for the squared loss but not for the local
  // Huber initializer at the same budget.
  spec.fed.local.eta = 1.9;
  const auto result = run_experiment(spec);
  bool any = false;
  for (const auto& r : result.rows) {
    if (r.failed) {
      any = true;
      CHECK(std::isnan(r.mse));
      CHECK_FALSE(r.error.empty());
    }
  }
  CHECK(any);
  CHECK(result.any_failure);
  CHECK(slurp(result.rows_csv).find(",nan,nan,nan,nan,nan,") != std::string::npos);
}

TEST_CASE("held-out prediction error") {
  const fs::path dir = scratch_dir("pe");
  ExperimentSpec spec = tiny_spec(dir);
  spec.methods = {Method::iht_local, Method::iht_gp};
  spec.test_fraction = 0.2;
  const auto result = run_experiment(spec);
  for (const auto& r : result.rows) {
    CHECK(std::isfinite(r.pe));
    CHECK(r.pe > 0.0);
  }
}

TEST_CASE("csv tasks") {
  const fs::path dir = scratch_dir("csv");
  ScenarioConfig sc;
  sc.n = 40;
  sc.p = 10;
  sc.m = 4;
  const Scenario s = gen_setting(sc);
  std::string paths;
  for (std::size_t m = 0; m < 4; ++m) {
    const fs::path p = dir / ("task" + std::to_string(m) + ".csv");
    write_csv_task(s.datasets[m], p);
    paths += (m ? "," : "") + p.string();
  }
  ExperimentSpec spec = parse_spec("csv = " + paths + "\nreplications = 1\nmethods = iht-local, iht-gp\ntest_fraction = 0.25");
  spec.output_dir = dir / "out";
  const auto result = run_experiment(spec);
  CHECK_FALSE(result.any_failure);
  for (const auto& r : result.rows) {
    CHECK(std::isnan(r.mse));
    CHECK(std::isfinite(r.pe));
  }
  spec.methods = {Method::oracle};
  CHECK_THROWS_AS(spec.validate(), SpecError);
}

TEST_CASE("sweep validation") {
  const fs::path dir = scratch_dir("sweep");
  ExperimentSpec spec = tiny_spec(dir);
  spec.scenario.setting = Setting::s3;
  CHECK_THROWS_AS(run_sweep(spec, SweepParam::h, {}), SpecError);
  CHECK_THROWS_AS(run_sweep(spec, SweepParam::delta, {1.0}), SpecError);
  CHECK_THROWS_AS(run_sweep(spec, SweepParam::h, {-1.0}), SpecError);
  CHECK_THROWS_AS(parse_sweep_param("sigma"), SpecError);

  spec.methods = {Method::oracle};
  spec.replications = 2;
  const auto result = run_sweep(spec, SweepParam::h, {0.0, 1.0});
  REQUIRE(result.points.size() == 2);
  const std::string text = slurp(result.csv);
  CHECK(text.rfind("param,value,method,count,", 0) == 0);
  CHECK(text.find("\nh,0,oracle,2,") != std::string::npos);
  CHECK(text.find("\nh,1,oracle,2,") != std::string::npos);
}

TEST_CASE("tune") {
  const fs::path dir = scratch_dir("tune");
  ExperimentSpec spec = tiny_spec(dir);
  CHECK_THROWS_AS(run_tune(spec), SpecError);
  apply_setting(spec, "grid_k", "1,2");
  apply_setting(spec, "grid_s", "3");
  apply_setting(spec, "grid_lambda", "0.05");
  apply_setting(spec, "grid_eta", "0.1,0.5");
  const auto report = run_tune(spec);
  CHECK(report.selection.table.size() == 2);
  CHECK((report.eta == 0.1 || report.eta == 0.5));
  CHECK(slurp(report.csv).rfind("k,s,q,lambda,loss,criterion\n", 0) == 0);
}

TEST_CASE("timing column is blank unless requested") {
  std::vector<ResultRow> rows(1);
  rows[0].method = "iht-local";
  rows[0].mse = 0.5;
  rows[0].fp = rows[0].fn = 0.0;
  rows[0].rand_index = std::nan("");
  rows[0].pe = std::nan("");
  rows[0].wall_ms = 12.5;
  CHECK(format_rows_csv(rows, false) ==
        "method,replication,mse,fp,fn,rand_index,pe,wall_ms\niht-local,0,0.5,0,0,,,\n");
  CHECK(format_rows_csv(rows, true).find(",,,12.5\n") != std::string::npos);
}

}
