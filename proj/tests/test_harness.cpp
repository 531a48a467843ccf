#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metagrad/cli.hpp"
#include "metagrad/harness.hpp"

using namespace metagrad;

namespace {

std::string csv_string(const AggregateReport& report) {
  std::ostringstream os;
  write_aggregate_csv(report, os);
  return os.str();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("metagrad");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

bool records_equal(const RunRecord& a, const RunRecord& b) {
  if (a.iterations_run != b.iterations_run || a.status != b.status ||
      a.draws_used != b.draws_used || a.evals_used != b.evals_used)
    return false;
  for (int i = 0; i < a.iterations_run; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if ((a.params[k] != b.params[k]).any()) return false;
    if ((a.prop[k] != b.prop[k]).any()) return false;
    if ((a.diff[k] != b.diff[k]).any()) return false;
    if ((a.mean_est[k] != b.mean_est[k]).any()) return false;
    if ((a.var_est[k] != b.var_est[k]).any()) return false;
    if ((a.delta[k] != b.delta[k]).any()) return false;
    if (a.loss[k] != b.loss[k]) return false;
    if (a.step_sq_norm[k] != b.step_sq_norm[k]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("single meta iteration composes the first-step identities") {
  ExperimentConfig cfg;
  cfg.problem = "mult-noise";
  cfg.dim = 2;
  cfg.iterations = 1;
  cfg.lr = 0.05;
  const RunRecord rec = run_single(cfg, 0);
  REQUIRE(rec.iterations_run == 1);
  const Vec prop = rec.prop[0];
  CHECK((rec.mean_est[0] == prop).all());
  CHECK((rec.var_est[0] == prop.square()).all());
  for (Eigen::Index j = 0; j < 2; ++j)
    CHECK(rec.delta[0][j] ==
          doctest::Approx(-0.05 * prop[j] / (std::abs(prop[j]) + 1e-8)).epsilon(1e-14));
  CHECK((rec.diff[0] == 0.0).all());
  CHECK(rec.step_sq_norm[0] == 0.0);
}

TEST_CASE("scripted trajectories follow the schedule exactly") {
  ExperimentConfig cfg;
  cfg.problem = "mult-noise";
  cfg.dim = 3;
  cfg.iterations = 40;
  cfg.trajectory = "scripted-linear";
  const RunRecord rec = run_single(cfg, 0);
  REQUIRE(rec.iterations_run == 40);

  TrajectorySchedule sched;
  sched.kind = TrajectorySchedule::Kind::linear;
  sched.from = Vec::Constant(3, 2.0);
  sched.to = Vec::Zero(3);
  sched.horizon = 40;
  for (int i = 0; i < 40; ++i)
    CHECK((rec.params[static_cast<std::size_t>(i)] == sched.at(i)).all());
}

TEST_CASE("a noiseless scripted run reproduces the hand-computed recurrence") {
  // sigma = 0 makes every sample exact, so the whole pipeline is closed-form:
  // trajectory 2 -> 1 -> 0, beta_f = 0.9, beta_delta = 0.5.
  ExperimentConfig cfg;
  cfg.problem = "mult-noise";
  cfg.dim = 1;
  cfg.sigma = 0.0;
  cfg.samples_per_iter = 1;
  cfg.trajectory = "scripted-linear";
  cfg.iterations = 3;
  const RunRecord rec = run_single(cfg, 0);
  REQUIRE(rec.iterations_run == 3);

  // iteration 0: no step yet, alpha = 0 via the sentinel
  CHECK(rec.prop[0][0] == 2.0);
  CHECK(rec.diff[0][0] == 0.0);
  CHECK(rec.alpha[0][0] == 0.0);
  CHECK(rec.mean_est[0][0] == 2.0);
  CHECK(rec.var_est[0][0] == 4.0);

  // iteration 1: prop = 1, diff = -1, step^2 = 1. The diff EMA saw no
  // update at iteration 0, so its first sample fixes m2 = 1 exactly and
  // var_diff = 1. var_prop EMA: 4 + (0.1/0.19) (1 - 4).
  const double var_prop = 4.0 + (0.1 / 0.19) * (1.0 - 4.0);
  const double var_folded = 4.0 + 1.0;
  const double alpha = var_prop / (var_prop + var_folded + 1e-30);
  CHECK(rec.step_sq_norm[1] == 1.0);
  CHECK(rec.alpha[1][0] == doctest::Approx(alpha).epsilon(1e-14));
  CHECK(rec.mean_est[1][0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(rec.var_est[1][0] ==
        doctest::Approx(alpha * alpha * var_folded + (1.0 - alpha) * (1.0 - alpha) * var_prop)
            .epsilon(1e-14));
}

TEST_CASE("identical seed and replicate give identical runs") {
  ExperimentConfig cfg;
  cfg.problem = "mini-render";
  cfg.pixel_count = 4;
  cfg.spp = 3;
  cfg.iterations = 25;
  cfg.seed = 77;
  const RunRecord a = run_single(cfg, 3);
  const RunRecord b = run_single(cfg, 3);
  CHECK(records_equal(a, b));
  const RunRecord c = run_single(cfg, 4);
  CHECK_FALSE(records_equal(a, c));
}

TEST_CASE("two replicates, one iteration: aggregate mean is the exact average") {
  ExperimentConfig cfg;
  cfg.problem = "mult-noise";
  cfg.dim = 1;
  cfg.iterations = 1;
  cfg.replicates = 2;
  const AggregateReport report = run_experiment(cfg);
  const double a = report.records[0].loss[0];
  const double b = report.records[1].loss[0];
  CHECK(report.stats.at("loss").mean[0] == (a + b) / 2.0);
}

TEST_CASE("serial and parallel execution produce identical bytes") {
  ExperimentConfig cfg;
  cfg.problem = "exp-rate";
  cfg.iterations = 30;
  cfg.replicates = 6;
  cfg.seed = 5;
  cfg.threads = 1;
  const std::string serial = csv_string(run_experiment(cfg));
  cfg.threads = 4;
  const std::string parallel = csv_string(run_experiment(cfg));
  CHECK(serial == parallel);
}

TEST_CASE("alpha-clip ablation changes only the clipping step") {
  ExperimentConfig cfg;
  cfg.problem = "mini-render";
  cfg.pixel_count = 4;
  cfg.spp = 4;
  cfg.iterations = 20;
  cfg.replicates = 2;
  cfg.seed = 11;
  const std::string baseline1 = csv_string(run_experiment(cfg));
  cfg.no_alpha_clip = true;
  const std::string ablated = csv_string(run_experiment(cfg));
  cfg.no_alpha_clip = false;
  const std::string baseline2 = csv_string(run_experiment(cfg));
  CHECK(baseline1 == baseline2);
  CHECK(baseline1 != ablated);
}

TEST_CASE("independent variance sampling consumes extra draws") {
  ExperimentConfig cfg;
  cfg.problem = "exp-rate";
  cfg.samples_per_iter = 32;
  cfg.iterations = 3;
  const RunRecord base = run_single(cfg, 0);
  CHECK(base.draws_used == 3 * 32);
  CHECK(base.evals_used == 32 + 2 * 32 + 2 * 32);  // first iteration is single-point

  cfg.independent_variance_samples = true;
  const RunRecord indep = run_single(cfg, 0);
  CHECK(indep.draws_used == 2 * 3 * 32);

  cfg.independent_variance_samples = false;
  cfg.optimizer = "adam";
  const RunRecord adam = run_single(cfg, 0);
  CHECK(adam.draws_used == 3 * 32);
  CHECK(adam.evals_used == 3 * 32);
}

TEST_CASE("unknown identifiers are rejected with the valid set listed") {
  ExperimentConfig cfg;
  cfg.problem = "banana";
  try {
    cfg.validate();
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("exp-rate") != std::string::npos);
  }
  cfg.problem = "exp-rate";
  cfg.optimizer = "sgd";
  try {
    cfg.validate();
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("meta") != std::string::npos);
    CHECK(std::string(e.what()).find("adam") != std::string::npos);
  }
}

TEST_CASE("reserved non-zero-centred flag is rejected") {
  ExperimentConfig cfg;
  cfg.non_zero_centred = true;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("runaway learning rates truncate the run as diverged") {
  ExperimentConfig cfg;
  cfg.problem = "mult-noise";
  cfg.dim = 2;
  cfg.lr = 1e300;
  cfg.iterations = 10;
  const RunRecord rec = run_single(cfg, 0);
  CHECK(rec.status == RunRecord::Status::diverged);
  CHECK(rec.iterations_run < 10);
  CHECK(static_cast<int>(rec.params.size()) == rec.iterations_run);
}

TEST_CASE("convergence threshold marks finished runs") {
  ExperimentConfig cfg;
  cfg.problem = "mult-noise";
  cfg.dim = 1;
  cfg.iterations = 200;
  cfg.lr = 0.1;
  cfg.converge_threshold = 0.5;
  const RunRecord rec = run_single(cfg, 0);
  CHECK(rec.status == RunRecord::Status::converged);
}

TEST_CASE("summary JSON is versioned and carries final statistics") {
  ExperimentConfig cfg;
  cfg.problem = "mult-noise";
  cfg.dim = 2;
  cfg.iterations = 5;
  cfg.replicates = 3;
  cfg.converge_threshold = 1e-9;
  const AggregateReport report = run_experiment(cfg);
  const auto j = nlohmann::json::parse(summary_json(report));
  CHECK(j["schema_version"] == 1);
  CHECK(j["problem"] == "mult-noise");
  CHECK(j["replicates"] == 3);
  CHECK(j["final"].contains("param_err"));
  CHECK(j["convergence_iteration"] == -1);
  CHECK(j["draws_per_iteration"] == 2 * 32);
}

TEST_CASE("cli run emits deterministic CSV with a header row") {
  const auto csv1 = temp_path("metagrad_test_run1.csv");
  const auto csv2 = temp_path("metagrad_test_run2.csv");
  const std::vector<std::string> base = {"run",          "--problem",    "exp-rate",
                                         "--optimizer",  "meta",         "--iterations",
                                         "20",           "--replicates", "4",
                                         "--seed",       "7"};
  auto args1 = base;
  args1.push_back("--out");
  args1.push_back(csv1.string());
  auto args2 = base;
  args2.push_back("--out");
  args2.push_back(csv2.string());
  CHECK(run_cli(args1) == 0);
  CHECK(run_cli(args2) == 0);
  const std::string text1 = read_file(csv1);
  CHECK(text1 == read_file(csv2));
  CHECK(text1.rfind("iteration,statistic,value\n", 0) == 0);
  CHECK(text1.find("param_err_median") != std::string::npos);
  std::filesystem::remove(csv1);
  std::filesystem::remove(csv2);
}

TEST_CASE("cli flags override config-file values") {
  const auto config = temp_path("metagrad_test_config.ini");
  {
    std::ofstream os(config);
    os << "# experiment description\n";
    os << "problem = mult-noise\n";
    os << "iterations = 5\n";
    os << "replicates = 2\n";
  }
  const auto summary = temp_path("metagrad_test_summary.json");
  CHECK(run_cli({"run", "--config", config.string(), "--iterations", "7", "--summary",
                 summary.string()}) == 0);
  const auto j = nlohmann::json::parse(read_file(summary));
  CHECK(j["problem"] == "mult-noise");
  CHECK(j["iterations"] == 7);
  CHECK(j["replicates"] == 2);
  std::filesystem::remove(config);
  std::filesystem::remove(summary);
}

TEST_CASE("cli reports usage errors with exit code 1") {
  CHECK(run_cli({"run", "--problem", "banana"}) == 1);
  CHECK(run_cli({"run", "--no-such-flag"}) == 1);
  CHECK(run_cli({"run", "--optimizer", "sgd"}) == 1);
  CHECK(run_cli({}) == 1);
}

TEST_CASE("cli compare writes aligned optimizer blocks") {
  const auto csv = temp_path("metagrad_test_compare.csv");
  const auto json_path = temp_path("metagrad_test_compare.json");
  CHECK(run_cli({"compare", "--problem", "mini-render", "--pixel-count", "4", "--budget-samples",
                 "4", "--iterations", "15", "--replicates", "3", "--lr", "0.05", "--out",
                 csv.string(), "--summary", json_path.string()}) == 0);
  const std::string text = read_file(csv);
  CHECK(text.rfind("optimizer,iteration,statistic,value\n", 0) == 0);
  CHECK(text.find("\nmeta,0,") != std::string::npos);
  CHECK(text.find("\nadam,0,") != std::string::npos);
  const auto j = nlohmann::json::parse(read_file(json_path));
  CHECK(j["meta"]["draws_per_iteration"] == 16);
  CHECK(j["adam"]["draws_per_iteration"] == 16);
  std::filesystem::remove(csv);
  std::filesystem::remove(json_path);
}

TEST_CASE("cli ablate writes one block per variant") {
  const auto prefix = temp_path("metagrad_test_ablate.csv");
  CHECK(run_cli({"ablate", "--problem", "mini-render", "--pixel-count", "4", "--iterations",
                 "10", "--replicates", "2", "--out", prefix.string()}) == 0);
  for (const char* variant : {"baseline", "no-alpha-clip", "independent-variance"}) {
    const auto path = temp_path(std::string("metagrad_test_ablate-") + variant + ".csv");
    CHECK(std::filesystem::exists(path));
    std::filesystem::remove(path);
  }
}

TEST_CASE("cli dump-replicate writes the wide per-iteration table") {
  const auto dump = temp_path("metagrad_test_dump.csv");
  CHECK(run_cli({"run", "--problem", "mult-noise", "--dim", "2", "--iterations", "4",
                 "--dump-replicate", "0", "--dump-out", dump.string()}) == 0);
  const std::string text = read_file(dump);
  CHECK(text.rfind("iteration,loss,step_sq_norm,param_0,param_1", 0) == 0);
  CHECK(text.find("alpha_0") != std::string::npos);
  std::filesystem::remove(dump);
}
