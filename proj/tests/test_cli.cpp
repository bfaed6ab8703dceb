#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "diffgnss/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "diffgnss");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = diffgnss::cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("diffgnss_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_config(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const char* kBiased =
    "scenario.epochs = 150\nscenario.satellites = 9\nscenario.speed_mps = 6\n"
    "scenario.waypoints = 37.40,-122.10,0; 37.41,-122.10,0\n"
    "errors.noise_sigma_m = 0.4\nerrors.a_range = 0.5, 3.0\nerrors.b_range = -8.0, 8.0\n"
    "train.epochs = 3\ntrain.seed = 2\n";

// Linear-interpolation percentile written out independently of the library.
double brute_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double rank = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(rank);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (rank - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

}  // namespace

TEST_F(CliTest, SimulateWritesTenEpochsDeterministically) {
  const std::string cfg = write_config("sim.cfg", "scenario.epochs = 10\nscenario.satellites = 8\n");
  const Outcome a = run({"simulate", "--config", cfg, "--out", path("a")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("simulated 10 epochs"), std::string::npos);
  const auto summary = nlohmann::json::parse(slurp(dir_ / "a" / "summary.json"));
  EXPECT_EQ(summary["epochs"], 10);
  const std::string derived = slurp(dir_ / "a" / "derived.csv"), truth = slurp(dir_ / "a" / "ground_truth.csv");
  EXPECT_EQ(std::count(derived.begin(), derived.end(), '\n'), 1 + summary["rows"].get<long>());
  EXPECT_GE(summary["satellites_per_epoch"]["min"].get<int>(), 4);
  EXPECT_EQ(std::count(truth.begin(), truth.end(), '\n'), 11);

  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", path("b")}).code, 0);
  for (const char* f : {"derived.csv", "ground_truth.csv", "summary.json", "config.cfg"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
}

TEST_F(CliTest, ZeroErrorSimulationThenBaselineScoresNearZero) {
  const std::string cfg = write_config("zero.cfg", "scenario.epochs = 40\nscenario.speed_mps = 5\n"
                                                   "scenario.waypoints = 37.40,-122.10,0; 37.41,-122.10,0\n");
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", path("sim")}).code, 0);
  const Outcome b = run({"baseline", "--config", cfg, "--out", path("base"), "--set", "data.source=files", "--set",
                         "data.derived_csv=" + path("sim/derived.csv"), "--set",
                         "data.truth_csv=" + path("sim/ground_truth.csv")});
  ASSERT_EQ(b.code, 0) << b.err;
  const auto m = nlohmann::json::parse(slurp(dir_ / "base" / "metrics.json"));
  EXPECT_LT(m["methods"]["wls"]["score_m"].get<double>(), 1e-5);
  EXPECT_EQ(m["dataset"]["source"], "files");
}

TEST_F(CliTest, BiasedBaselineScoreMatchesErrorsCsv) {
  const std::string cfg = write_config("biased.cfg", kBiased);
  ASSERT_EQ(run({"baseline", "--config", cfg, "--out", path("base")}).code, 0);
  std::istringstream csv(slurp(dir_ / "base" / "errors.csv"));
  std::string line;
  std::getline(csv, line);
  std::vector<double> errs;
  while (std::getline(csv, line)) {
    const auto c1 = line.find(',');
    errs.push_back(std::stod(line.substr(c1 + 1, line.find(',', c1 + 1) - c1 - 1)));
  }
  const auto m = nlohmann::json::parse(slurp(dir_ / "base" / "metrics.json"));
  const double score = m["methods"]["wls"]["score_m"];
  EXPECT_EQ(m["methods"]["wls"]["epochs"], errs.size());
  EXPECT_NEAR(score, 0.5 * (brute_percentile(errs, 50) + brute_percentile(errs, 95)), 1e-12);
  EXPECT_GT(score, 0.1);
}

TEST_F(CliTest, MissingInputNamesThePath) {
  const std::string cfg = write_config("files.cfg", "data.source = files\ndata.derived_csv = " + path("absent.csv") +
                                                        "\ndata.truth_csv = " + path("absent_truth.csv") + "\n");
  const Outcome o = run({"baseline", "--config", cfg, "--out", path("base")});
  EXPECT_EQ(o.code, diffgnss::cli::kDataFailure);
  EXPECT_NE(o.err.find(path("absent.csv")), std::string::npos) << o.err;
  EXPECT_FALSE(fs::exists(path("base")));
  EXPECT_FALSE(fs::exists(path("base.staging")));

  const Outcome missing_cfg = run({"baseline", "--config", path("nope.cfg"), "--out", path("x")});
  EXPECT_EQ(missing_cfg.code, diffgnss::cli::kConfigFailure);
  EXPECT_NE(missing_cfg.err.find(path("nope.cfg")), std::string::npos);
}

TEST_F(CliTest, ConfigFailuresUseTheConfigExitCode) {
  const std::string cfg = write_config("biased.cfg", kBiased);
  EXPECT_EQ(run({"train", "--config", cfg, "--out", path("t"), "--mode", "bogus"}).code, diffgnss::cli::kConfigFailure);
  EXPECT_EQ(run({"train", "--config", cfg, "--out", path("t"), "--backward-mode", "sideways"}).code,
            diffgnss::cli::kConfigFailure);
  EXPECT_EQ(run({"baseline", "--out", path("t")}).code, diffgnss::cli::kConfigFailure);
  EXPECT_EQ(run({"baseline", "--config", cfg}).code, diffgnss::cli::kConfigFailure);
  EXPECT_EQ(run({"frobnicate"}).code, diffgnss::cli::kConfigFailure);
  EXPECT_EQ(run({"baseline", "--config", cfg, "--out", path("t"), "--set", "scenario.satellites=2"}).code,
            diffgnss::cli::kConfigFailure);

  ASSERT_EQ(run({"baseline", "--config", cfg, "--out", path("b")}).code, 0);
  const Outcome again = run({"baseline", "--config", cfg, "--out", path("b")});
  EXPECT_EQ(again.code, diffgnss::cli::kConfigFailure);
  EXPECT_NE(again.err.find("--force"), std::string::npos);
  EXPECT_EQ(run({"baseline", "--config", cfg, "--out", path("b"), "--force"}).code, 0);
}

TEST_F(CliTest, UnconvergedSolvesUseTheNumericalExitCode) {
  const std::string cfg = write_config("biased.cfg", std::string(kBiased) + "wls.max_iter = 1\n");
  const Outcome o = run({"baseline", "--config", cfg, "--out", path("b"), "--cold-start"});
  EXPECT_EQ(o.code, diffgnss::cli::kNumericalFailure) << o.err;
}

TEST_F(CliTest, TrainRunIsReproducibleFromItsSnapshot) {
  const std::string cfg = write_config("biased.cfg", kBiased);
  const Outcome t = run({"train", "--config", cfg, "--out", path("t1"), "--seed", "11"});
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"config.cfg", "metrics.json", "errors.csv", "ecdf.csv", "errors_wls.csv", "loss_history.csv",
                        "model.json", "checkpoints/checkpoint_last.json"})
    EXPECT_TRUE(fs::exists(dir_ / "t1" / f)) << f;
  bool any_corrections = false;
  for (const auto& e : fs::directory_iterator(dir_ / "t1"))
    any_corrections = any_corrections || e.path().filename().string().rfind("corrections_", 0) == 0;
  EXPECT_TRUE(any_corrections);

  const std::string snapshot = slurp(dir_ / "t1" / "config.cfg");
  EXPECT_NE(snapshot.find("run.seed = 11"), std::string::npos);
  EXPECT_NE(snapshot.find("train.seed = 12"), std::string::npos);
  const auto m = nlohmann::json::parse(slurp(dir_ / "t1" / "metrics.json"));
  EXPECT_EQ(m["seeds"]["scenario"], 11);
  EXPECT_EQ(m["training"]["epochs"], 3);
  EXPECT_TRUE(m["methods"].contains("e2e_rcol"));
  EXPECT_TRUE(m["methods"].contains("wls"));

  ASSERT_EQ(run({"train", "--config", path("t1/config.cfg"), "--out", path("t2")}).code, 0);
  EXPECT_EQ(slurp(dir_ / "t1" / "metrics.json"), slurp(dir_ / "t2" / "metrics.json"));
  EXPECT_EQ(slurp(dir_ / "t1" / "model.json"), slurp(dir_ / "t2" / "model.json"));
}

TEST_F(CliTest, SupervisedTrainingAndEvalProduceComparableReports) {
  const std::string cfg = write_config("biased.cfg", kBiased);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", path("sup"), "--mode", "supervised_smoothed"}).code, 0);
  const auto m = nlohmann::json::parse(slurp(dir_ / "sup" / "metrics.json"));
  EXPECT_EQ(m["mode"], "supervised_smoothed");
  EXPECT_TRUE(m["methods"].contains("supervised_smoothed"));

  const Outcome e = run({"eval", "--config", path("sup/config.cfg"), "--checkpoint", path("sup/model.json"), "--out",
                         path("ev")});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto me = nlohmann::json::parse(slurp(dir_ / "ev" / "metrics.json"));
  EXPECT_EQ(me["methods"], m["methods"]);
  EXPECT_EQ(slurp(dir_ / "sup" / "errors.csv"), slurp(dir_ / "ev" / "errors.csv"));
}

TEST_F(CliTest, GradcheckPassesAndDetectsCorruption) {
  const Outcome ok = run({"gradcheck", "--out", path("gc")});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("max_rel_err"), std::string::npos);
  EXPECT_NE(ok.out.find("dnls_unrolling_vs_fd"), std::string::npos);
  EXPECT_NE(ok.out.find("full_chain_e2e_rcol"), std::string::npos);
  const auto j = nlohmann::json::parse(slurp(dir_ / "gc" / "gradcheck.json"));
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_GE(j["checks"][0]["instances"].get<int>(), 100);

  const Outcome bad = run({"gradcheck", "--corrupt-backward"});
  EXPECT_EQ(bad.code, diffgnss::cli::kCheckFailed);
  EXPECT_NE(bad.out.find("worst offender"), std::string::npos);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}
