#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"

using namespace mlss;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mlss_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun run(const std::string& args, const std::string& env = "") const {
    const fs::path out = dir_ / "stdout.txt";
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = env + " '" + std::string(MLSS_CLI_PATH) + "' " + args + " > '" + out.string() + "' 2> '" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  std::string write_data(const Dataset& ds, const std::string& name) const {
    const fs::path p = dir_ / name;
    write_csv(p.string(), ds);
    return p.string();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, EstimateHappyPath) {
  const std::string data = write_data(testutil::random_iv_data(400, 2, 1, 3, 1, true), "d.csv");
  const CliRun r = run("estimate --data '" + data + "' --seed 3 --learner ols");
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j.at("status"), "ok");
  ASSERT_EQ(j.at("tau").size(), 2u);
  EXPECT_EQ(j.at("tau")[0].at("name"), "d_0");
  EXPECT_EQ(j.at("tau")[1].at("name"), "d_1");
  EXPECT_EQ(j.at("coefficients").size(), 4u);
  EXPECT_EQ(j.at("first_stage_F").size(), 2u);
  EXPECT_EQ(j.at("folds").size(), 2u);
  EXPECT_EQ(j.at("config").at("seed"), 3);
  EXPECT_EQ(j.at("config").at("learner").at("kind"), "ols");
  EXPECT_NEAR(j.at("tau")[0].at("estimate").get<double>(), 1.0, 0.3);
}

TEST_F(CliTest, EstimateMatchesLibrary) {
  const Dataset ds = testutil::random_iv_data(300, 1, 1, 2, 2);
  const std::string data = write_data(ds, "d.csv");
  const fs::path out = dir_ / "report.json";
  const CliRun r = run("estimate --data '" + data + "' --seed 9 --folds 3 --learner random_forest --out '" +
                    out.string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = Json::parse(slurp(out));
  LearnerSpec spec = LearnerSpec::forest_default();
  spec.seed = derive_seed(9, 2);
  const Dataset reloaded = load_csv(data);
  const InstrumentMatrix inst = generate_instrument(reloaded, make_folds(300, 3, derive_seed(9, 1)), spec);
  const EstimateResult est = mlss_estimate(inst, design_matrices(reloaded), reloaded.y);
  EXPECT_EQ(j.at("tau")[0].at("estimate").get<double>(), est.theta(1));
}

TEST_F(CliTest, CsvFormat) {
  const std::string data = write_data(testutil::random_iv_data(200, 1, 0, 2, 3), "d.csv");
  const CliRun r = run("estimate --data '" + data + "' --learner ols --format csv");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("name,estimate,se,ci_lo,ci_hi\n", 0), 0u);
  EXPECT_NE(r.out.find("\nd_0,"), std::string::npos);
}

TEST_F(CliTest, ConstantTreatmentExitsTwoWithPartialReport) {
  Dataset ds = testutil::random_iv_data(200, 1, 0, 2, 4);
  ds.d.setConstant(1.0);
  const std::string data = write_data(ds, "d.csv");
  const CliRun r = run("estimate --data '" + data + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("weak identification"), std::string::npos);
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j.at("status"), "weak_identification");
  EXPECT_TRUE(j.contains("guidance"));
}

TEST_F(CliTest, InputErrorsExitOne) {
  EXPECT_EQ(run("estimate --data '" + (dir_ / "missing.csv").string() + "'").code, 1);
  const fs::path bad = dir_ / "bad.csv";
  std::ofstream(bad) << "y,d_t,w_1\n1,NaN,2\n2,1,3\n";
  const CliRun r = run("estimate --data '" + bad.string() + "'");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("d_t"), std::string::npos);
  const std::string data = write_data(testutil::random_iv_data(50, 1, 0, 2, 5), "d.csv");
  EXPECT_EQ(run("estimate --data '" + data + "' --learner xgboost").code, 1);
  EXPECT_EQ(run("estimate --data '" + data + "' --weighting optimal").code, 1);
  EXPECT_EQ(run("estimate --data '" + data + "' --folds 1").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST_F(CliTest, LearnerJsonAndLenientMode) {
  const std::string data = write_data(testutil::random_iv_data(200, 1, 0, 2, 6), "d.csv");
  const CliRun r = run("estimate --data '" + data +
                    "' --learner '{\"kind\":\"gradient_boosting\",\"params\":{\"n_trees\":20},\"seed\":4}'");
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j.at("config").at("learner").at("params").at("n_trees"), 20);
  EXPECT_EQ(j.at("config").at("learner").at("seed"), 4);
  const fs::path messy = dir_ / "messy.csv";
  std::ofstream(messy) << "y,d_t,w_1,notes\n1,0,2,a\n2,1,3,b\n0,0,1,c\n3,1,4,d\n1,1,2,e\n2,0,5,f\n";
  EXPECT_EQ(run("estimate --data '" + messy.string() + "' --learner ols").code, 1);
  EXPECT_EQ(run("estimate --data '" + messy.string() + "' --learner ols --lenient").code, 0);
}

TEST_F(CliTest, ArStrongInstrumentGivesFiniteSetAroundEstimate) {
  const std::string data = write_data(testutil::random_iv_data(600, 1, 1, 3, 7), "d.csv");
  const CliRun r = run("ar --data '" + data + "' --learner ols --alpha 0.05 --folds 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = Json::parse(r.out);
  EXPECT_DOUBLE_EQ(j.at("fold_level").get<double>(), 0.025);
  ASSERT_EQ(j.at("per_fold").size(), 2u);
  for (const auto& f : j.at("per_fold")) EXPECT_NEAR(f.at("critical_value").get<double>(), 5.023886187314888, 1e-9);
  const Json& comb = j.at("combined");
  EXPECT_EQ(comb.at("shape"), "finite_interval");
  EXPECT_TRUE(j.at("finite").get<bool>());
  const double est = j.at("pooled")[1].at("estimate").get<double>();
  EXPECT_LE(comb.at("intervals")[0][0].get<double>(), est);
  EXPECT_GE(comb.at("intervals")[0][1].get<double>(), est);
}

TEST_F(CliTest, ArIrrelevantInstrumentIsUnbounded) {
  Dataset ds = testutil::random_iv_data(400, 1, 0, 2, 8);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z;
  for (Index i = 0; i < ds.n(); ++i) ds.w.row(i) << z(rng), z(rng);
  const std::string data = write_data(ds, "d.csv");
  const CliRun r = run("ar --data '" + data + "' --learner ols");
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = Json::parse(r.out);
  const std::string shape = j.at("combined").at("shape");
  EXPECT_TRUE(shape == "whole_line" || shape == "two_rays" || shape == "half_line") << shape;
  EXPECT_FALSE(j.at("finite").get<bool>());
}

TEST_F(CliTest, ArGridForVectorTreatments) {
  const std::string data = write_data(testutil::random_iv_data(300, 2, 0, 3, 10), "d.csv");
  EXPECT_EQ(run("ar --data '" + data + "' --learner ols").code, 1);
  const CliRun r = run("ar --data '" + data + "' --learner ols --tau-grid 0:2:0.5");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("grid"), std::string::npos);
  EXPECT_EQ(run("ar --data '" + data + "' --learner ols --tau-grid 2:0:0.5").code, 1);
}

TEST_F(CliTest, ArRejectsEfficientWeighting) {
  const std::string data = write_data(testutil::random_iv_data(200, 1, 0, 2, 11), "d.csv");
  EXPECT_EQ(run("ar --data '" + data + "' --weighting efficient").code, 1);
}

TEST_F(CliTest, BundledConfigIsDeterministic) {
  const std::string config = std::string(MLSS_SOURCE_DIR) + "/configs/nocov-small.json";
  const CliRun a = run("simulate --config '" + config + "' --out-dir '" + (dir_ / "a").string() + "'");
  ASSERT_EQ(a.code, 0) << a.err;
  const CliRun b = run("simulate --config '" + config + "' --out-dir '" + (dir_ / "b").string() + "'", "MLSS_THREADS=3");
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"report.json", "replications.csv"}) {
    ASSERT_TRUE(fs::exists(dir_ / "a" / f)) << f;
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  }
  const Json j = Json::parse(slurp(dir_ / "a" / "report.json"));
  EXPECT_EQ(j.at("seed"), 20240101u);
  EXPECT_EQ(j.at("cells").size(), 5u);
  EXPECT_EQ(j.at("config").at("reps"), 50);
}

TEST_F(CliTest, SimulateConfigErrorsListValidNames) {
  const fs::path cfg = dir_ / "bad.json";
  std::ofstream(cfg) << R"({"dgp": "dgp_nocov", "n": [100], "estimators": ["lgb", "deep_net"], "reps": 0})";
  const CliRun r = run("simulate --config '" + cfg.string() + "' --out-dir '" + (dir_ / "o").string() + "'");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("deep_net"), std::string::npos);
  EXPECT_NE(r.err.find("quad_interact"), std::string::npos);
  EXPECT_NE(r.err.find("reps"), std::string::npos);
  std::ofstream(cfg, std::ios::trunc) << "{not json";
  EXPECT_EQ(run("simulate --config '" + cfg.string() + "'").code, 1);
}
