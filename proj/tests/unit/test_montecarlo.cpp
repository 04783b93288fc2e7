#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"

using namespace mlss;

TEST(Dgp, XorFunctionValues) {
  EXPECT_DOUBLE_EQ(mu_xor(0.5, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(mu_xor(1.0, 1.0), 0.1);
  EXPECT_DOUBLE_EQ(mu_xor(-0.5, 0.5), -0.5);
  EXPECT_DOUBLE_EQ(mu_xor(0.0, 0.7), 0.0);
  EXPECT_NEAR(propensity(0.0, 0.0, M_PI / 4.0), 0.5, 1e-15);
}

TEST(Dgp, CovariateDesignConstants) {
  const Matrix& a = covariate_loadings();
  EXPECT_EQ(a.row(0), (Eigen::RowVectorXd(3) << 1.0, 0.4, 0.3).finished());
  EXPECT_EQ(a.row(1), (Eigen::RowVectorXd(3) << 0.5, 2.0, 0.2).finished());
  EXPECT_EQ(covariate_effects(), (Vector(2) << 0.1, 0.3).finished());
}

TEST(Dgp, DeterministicAndPrefixStable) {
  for (const DgpKind kind : {DgpKind::nocov, DgpKind::cov}) {
    const SimDataset a = simulate(kind, 500, 42);
    const SimDataset b = simulate(kind, 500, 42);
    EXPECT_EQ(a.data.y, b.data.y);
    EXPECT_EQ(a.data.d, b.data.d);
    EXPECT_EQ(a.data.x, b.data.x);
    EXPECT_EQ(a.data.w, b.data.w);
    const SimDataset small = simulate(kind, 100, 42);
    EXPECT_EQ(small.data.y, a.data.y.head(100));
    EXPECT_NE(simulate(kind, 500, 43).data.y, a.data.y);
  }
}

TEST(Dgp, StructuralEquations) {
  const SimDataset nc = dgp_nocov(2000, 1);
  EXPECT_EQ(nc.data.p_x(), 0);
  EXPECT_EQ(nc.data.p_w(), 3);
  for (Index i = 0; i < 2000; ++i) {
    const double d = nc.data.d(i, 0);
    EXPECT_TRUE(d == 0.0 || d == 1.0);
    EXPECT_GE(nc.propensity(i), 0.0);
    EXPECT_LE(nc.propensity(i), 1.0);
    EXPECT_NEAR(nc.data.y(i), d + nc.scale(i) * nc.u(i), 1e-12);
  }
  const SimDataset cv = dgp_cov(2000, 2);
  ASSERT_EQ(cv.data.p_x(), 2);
  Index flipped = 0;
  for (Index i = 0; i < 2000; ++i) {
    EXPECT_NEAR(cv.data.y(i), cv.data.d(i, 0) + cv.data.x.row(i).dot(covariate_effects()) + cv.u(i), 1e-12);
    if (cv.data.x(i, 0) <= 0.0) {
      EXPECT_EQ(cv.data.d(i, 0), cv.d_latent(i));
    }
    if (cv.data.d(i, 0) != cv.d_latent(i)) ++flipped;
  }
  // About 0.3 of the rows with X0 > 0 flip.
  const double positive = static_cast<double>((cv.data.x.col(0).array() > 0.0).count());
  EXPECT_NEAR(flipped / positive, kFlipProbability, 0.05);
}

// E[U g(W)] = 0 for several g, within four Monte Carlo standard errors.
TEST(Dgp, ErrorIsMeanIndependentOfInstruments) {
  const Index n = 1000000;
  for (const DgpKind kind : {DgpKind::nocov, DgpKind::cov}) {
    const SimDataset sim = simulate(kind, n, 7);
    const Matrix& w = sim.data.w;
    const Vector u = kind == DgpKind::nocov
                         ? Vector(sim.u)
                         : Vector(sim.data.y - sim.data.d.col(0) - sim.data.x * covariate_effects());
    const std::vector<Vector> gs{Vector::Ones(n), w.col(0), Vector(w.col(0).cwiseProduct(w.col(1))),
                                 Vector(w.col(2).array().square())};
    for (std::size_t k = 0; k < gs.size(); ++k) {
      const Vector ug = u.cwiseProduct(gs[k]);
      const double mean = ug.mean();
      const double se = std::sqrt((ug.array() - mean).square().sum() / (n - 1.0) / n);
      EXPECT_LE(std::abs(mean), 4.0 * se) << to_string(kind) << " g#" << k;
    }
  }
}

TEST(Dgp, TruthFunctionsMatchSimulation) {
  const SimDataset sim = dgp_cov(400000, 8);
  const Vector truth = true_treatment_mean(DgpKind::cov, sim.data.w).col(0);
  const Vector resid = sim.data.d.col(0) - truth;
  EXPECT_NEAR(resid.mean(), 0.0, 4.0 * 0.5 / std::sqrt(400000.0));
  EXPECT_NEAR(resid.dot(sim.data.w.col(2)) / 400000.0, 0.0, 0.005);
  const Matrix xr = sim.data.x - true_covariate_mean(sim.data.w);
  EXPECT_NEAR(xr.col(0).mean(), 0.0, 0.01);
  EXPECT_NEAR(xr.col(1).squaredNorm() / 400000.0, 1.0, 0.01);
  const SimDataset nc = dgp_nocov(400000, 9);
  const Vector u2 = nc.u.array().square() * nc.scale.array().square();
  EXPECT_NEAR(u2.mean(), true_error_variance_nocov(nc.data.w).mean(), 0.01);
}

TEST(MonteCarlo, WinsorizedSdHandExample) {
  // Quantiles (0.75, 26.5); clipped (0.75, 1, 2, 26.5) has n-1 SD 12.63654587...
  EXPECT_NEAR(winsorized_sd({0, 1, 2, 100}, 0.25), 12.636545875620705, 1e-12);
  const std::vector<double> v{3, -1, 4, 1, 5, 9, 2, 6};
  EXPECT_NEAR(winsorized_sd(v, 1e-12), stats::sample_sd(v), 1e-9);
  EXPECT_EQ(winsorized_sd({2, 2, 2}, 0.1), 0.0);
  EXPECT_THROW(winsorized_sd({1.0}, 0.1), InputError);
  EXPECT_THROW(winsorized_sd({1.0, 2.0}, 0.5), InputError);
}

TEST(MonteCarlo, CoverageCounts) {
  const std::vector<ARSet> sets{ARSet::from({{0.0, 2.0}}), ARSet::from({{2.0, 3.0}}), ARSet::from({})};
  EXPECT_NEAR(coverage(sets, 2.0), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(coverage(std::vector<ARSet>(3, ARSet::from({{-kInf, kInf}})), 1.0), 1.0);
  EXPECT_EQ(coverage(std::vector<ARSet>(3, ARSet::from({})), 1.0), 0.0);
  EXPECT_EQ(coverage(std::vector<Interval>{{0.0, 1.0}, {2.0, 3.0}}, 0.5), 0.5);
}

TEST(MonteCarlo, ExtraSampleErrorCases) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> z;
  const Index n = 500;
  Vector d(n), u(n), ups(n);
  for (Index i = 0; i < n; ++i) {
    d(i) = z(rng);
    u(i) = z(rng);
    ups(i) = d(i) + 0.5 * z(rng);
  }
  EXPECT_NEAR(extra_sample_error(ups, Vector(2.0 * d), d, 2.0).value, 0.0, 1e-20);
  const Vector y = 2.0 * d + u;
  const Vector dc = d.array() - d.mean();
  const double ratio = dc.dot(u) / dc.squaredNorm();
  EXPECT_NEAR(extra_sample_error(d, y, d, 2.0).value, n * ratio * ratio, 1e-10);
  const ExtraSampleError flat = extra_sample_error(Vector::Ones(n), y, d, 2.0);
  EXPECT_TRUE(flat.degenerate);
  EXPECT_TRUE(std::isinf(flat.value));
}

TEST(MonteCarlo, ExtraSampleErrorFollowsFitQuality) {
  // The true propensity predicts D far better than a linear fit; its error
  // is smaller in the median.
  const SimDataset train = dgp_nocov(2000, 11);
  const Predictor oracle = fit(oracle_treatment_learner(DgpKind::nocov), train.data.w, train.data.d);
  const Predictor linear = fit(LearnerSpec::ols(), train.data.w, train.data.d);
  std::vector<double> err_oracle, err_linear, r2_oracle, r2_linear;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const SimDataset fresh = dgp_nocov(2000, derive_seed(12, rep));
    err_oracle.push_back(extra_sample_error(oracle, fresh, 1.0).value);
    err_linear.push_back(extra_sample_error(linear, fresh, 1.0).value);
    const double m = train.data.d.mean();
    r2_oracle.push_back(oos_r2(oracle.predict(fresh.data.w).col(0), fresh.data.d.col(0), m).value);
    r2_linear.push_back(oos_r2(linear.predict(fresh.data.w).col(0), fresh.data.d.col(0), m).value);
  }
  EXPECT_GT(stats::median(r2_oracle), stats::median(r2_linear));
  EXPECT_LT(stats::median(err_oracle), stats::median(err_linear));
}

TEST(MonteCarlo, MteTwoPointExample) {
  const Vector mu = (Vector(4) << 0.2, 0.8, 0.2, 0.8).finished();
  const std::vector<double> grid{0.0, 0.1, 0.2, 0.21, 0.5, 0.79, 0.8, 0.9, 1.0};
  const std::vector<double> w = mte_weights(Vector::Ones(4), mu, mu, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double expected = (grid[g] >= 0.2 && grid[g] < 0.8) ? 5.0 / 3.0 : 0.0;
    EXPECT_NEAR(w[g], expected, 1e-12) << "v = " << grid[g];
  }
}

TEST(MonteCarlo, MteWeightsIntegrateToOne) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Index n = 20000;
  Vector mu(n), a(n);
  for (Index i = 0; i < n; ++i) {
    const double w = unif(rng);
    mu(i) = w * w;
    a(i) = 0.5 + unif(rng);
  }
  std::vector<double> grid;
  for (int g = 0; g <= 1000; ++g) grid.push_back(g * 1e-3);
  for (const Vector& b : {Vector(mu), Vector(mu.array().sqrt())}) {
    const std::vector<double> w = mte_weights(a, b, mu, grid);
    double integral = 0.0;
    for (std::size_t g = 1; g < grid.size(); ++g) integral += 0.5 * (w[g] + w[g - 1]) * 1e-3;
    EXPECT_NEAR(integral, 1.0, 0.01);
    // At v = 0 the exact weight is zero; allow rounding.
    EXPECT_GE(*std::min_element(w.begin(), w.end()), -1e-12);
  }
}

TEST(MonteCarlo, MteRejectsBadInput) {
  const Vector mu = Vector::Constant(3, 0.5);
  EXPECT_THROW(mte_weights(Vector::Ones(3), mu, mu, {0.1}), DegenerateError);
  EXPECT_THROW(mte_weights(-Vector::Ones(3), mu, mu, {0.1}), InputError);
  EXPECT_THROW(mte_weights(Vector::Ones(3), mu, Vector::Constant(3, 1.5), {0.1}), InputError);
}

TEST(MonteCarlo, EstimatorNameParsing) {
  const EstimatorDef a = parse_estimator("rf_eff_cmo_full", WeightingScheme::identity, CovariateMode::partial_linear);
  EXPECT_EQ(a.learner_name, "rf");
  EXPECT_EQ(a.weighting, WeightingScheme::efficient);
  EXPECT_EQ(a.covariate_mode, CovariateMode::conditional_mean_only);
  EXPECT_TRUE(a.full_sample);
  EXPECT_FALSE(a.has_ar());
  const EstimatorDef b = parse_estimator("lgb", WeightingScheme::efficient, CovariateMode::partial_linear);
  EXPECT_EQ(b.weighting, WeightingScheme::efficient);
  EXPECT_EQ(parse_estimator("lgb_id", WeightingScheme::efficient, CovariateMode::partial_linear).weighting,
            WeightingScheme::identity);
  const EstimatorDef t = parse_estimator("tsls_quad", WeightingScheme::efficient, CovariateMode::partial_linear);
  EXPECT_EQ(t.family, EstimatorFamily::tsls);
  EXPECT_EQ(t.transform, InstrumentTransform::quadratic);
  try {
    parse_estimator("xgb", WeightingScheme::identity, CovariateMode::partial_linear);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("cubic_interact"), std::string::npos);
  }
}

TEST(MonteCarlo, MenuLearnersFollowFigureNames) {
  auto treatment = [](const std::string& name) {
    return menu_learners(parse_estimator(name, WeightingScheme::identity, CovariateMode::partial_linear),
                         DgpKind::nocov, 1)
        .treatment;
  };
  EXPECT_EQ(treatment("lin").kind, LearnerKind::ols);
  EXPECT_EQ(treatment("quad").polynomial.degree, 2);
  EXPECT_FALSE(treatment("quad").polynomial.interactions);
  EXPECT_TRUE(treatment("quad_interact").polynomial.interactions);
  EXPECT_EQ(treatment("cubic_interact").polynomial.degree, 3);
  EXPECT_EQ(treatment("discretized").discretized.thresholds, (std::vector<double>{-1.0, 0.0, 1.0}));
  EXPECT_EQ(treatment("lgb").kind, LearnerKind::gradient_boosting);
  EXPECT_EQ(treatment("rf").kind, LearnerKind::random_forest);
  EXPECT_EQ(treatment("oracle").kind, LearnerKind::oracle);
}

TEST(MonteCarlo, ConfigValidationListsEveryProblem) {
  const nlohmann::json j = {{"n", {4}}, {"reps", 0}, {"estimators", {"lgb", "nope"}}, {"colour", "red"}, {"K", 1}};
  try {
    experiment_config_from_json(j);
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    for (const char* needle : {"'colour'", "'dgp'", "n:", "reps:", "K:", "'nope'"})
      EXPECT_NE(msg.find(needle), std::string::npos) << needle << " missing from: " << msg;
  }
  const ExperimentConfig ok = experiment_config_from_json(
      {{"dgp", "dgp_cov"}, {"n", 500}, {"estimators", {"lgb"}}, {"seed", 5}, {"weighting", "efficient"}});
  EXPECT_EQ(ok.dgp, DgpKind::cov);
  EXPECT_EQ(ok.n, (std::vector<Index>{500}));
  EXPECT_EQ(ok.k, 2u);
  EXPECT_EQ(ok.winsor_q, 0.01);
  EXPECT_EQ(experiment_config_from_json(ok.to_json()).to_json(), ok.to_json());
}

TEST(MonteCarlo, SingleReplicationSummary) {
  ExperimentConfig cfg;
  cfg.n = {300};
  cfg.reps = 1;
  cfg.estimators = {"lin", "tsls_lin"};
  cfg.seed = 14;
  const ExperimentReport r = run_experiment(cfg, 1);
  ASSERT_EQ(r.cells.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    const auto& rec = r.records[e];
    const auto& cell = r.cells[e];
    ASSERT_TRUE(rec.ok) << rec.error;
    EXPECT_EQ(cell.median_estimate, rec.tau_hat);
    EXPECT_EQ(cell.median_se, rec.se);
    EXPECT_EQ(cell.winsorized_sd, 0.0);
    EXPECT_EQ(cell.wald_coverage, rec.wald_covers ? 1.0 : 0.0);
  }
}

TEST(MonteCarlo, FullSampleOlsCellMatchesTsls) {
  ExperimentConfig cfg;
  cfg.n = {400};
  cfg.reps = 5;
  cfg.estimators = {"lin_full", "tsls_lin"};
  cfg.seed = 15;
  const ExperimentReport r = run_experiment(cfg, 1);
  for (std::size_t rep = 0; rep < 5; ++rep)
    EXPECT_NEAR(r.records[2 * rep].tau_hat, r.records[2 * rep + 1].tau_hat, 1e-9);
  EXPECT_NEAR(r.cells[0].median_estimate, r.cells[1].median_estimate, 1e-9);
}

TEST(MonteCarlo, FailuresAreRecordedNotThrown) {
  // n = 8 with K = 4 leaves 6 training rows, too few for the efficient
  // path's internal split of a 2-row fold.
  ExperimentConfig cfg;
  cfg.n = {8};
  cfg.reps = 3;
  cfg.k = 4;
  cfg.estimators = {"discretized_eff", "lin"};
  cfg.seed = 16;
  const ExperimentReport r = run_experiment(cfg, 1);
  ASSERT_EQ(r.records.size(), 6u);
  EXPECT_EQ(r.cells[0].ok + r.cells[0].failed, 3u);
  for (const auto& rec : r.records) {
    if (!rec.ok) {
      EXPECT_FALSE(rec.error.empty());
    }
  }
}

TEST(MonteCarlo, ReportIndependentOfWorkerCount) {
  ExperimentConfig cfg;
  cfg.dgp = DgpKind::cov;
  cfg.n = {300, 400};
  cfg.reps = 6;
  cfg.estimators = {"oracle", "lgb", "rf_eff", "discretized", "tsls_quad"};
  cfg.seed = 17;
  auto render = [&](unsigned workers) {
    const ExperimentReport r = run_experiment(cfg, workers);
    std::ostringstream os;
    os << to_json(r).dump(2);
    write_replications_csv(os, r);
    return os.str();
  };
  const std::string one = render(1);
  EXPECT_EQ(one, render(3));
  EXPECT_EQ(one, render(8));
}

TEST(MonteCarlo, OracleWaldCoverageNearNominal) {
  ExperimentConfig cfg;
  cfg.n = {2000};
  cfg.reps = 500;
  cfg.estimators = {"oracle"};
  cfg.seed = 18;
  const ExperimentReport r = run_experiment(cfg);
  ASSERT_EQ(r.cells[0].ok, 500u);
  EXPECT_GE(r.cells[0].wald_coverage, 0.92);
  EXPECT_LE(r.cells[0].wald_coverage, 0.97);
}
