#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlss/common.hpp"
#include "mlss/data.hpp"
#include "mlss/dgp.hpp"
#include "mlss/estimator.hpp"
#include "mlss/features.hpp"
#include "mlss/instruments.hpp"
#include "mlss/learners.hpp"
#include "mlss/parallel.hpp"
#include "mlss/stats.hpp"
#include "mlss/weak_iv.hpp"

namespace mlss {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Clip at the type-7 q and 1-q quantiles, then take the n-1 sample SD.
inline double winsorized_sd(const std::vector<double>& values, double q = 0.01) {
  if (values.size() < 2) throw InputError("winsorized_sd needs at least two values");
  if (!(q > 0.0 && q < 0.5)) throw InputError("winsorized_sd: q must be in (0, 0.5)");
  const double lo = stats::quantile(values, q);
  const double hi = stats::quantile(values, 1.0 - q);
  std::vector<double> clipped(values.size());
  std::transform(values.begin(), values.end(), clipped.begin(), [&](double v) { return std::clamp(v, lo, hi); });
  return stats::sample_sd(clipped);
}

// Fraction of sets that contain the truth; an empty set never does.
inline double coverage(const std::vector<ARSet>& sets, double truth) {
  if (sets.empty()) throw InputError("coverage: no sets");
  const auto hits = std::count_if(sets.begin(), sets.end(), [truth](const ARSet& s) { return s.contains(truth); });
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

inline double coverage(const std::vector<Interval>& intervals, double truth) {
  if (intervals.empty()) throw InputError("coverage: no intervals");
  const auto hits =
      std::count_if(intervals.begin(), intervals.end(), [truth](const Interval& i) { return i.contains(truth); });
  return static_cast<double>(hits) / static_cast<double>(intervals.size());
}

struct ExtraSampleError {
  double value = 0.0;
  bool degenerate = false;  // zero covariance with D; value is +inf
};

// n (cov_n(ups, Y) / cov_n(ups, D) - tau)^2 on a sample the instrument was
// not trained on.
inline ExtraSampleError extra_sample_error(const Vector& ups, const Vector& y, const Vector& d, double tau) {
  const Index n = ups.size();
  if (y.size() != n || d.size() != n || n < 2) throw InputError("extra_sample_error: bad input sizes");
  const Vector uc = ups.array() - ups.mean();
  const double cov_y = uc.dot(Vector(y.array() - y.mean())) / static_cast<double>(n);
  const double cov_d = uc.dot(Vector(d.array() - d.mean())) / static_cast<double>(n);
  ExtraSampleError out;
  if (cov_d == 0.0) {
    out.value = kInf;
    out.degenerate = true;
    return out;
  }
  const double gap = cov_y / cov_d - tau;
  out.value = static_cast<double>(n) * gap * gap;
  return out;
}

inline ExtraSampleError extra_sample_error(const Predictor& upsilon, const SimDataset& fresh, double tau) {
  const Matrix pred = upsilon.predict(fresh.data.w);
  return extra_sample_error(pred.col(0), fresh.data.y, fresh.data.d.col(0), tau);
}

// omega(v) = mean(a b~ 1(mu > v)) / mean(a b~ mu) with b~ = b - sum(a b)/sum(a).
inline std::vector<double> mte_weights(const Vector& a, const Vector& b, const Vector& mu,
                                       const std::vector<double>& v_grid) {
  const Index n = a.size();
  if (b.size() != n || mu.size() != n || n == 0) throw InputError("mte_weights: inputs must share a positive length");
  if ((a.array() < 0.0).any()) throw InputError("mte_weights: a must be nonnegative");
  const double sa = a.sum();
  if (!(sa > 0.0)) throw InputError("mte_weights: mean(a) must be positive");
  if ((mu.array() < 0.0).any() || (mu.array() > 1.0).any()) throw InputError("mte_weights: mu must lie in [0, 1]");
  const Vector bt = b.array() - a.dot(b) / sa;
  const Vector ab = a.array() * bt.array();
  const double denom = ab.dot(mu) / static_cast<double>(n);
  if (denom == 0.0) throw DegenerateError("mte_weights: E[a b~ mu] is zero, weights undefined");
  std::vector<double> out;
  out.reserve(v_grid.size());
  for (const double v : v_grid) {
    double num = 0.0;
    for (Index i = 0; i < n; ++i)
      if (mu(i) > v) num += ab(i);
    out.push_back(num / static_cast<double>(n) / denom);
  }
  return out;
}

// OLS of Y on [1, ups, X] (the regression that replaces D by its
// prediction), with HC0 covariance.
inline EstimateResult forbidden_regression(const Matrix& ups, const Matrix& x, const Vector& y) {
  const Matrix t = hcat(hcat(ones_column(ups.rows()), ups), x);
  return plugin_estimate(t, t, y);
}

enum class EstimatorFamily { mlss, tsls };

// One entry of the experiment menu.
struct EstimatorDef {
  std::string name;
  EstimatorFamily family = EstimatorFamily::mlss;
  std::string learner_name;  // menu base name for mlss entries
  WeightingScheme weighting = WeightingScheme::identity;
  CovariateMode covariate_mode = CovariateMode::partial_linear;
  bool full_sample = false;
  InstrumentTransform transform = InstrumentTransform::linear;

  bool has_ar() const {
    return family == EstimatorFamily::mlss && weighting == WeightingScheme::identity && !full_sample;
  }
};

inline const std::vector<std::string>& menu_learner_names() {
  static const std::vector<std::string> names{"oracle", "lgb",  "rf",           "discretized",
                                              "lin",    "quad", "quad_interact", "cubic_interact"};
  return names;
}

inline const std::vector<std::string>& menu_tsls_names() {
  static const std::vector<std::string> names{"tsls_lin", "tsls_quad", "tsls_quad_interact", "tsls_cubic_interact",
                                              "tsls_discretized"};
  return names;
}

inline std::string menu_help() {
  std::ostringstream os;
  os << "valid estimators: <learner>[_id|_eff][_cmo][_full] with learner in {";
  for (std::size_t i = 0; i < menu_learner_names().size(); ++i) os << (i ? ", " : "") << menu_learner_names()[i];
  os << "}, or one of {";
  for (std::size_t i = 0; i < menu_tsls_names().size(); ++i) os << (i ? ", " : "") << menu_tsls_names()[i];
  os << "}";
  return os.str();
}

inline bool strip_suffix(std::string& s, const std::string& suffix) {
  if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
    s.resize(s.size() - suffix.size());
    return true;
  }
  return false;
}

inline EstimatorDef parse_estimator(const std::string& name, WeightingScheme default_weighting,
                                    CovariateMode default_mode) {
  EstimatorDef def;
  def.name = name;
  def.weighting = default_weighting;
  def.covariate_mode = default_mode;
  static const std::vector<std::pair<std::string, InstrumentTransform>> tsls_map{
      {"tsls_lin", InstrumentTransform::linear},
      {"tsls_quad", InstrumentTransform::quadratic},
      {"tsls_quad_interact", InstrumentTransform::quadratic_interact},
      {"tsls_cubic_interact", InstrumentTransform::cubic_interact},
      {"tsls_discretized", InstrumentTransform::discretized}};
  for (const auto& [key, t] : tsls_map) {
    if (name == key) {
      def.family = EstimatorFamily::tsls;
      def.transform = t;
      def.weighting = WeightingScheme::identity;
      def.full_sample = true;
      return def;
    }
  }
  std::string base = name;
  def.full_sample = strip_suffix(base, "_full");
  if (strip_suffix(base, "_cmo")) def.covariate_mode = CovariateMode::conditional_mean_only;
  if (strip_suffix(base, "_eff")) {
    def.weighting = WeightingScheme::efficient;
  } else if (strip_suffix(base, "_id")) {
    def.weighting = WeightingScheme::identity;
  }
  const auto& names = menu_learner_names();
  if (std::find(names.begin(), names.end(), base) == names.end())
    throw InputError("unknown estimator '" + name + "'; " + menu_help());
  def.learner_name = base;
  return def;
}

// Nuisance learners for a menu entry. The oracle uses the design's true
// conditional means for every nuisance; other entries fit the variance
// regressions with a random forest, whose bagged leaf means of U-hat^2 stay
// bounded away from zero.
inline NuisanceLearners menu_learners(const EstimatorDef& def, DgpKind dgp, std::uint64_t seed) {
  LearnerSpec spec;
  const std::string& b = def.learner_name;
  if (b == "oracle") {
    NuisanceLearners nl;
    nl.treatment = oracle_treatment_learner(dgp);
    nl.covariate = oracle_covariate_learner();
    nl.variance = LearnerSpec::oracle([dgp](const Matrix& w) { return true_variance_targets(dgp, w); });
    return nl;
  }
  if (b == "lgb") spec = LearnerSpec::boosting_default();
  else if (b == "rf") spec = LearnerSpec::forest_default();
  else if (b == "discretized") spec = LearnerSpec::cells();
  else if (b == "lin") spec = LearnerSpec::ols();
  else if (b == "quad") spec = LearnerSpec::poly(2, false);
  else if (b == "quad_interact") spec = LearnerSpec::poly(2, true);
  else if (b == "cubic_interact") spec = LearnerSpec::poly(3, true);
  else throw InputError("unknown learner '" + b + "'; " + menu_help());
  spec.seed = seed;
  NuisanceLearners nl = NuisanceLearners::uniform(spec);
  nl.variance = LearnerSpec::forest_default();
  nl.variance.seed = derive_seed(seed, 3);
  return nl;
}

struct ExperimentConfig {
  DgpKind dgp = DgpKind::nocov;
  std::vector<Index> n;
  std::size_t reps = 1;
  std::vector<std::string> estimators;
  std::size_t k = 2;
  WeightingScheme weighting = WeightingScheme::identity;
  CovariateMode covariate_mode = CovariateMode::partial_linear;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  double winsor_q = 0.01;

  std::vector<EstimatorDef> menu() const {
    std::vector<EstimatorDef> out;
    for (const auto& e : estimators) out.push_back(parse_estimator(e, weighting, covariate_mode));
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dgp"] = to_string(dgp);
    j["n"] = n;
    j["reps"] = reps;
    j["estimators"] = estimators;
    j["K"] = k;
    j["weighting"] = to_string(weighting);
    j["covariate_mode"] = to_string(covariate_mode);
    j["alpha"] = alpha;
    j["seed"] = seed;
    j["winsor_q"] = winsor_q;
    return j;
  }
};

// Parses and validates an experiment config, reporting every problem at once.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  if (!j.is_object()) throw InputError("experiment config must be a JSON object");
  static const std::vector<std::string> known{"dgp",   "n",    "reps",     "estimators", "K",
                                              "weighting", "alpha", "seed", "winsor_q", "covariate_mode"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end()) errors.push_back("unknown field '" + key + "'");
  }
  auto guard = [&](const char* field, auto&& body) {
    if (!j.contains(field)) return;
    try {
      body(j.at(field));
    } catch (const InputError& e) {
      errors.push_back(std::string(field) + ": " + e.what());
    } catch (const nlohmann::json::exception&) {
      errors.push_back(std::string(field) + ": wrong type");
    }
  };
  if (!j.contains("dgp")) errors.push_back("missing field 'dgp'");
  if (!j.contains("n")) errors.push_back("missing field 'n'");
  if (!j.contains("estimators")) errors.push_back("missing field 'estimators'");
  guard("dgp", [&](const nlohmann::json& v) { cfg.dgp = dgp_from_string(v.get<std::string>()); });
  guard("n", [&](const nlohmann::json& v) {
    const auto ns = v.is_array() ? v.get<std::vector<long long>>() : std::vector<long long>{v.get<long long>()};
    if (ns.empty()) throw InputError("needs at least one sample size");
    for (const long long x : ns) {
      if (x < 8) throw InputError("sample sizes must be >= 8");
      cfg.n.push_back(static_cast<Index>(x));
    }
  });
  guard("reps", [&](const nlohmann::json& v) {
    const long long r = v.get<long long>();
    if (r < 1) throw InputError("must be >= 1");
    cfg.reps = static_cast<std::size_t>(r);
  });
  guard("K", [&](const nlohmann::json& v) {
    const long long k = v.get<long long>();
    if (k < 2) throw InputError("must be >= 2");
    cfg.k = static_cast<std::size_t>(k);
  });
  guard("weighting", [&](const nlohmann::json& v) { cfg.weighting = weighting_from_string(v.get<std::string>()); });
  guard("covariate_mode",
        [&](const nlohmann::json& v) { cfg.covariate_mode = covariate_mode_from_string(v.get<std::string>()); });
  guard("alpha", [&](const nlohmann::json& v) {
    cfg.alpha = v.get<double>();
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw InputError("must be in (0, 1)");
  });
  guard("seed", [&](const nlohmann::json& v) { cfg.seed = v.get<std::uint64_t>(); });
  guard("winsor_q", [&](const nlohmann::json& v) {
    cfg.winsor_q = v.get<double>();
    if (!(cfg.winsor_q > 0.0 && cfg.winsor_q < 0.5)) throw InputError("must be in (0, 0.5)");
  });
  guard("estimators", [&](const nlohmann::json& v) {
    cfg.estimators = v.get<std::vector<std::string>>();
    if (cfg.estimators.empty()) throw InputError("menu must not be empty");
  });
  for (const auto& e : cfg.estimators) {
    try {
      parse_estimator(e, cfg.weighting, cfg.covariate_mode);
    } catch (const InputError& err) {
      errors.push_back(std::string("estimators: ") + err.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw InputError(msg);
  }
  return cfg;
}

// One estimator on one simulated sample.
struct ReplicationRecord {
  std::string estimator;
  Index n = 0;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double tau_hat = kNaN;
  double se = kNaN;
  double wald_lo = kNaN;
  double wald_hi = kNaN;
  bool wald_covers = false;
  bool has_ar = false;
  std::string ar_shape;
  bool ar_covers = false;
  double oos_r2 = kNaN;
  double first_stage_f = kNaN;
};

struct CellSummary {
  std::string estimator;
  Index n = 0;
  std::size_t ok = 0;
  std::size_t failed = 0;
  double median_estimate = kNaN;
  double winsorized_sd = kNaN;
  double median_se = kNaN;
  double wald_coverage = kNaN;
  double ar_coverage = kNaN;         // NA unless split-sample identity weighting
  double ar_finite_fraction = kNaN;  // share of AR sets of finite_interval shape
  double median_oos_r2 = kNaN;
  double median_f = kNaN;
  double f_above_10 = kNaN;
  double median_abs_error = kNaN;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<CellSummary> cells;
  std::vector<ReplicationRecord> records;  // ordered by (n, rep, estimator)
};

inline std::uint64_t replication_seed(std::uint64_t master, Index n, std::size_t rep) {
  return derive_seed(derive_seed(master, static_cast<std::uint64_t>(n)), rep);
}

// Runs one menu entry on a simulated sample; failures are recorded, not thrown.
inline ReplicationRecord run_estimator(const EstimatorDef& def, const SimDataset& sim, const ExperimentConfig& cfg,
                                       const FoldAssignment& folds, std::uint64_t learner_seed) {
  ReplicationRecord rec;
  rec.estimator = def.name;
  rec.n = sim.data.n();
  rec.has_ar = def.has_ar();
  try {
    EstimateResult est;
    std::optional<InstrumentMatrix> inst;
    if (def.family == EstimatorFamily::tsls) {
      est = tsls(sim.data, def.transform);
    } else {
      InstrumentOptions opts;
      opts.weighting = def.weighting;
      opts.covariate_mode = def.covariate_mode;
      opts.full_sample = def.full_sample;
      inst = generate_instrument(sim.data, folds, menu_learners(def, cfg.dgp, learner_seed), opts);
      est = mlss_estimate(*inst, design_matrices(sim.data), sim.data.y);
    }
    rec.tau_hat = est.theta(1);
    rec.se = std::sqrt(std::max(0.0, est.vcov(1, 1)));
    const Interval ci = wald_ci(est, 1, cfg.alpha);
    rec.wald_lo = ci.lo;
    rec.wald_hi = ci.hi;
    rec.wald_covers = ci.contains(sim.tau);
    if (!est.oos_r2.empty()) rec.oos_r2 = est.oos_r2.front();
    if (!est.first_stage_f.empty()) rec.first_stage_f = est.first_stage_f.front().value;
    if (rec.has_ar) {
      const CombinedARSet ar = ar_set_combined(ar_fold_inputs(*inst, sim.data), cfg.alpha, folds.k());
      rec.ar_shape = to_string(ar.combined.shape);
      rec.ar_covers = ar.combined.contains(sim.tau);
    }
    rec.ok = std::isfinite(rec.tau_hat) && std::isfinite(rec.se);
    if (!rec.ok) rec.error = "non-finite estimate";
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

inline double fraction(const std::vector<bool>& flags) {
  if (flags.empty()) return kNaN;
  return static_cast<double>(std::count(flags.begin(), flags.end(), true)) / static_cast<double>(flags.size());
}

inline CellSummary summarize(const std::string& estimator, Index n, const std::vector<const ReplicationRecord*>& recs,
                             double truth, double winsor_q) {
  CellSummary c;
  c.estimator = estimator;
  c.n = n;
  std::vector<double> est, se, r2, f, abs_err;
  std::vector<bool> wald, ar, ar_finite, f10;
  bool any_ar = false;
  for (const auto* r : recs) {
    if (!r->ok) {
      ++c.failed;
      continue;
    }
    ++c.ok;
    est.push_back(r->tau_hat);
    se.push_back(r->se);
    abs_err.push_back(std::abs(r->tau_hat - truth));
    wald.push_back(r->wald_covers);
    if (std::isfinite(r->oos_r2)) r2.push_back(r->oos_r2);
    if (std::isfinite(r->first_stage_f)) {
      f.push_back(r->first_stage_f);
      f10.push_back(r->first_stage_f > 10.0);
    }
    if (r->has_ar) {
      any_ar = true;
      ar.push_back(r->ar_covers);
      ar_finite.push_back(r->ar_shape == "finite_interval");
    }
  }
  if (c.ok == 0) return c;
  c.median_estimate = stats::median(est);
  c.winsorized_sd = est.size() >= 2 ? winsorized_sd(est, winsor_q) : 0.0;
  c.median_se = stats::median(se);
  c.wald_coverage = fraction(wald);
  c.median_abs_error = stats::median(abs_err);
  if (!r2.empty()) c.median_oos_r2 = stats::median(r2);
  if (!f.empty()) {
    c.median_f = stats::median(f);
    c.f_above_10 = fraction(f10);
  }
  if (any_ar) {
    c.ar_coverage = fraction(ar);
    c.ar_finite_fraction = fraction(ar_finite);
  }
  return c;
}

// Every menu estimator runs on the same simulated sample and fold split in
// each replication. Replication seeds depend only on (master seed, n, rep).
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, unsigned workers = worker_count()) {
  const std::vector<EstimatorDef> menu = cfg.menu();
  if (menu.empty()) throw InputError("run_experiment: estimator menu is empty");
  if (cfg.reps < 1) throw InputError("run_experiment: reps must be >= 1");
  ExperimentReport report;
  report.config = cfg;
  const std::size_t m = menu.size();
  for (const Index n : cfg.n) {
    std::vector<ReplicationRecord> block(cfg.reps * m);
    parallel_for(
        cfg.reps,
        [&](std::size_t rep) {
          const std::uint64_t seed = replication_seed(cfg.seed, n, rep);
          const SimDataset sim = simulate(cfg.dgp, n, seed);
          const FoldAssignment folds = make_folds(n, cfg.k, derive_seed(seed, 1));
          for (std::size_t e = 0; e < m; ++e) {
            ReplicationRecord rec = run_estimator(menu[e], sim, cfg, folds, derive_seed(seed, 2));
            rec.rep = rep;
            rec.seed = seed;
            block[rep * m + e] = std::move(rec);
          }
        },
        workers);
    for (std::size_t e = 0; e < m; ++e) {
      std::vector<const ReplicationRecord*> recs;
      for (std::size_t rep = 0; rep < cfg.reps; ++rep) recs.push_back(&block[rep * m + e]);
      report.cells.push_back(summarize(menu[e].name, n, recs, 1.0, cfg.winsor_q));
    }
    for (auto& r : block) report.records.push_back(std::move(r));
  }
  return report;
}

}  // namespace mlss
