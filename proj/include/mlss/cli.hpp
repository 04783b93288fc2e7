#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlss/common.hpp"
#include "mlss/data.hpp"
#include "mlss/estimator.hpp"
#include "mlss/instruments.hpp"
#include "mlss/montecarlo.hpp"
#include "mlss/report.hpp"
#include "mlss/weak_iv.hpp"

namespace mlss {

enum ExitCode : int { kExitOk = 0, kExitInput = 1, kExitDegenerate = 2 };

struct TauGrid {
  double lo = 0.0;
  double hi = 0.0;
  double step = 0.0;

  std::vector<double> points() const {
    std::vector<double> out;
    const auto count = static_cast<long long>(std::floor((hi - lo) / step + 1e-9));
    for (long long i = 0; i <= count; ++i) out.push_back(lo + static_cast<double>(i) * step);
    return out;
  }
};

inline TauGrid parse_tau_grid(const std::string& s) {
  TauGrid g;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (!(in >> g.lo >> c1 >> g.hi >> c2 >> g.step) || c1 != ':' || c2 != ':' || !(in >> std::ws).eof())
    throw InputError("--tau-grid must look like lo:hi:step, got '" + s + "'");
  if (!(g.step > 0.0) || !(g.hi >= g.lo) || !std::isfinite(g.lo) || !std::isfinite(g.hi))
    throw InputError("--tau-grid needs lo <= hi and step > 0");
  if ((g.hi - g.lo) / g.step > 1e7) throw InputError("--tau-grid has more than 10^7 points");
  return g;
}

enum class OutputFormat { json, csv };

struct RunConfig {
  std::string command;
  std::string data;
  std::string config;
  std::size_t k = 2;
  std::string learner_arg = "gradient_boosting";
  LearnerSpec learner = LearnerSpec::boosting_default();
  std::string variance_learner_arg;  // empty: same as learner
  std::optional<LearnerSpec> variance_learner;
  WeightingScheme weighting = WeightingScheme::identity;
  CovariateMode covariate_mode = CovariateMode::partial_linear;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::string out;      // empty: standard output
  std::string out_dir = ".";
  std::optional<TauGrid> tau_grid;
  OutputFormat format = OutputFormat::json;
  bool strict = true;  // reject unknown CSV columns
  bool hc1 = false;

  // Resolves learner arguments: a kind name, inline JSON, or @path.
  static LearnerSpec parse_learner(const std::string& arg) {
    std::string text = arg;
    if (!text.empty() && text.front() == '@') {
      std::ifstream in(text.substr(1));
      if (!in) throw InputError("cannot open learner file '" + text.substr(1) + "'");
      std::ostringstream ss;
      ss << in.rdbuf();
      text = ss.str();
    }
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      Json j;
      try {
        j = Json::parse(text);
      } catch (const Json::parse_error& e) {
        throw InputError(std::string("learner JSON does not parse: ") + e.what());
      }
      return learner_from_json(j);
    }
    return learner_from_json(Json(text));
  }

  void resolve() {
    learner = parse_learner(learner_arg);
    if (!variance_learner_arg.empty()) variance_learner = parse_learner(variance_learner_arg);
    if (k < 2) throw InputError("--folds must be >= 2");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("--alpha must be in (0, 1)");
  }

  // Learners with unset (zero) seeds derived from the run seed.
  NuisanceLearners learners() const {
    LearnerSpec spec = learner;
    if (spec.seed == 0) spec.seed = derive_seed(seed, 2);
    NuisanceLearners nl = NuisanceLearners::uniform(spec);
    if (variance_learner) {
      nl.variance = *variance_learner;
      if (nl.variance.seed == 0) nl.variance.seed = derive_seed(seed, 3);
    }
    return nl;
  }

  Json to_json() const {
    Json j;
    j["command"] = command;
    if (!data.empty()) j["data"] = data;
    if (!config.empty()) j["config"] = config;
    j["folds"] = k;
    const NuisanceLearners nl = learners();
    j["learner"] = learner_to_json(nl.treatment);
    if (variance_learner) j["variance_learner"] = learner_to_json(nl.variance);
    j["weighting"] = to_string(weighting);
    j["covariate_mode"] = to_string(covariate_mode);
    j["alpha"] = alpha;
    j["seed"] = seed;
    j["hc1"] = hc1;
    if (tau_grid) j["tau_grid"] = {tau_grid->lo, tau_grid->hi, tau_grid->step};
    return j;
  }
};

namespace detail {

inline void emit(const RunConfig& cfg, const std::string& text) {
  if (cfg.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(cfg.out);
  if (!out) throw InputError("cannot write output file '" + cfg.out + "'");
  out << text;
}

inline std::string coefficient_name(const Dataset& ds, Index i) {
  if (i == 0) return "intercept";
  if (i <= ds.p_d()) return ds.d_names[static_cast<std::size_t>(i - 1)];
  return ds.x_names[static_cast<std::size_t>(i - 1 - ds.p_d())];
}

inline Json coefficients_json(const Dataset& ds, const EstimateResult& est, double alpha) {
  Json out = Json::array();
  const Vector se = est.standard_errors();
  for (Index i = 0; i < est.theta.size(); ++i) {
    const Interval ci = wald_ci(est, i, alpha);
    out.push_back({{"name", coefficient_name(ds, i)},
                   {"estimate", number(est.theta(i))},
                   {"se", number(se(i))},
                   {"wald_ci", to_json(ci)}});
  }
  return out;
}

inline std::string coefficients_csv(const Dataset& ds, const EstimateResult& est, double alpha) {
  std::ostringstream os;
  os << "name,estimate,se,ci_lo,ci_hi\n";
  const Vector se = est.standard_errors();
  for (Index i = 0; i < est.theta.size(); ++i) {
    const Interval ci = wald_ci(est, i, alpha);
    os << coefficient_name(ds, i) << ',' << format_double(est.theta(i)) << ',' << format_double(se(i)) << ','
       << format_double(ci.lo) << ',' << format_double(ci.hi) << '\n';
  }
  return os.str();
}

inline FoldAssignment cli_folds(const RunConfig& cfg, const Dataset& ds) {
  if (static_cast<Index>(cfg.k) > ds.n()) throw InputError("--folds exceeds the number of rows");
  return make_folds(ds.n(), cfg.k, derive_seed(cfg.seed, 1));
}

inline NuisanceLearners seeded_learners(const RunConfig& cfg) { return cfg.learners(); }

}  // namespace detail

// Pooled MLSS estimate with Wald intervals and first-stage diagnostics.
inline int cmd_estimate(const RunConfig& cfg) {
  const Dataset ds = load_csv(cfg.data, cfg.strict);
  const FoldAssignment folds = detail::cli_folds(cfg, ds);
  InstrumentOptions opts;
  opts.weighting = cfg.weighting;
  opts.covariate_mode = cfg.covariate_mode;
  const InstrumentMatrix inst = generate_instrument(ds, folds, detail::seeded_learners(cfg), opts);

  Json report;
  report["config"] = cfg.to_json();
  report["seed"] = cfg.seed;
  report["n"] = ds.n();
  report["folds"] = fold_diagnostics_json(inst);
  report["pooled_oos_r2"] = Json::array();
  for (const double r : inst.pooled_oos_r2) report["pooled_oos_r2"].push_back(number(r));

  EstimateResult est;
  try {
    EstimateOptions eo;
    eo.hc1 = cfg.hc1;
    est = mlss_estimate(inst, design_matrices(ds), ds.y, eo);
  } catch (const WeakIdentificationError& e) {
    report["status"] = "weak_identification";
    report["condition_number"] = number(e.condition());
    report["error"] = e.what();
    report["guidance"] =
        "the estimated instrument barely moves the treatment; point estimates and Wald intervals are unreliable. "
        "Run the 'ar' command for Anderson-Rubin confidence sets, which remain valid under weak identification.";
    report["warnings"] = inst.warnings;
    detail::emit(cfg, report.dump(2) + "\n");
    std::cerr << "error: " << e.what() << "\n";
    return kExitDegenerate;
  }

  if (cfg.format == OutputFormat::csv) {
    detail::emit(cfg, detail::coefficients_csv(ds, est, cfg.alpha));
    return kExitOk;
  }
  report["status"] = "ok";
  report["coefficients"] = detail::coefficients_json(ds, est, cfg.alpha);
  report["tau"] = Json::array();
  for (Index k = 0; k < ds.p_d(); ++k)
    report["tau"].push_back(detail::coefficients_json(ds, est, cfg.alpha)[static_cast<std::size_t>(1 + k)]);
  report["first_stage_F"] = Json::array();
  for (const auto& f : est.first_stage_f) report["first_stage_F"].push_back(to_json(f));
  report["condition_number"] = number(est.condition);
  report["warnings"] = est.warnings;
  detail::emit(cfg, report.dump(2) + "\n");
  return kExitOk;
}

// Per-fold Anderson-Rubin sets at alpha / K and their intersection.
inline int cmd_ar(const RunConfig& cfg) {
  if (cfg.weighting != WeightingScheme::identity)
    throw InputError("the ar command uses identity weighting; drop --weighting efficient");
  const Dataset ds = load_csv(cfg.data, cfg.strict);
  if (ds.p_d() > 1 && !cfg.tau_grid)
    throw InputError("with more than one treatment, the ar command needs --tau-grid (closed-form sets are scalar)");
  const FoldAssignment folds = detail::cli_folds(cfg, ds);
  InstrumentOptions opts;
  opts.covariate_mode = cfg.covariate_mode;
  const InstrumentMatrix inst = generate_instrument(ds, folds, detail::seeded_learners(cfg), opts);
  const std::vector<ARFoldInput> inputs = ar_fold_inputs(inst, ds);
  const double level = cfg.alpha / static_cast<double>(folds.k());

  Json report;
  report["config"] = cfg.to_json();
  report["seed"] = cfg.seed;
  report["n"] = ds.n();
  report["alpha"] = cfg.alpha;
  report["fold_level"] = level;
  report["folds"] = fold_diagnostics_json(inst);
  Warnings warnings = inst.warnings;

  try {
    const EstimateResult est = mlss_estimate(inst, design_matrices(ds), ds.y);
    report["pooled"] = detail::coefficients_json(ds, est, cfg.alpha);
  } catch (const DegenerateError& e) {
    report["pooled"] = nullptr;
    warnings.push_back(std::string("pooled estimate unavailable: ") + e.what());
  }

  if (ds.p_d() == 1) {
    const CombinedARSet ar = ar_set_combined(inputs, cfg.alpha, folds.k());
    report["per_fold"] = Json::array();
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      Json f = to_json(ar.per_fold[j]);
      const ARQuadratic q = ar_quadratic(inputs[j]);
      f["fold_estimate"] = q.b != 0.0 ? number(q.a / q.b) : Json(nullptr);
      report["per_fold"].push_back(f);
    }
    report["combined"] = to_json(ar.combined);
    report["finite"] = ar.combined.finite();
    append(warnings, ar.combined.warnings);
    if (ar.combined.shape == ARShape::whole_line || ar.combined.shape == ARShape::two_rays)
      warnings.push_back("unbounded AR set: the instrument is weak in at least one fold");
  }
  if (cfg.tau_grid) {
    const std::vector<double> pts = cfg.tau_grid->points();
    if (ds.p_d() != 1)
      warnings.push_back("grid points apply the same tau to every treatment");
    Matrix taus(static_cast<Index>(pts.size()), ds.p_d());
    for (Index r = 0; r < taus.rows(); ++r) taus.row(r).setConstant(pts[static_cast<std::size_t>(r)]);
    std::vector<bool> combined(pts.size(), true);
    Json per_fold = Json::array();
    for (const auto& in : inputs) {
      const std::vector<bool> acc = ar_grid(in, taus, level);
      for (std::size_t i = 0; i < acc.size(); ++i) combined[i] = combined[i] && acc[i];
      per_fold.push_back(acc);
    }
    report["grid"] = {{"tau", pts}, {"per_fold_accept", per_fold}, {"combined_accept", combined}};
  }
  report["warnings"] = warnings;
  report["status"] = "ok";
  detail::emit(cfg, report.dump(2) + "\n");
  return kExitOk;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open experiment config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InputError("experiment config '" + path + "' does not parse: " + e.what());
  }
  return experiment_config_from_json(j);
}

// Writes report.json and replications.csv into out_dir.
inline int cmd_simulate(const RunConfig& cfg) {
  const ExperimentConfig exp = load_experiment_config(cfg.config);
  const ExperimentReport rep = run_experiment(exp);
  const std::filesystem::path dir(cfg.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + cfg.out_dir + "': " + ec.message());
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw InputError("cannot write report.json in '" + cfg.out_dir + "'");
    out << to_json(rep).dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "replications.csv");
    if (!out) throw InputError("cannot write replications.csv in '" + cfg.out_dir + "'");
    write_replications_csv(out, rep);
  }
  return kExitOk;
}

// Dispatches a command and maps failures to exit codes: input problems to 1,
// statistical degeneracy to 2.
inline int run_command(RunConfig cfg) {
  try {
    cfg.resolve();
    if (cfg.command == "estimate") return cmd_estimate(cfg);
    if (cfg.command == "ar") return cmd_ar(cfg);
    if (cfg.command == "simulate") return cmd_simulate(cfg);
    throw InputError("unknown command '" + cfg.command + "' (valid: estimate, ar, simulate)");
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DegenerateError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDegenerate;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace mlss
