#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlss/common.hpp"
#include "mlss/estimator.hpp"
#include "mlss/instrument_matrix.hpp"
#include "mlss/learners.hpp"
#include "mlss/montecarlo.hpp"
#include "mlss/weak_iv.hpp"

namespace mlss {

using Json = nlohmann::json;

// Finite numbers as numbers, infinities as "inf"/"-inf", NaN as null.
inline Json number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// A learner is a kind name, or {"kind": ..., "params": {...}, "seed": n} with
// the kind's hyperparameters under "params".
inline LearnerSpec learner_from_json(const Json& j) {
  LearnerSpec spec;
  if (j.is_string()) {
    spec.kind = learner_kind_from_string(j.get<std::string>());
    if (spec.kind == LearnerKind::oracle) throw InputError("the oracle learner is only available in simulations");
    return spec;
  }
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string())
    throw InputError("learner must be a kind name or an object with a \"kind\" field");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "kind" && key != "params" && key != "seed")
      throw InputError("unknown learner field '" + key + "' (valid: kind, params, seed)");
  }
  spec.kind = learner_kind_from_string(j.at("kind").get<std::string>());
  if (spec.kind == LearnerKind::oracle) throw InputError("the oracle learner is only available in simulations");
  std::vector<std::string> allowed;
  switch (spec.kind) {
    case LearnerKind::polynomial: allowed = {"degree", "interactions"}; break;
    case LearnerKind::discretized: allowed = {"thresholds"}; break;
    case LearnerKind::random_forest: allowed = {"n_trees", "max_depth", "min_leaf", "max_features", "bootstrap"}; break;
    case LearnerKind::gradient_boosting: allowed = {"n_trees", "max_depth", "min_leaf", "learning_rate"}; break;
    default: break;
  }
  const Json params = j.value("params", Json::object());
  if (!params.is_object()) throw InputError("learner \"params\" must be an object");
  for (const auto& [key, value] : params.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw InputError("learner parameter '" + key + "' does not apply to " + to_string(spec.kind));
  }
  try {
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (params.contains("degree")) spec.polynomial.degree = params.at("degree").get<int>();
    if (params.contains("interactions")) spec.polynomial.interactions = params.at("interactions").get<bool>();
    if (params.contains("thresholds")) spec.discretized.thresholds = params.at("thresholds").get<std::vector<double>>();
    auto tree_field = [&](const char* key, auto& forest_slot, auto& boost_slot) {
      if (!params.contains(key)) return;
      using T = std::decay_t<decltype(forest_slot)>;
      const T v = params.at(key).get<T>();
      if (spec.kind == LearnerKind::random_forest) forest_slot = v;
      else boost_slot = v;
    };
    tree_field("n_trees", spec.forest.n_trees, spec.boosting.n_trees);
    tree_field("max_depth", spec.forest.max_depth, spec.boosting.max_depth);
    tree_field("min_leaf", spec.forest.min_leaf, spec.boosting.min_leaf);
    if (params.contains("max_features")) spec.forest.max_features = params.at("max_features").get<int>();
    if (params.contains("bootstrap")) spec.forest.bootstrap = params.at("bootstrap").get<bool>();
    if (params.contains("learning_rate")) spec.boosting.learning_rate = params.at("learning_rate").get<double>();
  } catch (const Json::exception& e) {
    throw InputError(std::string("learner parameter has the wrong type: ") + e.what());
  }
  spec.validate();
  return spec;
}

inline Json learner_to_json(const LearnerSpec& s) {
  Json params = Json::object();
  switch (s.kind) {
    case LearnerKind::polynomial:
      params["degree"] = s.polynomial.degree;
      params["interactions"] = s.polynomial.interactions;
      break;
    case LearnerKind::discretized: params["thresholds"] = s.discretized.thresholds; break;
    case LearnerKind::random_forest:
      params["n_trees"] = s.forest.n_trees;
      params["max_depth"] = s.forest.max_depth;
      params["min_leaf"] = s.forest.min_leaf;
      params["max_features"] = s.forest.max_features;
      params["bootstrap"] = s.forest.bootstrap;
      break;
    case LearnerKind::gradient_boosting:
      params["n_trees"] = s.boosting.n_trees;
      params["max_depth"] = s.boosting.max_depth;
      params["min_leaf"] = s.boosting.min_leaf;
      params["learning_rate"] = s.boosting.learning_rate;
      break;
    default: break;
  }
  return Json{{"kind", to_string(s.kind)}, {"params", params}, {"seed", s.seed}};
}

inline Json to_json(const Interval& i) { return Json::array({number(i.lo), number(i.hi)}); }

inline Json to_json(const ARSet& s) {
  Json j;
  j["shape"] = to_string(s.shape);
  j["empty"] = s.empty();
  j["level"] = s.level;
  j["critical_value"] = s.critical;
  j["intervals"] = Json::array();
  for (const auto& i : s.intervals) j["intervals"].push_back(to_json(i));
  j["warnings"] = s.warnings;
  return j;
}

inline Json to_json(const FStat& f) {
  return Json{{"value", number(f.value)},
              {"dof_num", f.dof_num},
              {"dof_den", f.dof_den},
              {"robust", f.robust},
              {"perfect_fit", f.perfect_fit}};
}

inline Json fold_diagnostics_json(const InstrumentMatrix& inst) {
  Json out = Json::array();
  for (const auto& f : inst.folds) {
    Json j;
    j["size"] = f.size;
    j["oos_r2"] = Json::array();
    for (const double r : f.oos_r2) j["oos_r2"].push_back(number(r));
    j["warnings"] = f.warnings;
    out.push_back(j);
  }
  return out;
}

inline Json to_json(const CellSummary& c) {
  return Json{{"estimator", c.estimator},
              {"n", c.n},
              {"ok", c.ok},
              {"failed", c.failed},
              {"median_estimate", number(c.median_estimate)},
              {"winsorized_sd", number(c.winsorized_sd)},
              {"median_se", number(c.median_se)},
              {"wald_coverage", number(c.wald_coverage)},
              {"ar_coverage", number(c.ar_coverage)},
              {"ar_finite_fraction", number(c.ar_finite_fraction)},
              {"median_oos_r2", number(c.median_oos_r2)},
              {"median_first_stage_f", number(c.median_f)},
              {"f_above_10", number(c.f_above_10)},
              {"median_abs_error", number(c.median_abs_error)}};
}

inline Json to_json(const ExperimentReport& r) {
  Json j;
  j["config"] = r.config.to_json();
  j["seed"] = r.config.seed;
  j["truth"] = 1.0;
  j["cells"] = Json::array();
  for (const auto& c : r.cells) j["cells"].push_back(to_json(c));
  return j;
}

inline void write_replications_csv(std::ostream& out, const ExperimentReport& r) {
  out << "estimator,n,rep,seed,ok,tau_hat,se,wald_lo,wald_hi,wald_covers,ar_shape,ar_covers,oos_r2,first_stage_f,"
         "error\n";
  for (const auto& rec : r.records) {
    std::string err = rec.error;
    std::replace(err.begin(), err.end(), '\n', ' ');
    std::replace(err.begin(), err.end(), '"', '\'');
    out << rec.estimator << ',' << rec.n << ',' << rec.rep << ',' << rec.seed << ',' << (rec.ok ? 1 : 0) << ','
        << format_double(rec.tau_hat) << ',' << format_double(rec.se) << ',' << format_double(rec.wald_lo) << ','
        << format_double(rec.wald_hi) << ',' << (rec.ok ? (rec.wald_covers ? "1" : "0") : "NA") << ','
        << (rec.has_ar && rec.ok ? rec.ar_shape : "NA") << ','
        << (rec.has_ar && rec.ok ? (rec.ar_covers ? "1" : "0") : "NA") << ',' << format_double(rec.oos_r2) << ','
        << format_double(rec.first_stage_f) << ",\"" << err << "\"\n";
  }
}

}  // namespace mlss
