#pragma once

#include <string>
#include <vector>

#include "mlss/common.hpp"
#include "mlss/learners.hpp"

namespace mlss {

enum class WeightingScheme { identity, efficient };
enum class CovariateMode { partial_linear, conditional_mean_only };

inline std::string to_string(WeightingScheme w) { return w == WeightingScheme::identity ? "identity" : "efficient"; }
inline std::string to_string(CovariateMode m) {
  return m == CovariateMode::partial_linear ? "partial_linear" : "conditional_mean_only";
}

inline WeightingScheme weighting_from_string(const std::string& s) {
  if (s == "identity") return WeightingScheme::identity;
  if (s == "efficient") return WeightingScheme::efficient;
  throw InputError("unknown weighting '" + s + "' (valid: identity, efficient)");
}

inline CovariateMode covariate_mode_from_string(const std::string& s) {
  if (s == "partial_linear") return CovariateMode::partial_linear;
  if (s == "conditional_mean_only") return CovariateMode::conditional_mean_only;
  throw InputError("unknown covariate mode '" + s + "' (valid: partial_linear, conditional_mean_only)");
}

// Learners for each nuisance family: E[D|W], E[X|W], and the variance
// regressions E[U^2|W], E[X U^2|W].
struct NuisanceLearners {
  LearnerSpec treatment;
  LearnerSpec covariate;
  LearnerSpec variance;

  static NuisanceLearners uniform(const LearnerSpec& spec) { return {spec, spec, spec}; }
};

struct InstrumentOptions {
  WeightingScheme weighting = WeightingScheme::identity;
  CovariateMode covariate_mode = CovariateMode::partial_linear;
  bool full_sample = false;  // train and evaluate on all rows (no splitting)
  double sigma2_floor = 1e-6;  // sigma^2-hat floor, relative to Var(U-hat) on the training rows
};

struct FoldDiagnostics {
  Index size = 0;
  std::vector<double> oos_r2;  // per treatment column
  Warnings warnings;
};

// Estimated technical instrument, one row per observation, in the column
// order of T = [1, D, X].
struct InstrumentMatrix {
  Matrix upsilon;
  IndexList excluded_block;        // columns of the estimated-treatment block
  std::vector<int> fold_of;        // evaluation fold of every row
  std::vector<IndexList> fold_rows;
  std::vector<FoldDiagnostics> folds;
  Matrix treatment_prediction;     // n x p_d cross-fitted prediction of D
  std::vector<double> pooled_oos_r2;
  WeightingScheme weighting = WeightingScheme::identity;
  CovariateMode covariate_mode = CovariateMode::partial_linear;
  bool full_sample = false;
  bool degenerate = false;         // some excluded column is constant
  Warnings warnings;

  Index n() const { return upsilon.rows(); }

  Matrix excluded() const {
    Matrix out(upsilon.rows(), static_cast<Index>(excluded_block.size()));
    for (Index c = 0; c < out.cols(); ++c) out.col(c) = upsilon.col(excluded_block[static_cast<std::size_t>(c)]);
    return out;
  }
};

}  // namespace mlss
