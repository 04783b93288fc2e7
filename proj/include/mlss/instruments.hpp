#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mlss/common.hpp"
#include "mlss/data.hpp"
#include "mlss/estimator.hpp"
#include "mlss/instrument_matrix.hpp"
#include "mlss/learners.hpp"
#include "mlss/linalg.hpp"

namespace mlss {

namespace detail {

inline std::string fold_tag(std::size_t j) { return "fold " + std::to_string(j + 1) + ": "; }

inline void note_learner(Warnings& into, const Predictor& p, const std::string& what, std::size_t fold) {
  for (const auto& w : p.warnings()) into.push_back(fold_tag(fold) + what + ": " + w);
}

inline void check_plan(const CrossFitPlan& plan) {
  for (std::size_t j = 0; j < plan.size(); ++j) {
    if (plan.train[j].size() < 2) throw DegenerateError(fold_tag(j) + "fewer than 2 training observations");
    if (plan.eval[j].size() < 1) throw DegenerateError(fold_tag(j) + "empty evaluation fold");
  }
}

inline CrossFitPlan plan_for(const FoldAssignment& folds, Index n, bool full_sample) {
  if (full_sample) return CrossFitPlan::full_sample(n);
  if (folds.n() != n) throw InputError("fold assignment does not cover the dataset");
  return CrossFitPlan::from_folds(folds);
}

inline void scatter_rows(Matrix& into, const IndexList& rows, const Matrix& block) {
  for (Index r = 0; r < block.rows(); ++r) into.row(rows[static_cast<std::size_t>(r)]) = block.row(r);
}

}  // namespace detail

// Per-fold output of the partially linear (Robinson) prediction.
struct PartialLinearFold {
  Matrix ell;            // p_x x p_d coefficient of D - g_D(W) on X - g_X(W)
  Matrix train_d_resid;  // D - g_D(W) on the training rows
  Matrix train_x_resid;  // X - g_X(W) on the training rows
};

struct TreatmentCrossFit {
  Matrix prediction;  // n x p_d
  std::vector<PartialLinearFold> partial_linear;  // empty for conditional-mean-only
  Warnings warnings;
};

// Cross-fitted prediction of D from (W, X): the partially linear projection
// g_D(W) + (X - g_X(W))' ell, or E[D|W] alone when p_x == 0 or in
// conditional-mean-only mode.
inline TreatmentCrossFit crossfit_treatment(const Dataset& ds, const CrossFitPlan& plan,
                                            const NuisanceLearners& learners, CovariateMode mode) {
  detail::check_plan(plan);
  TreatmentCrossFit out;
  out.prediction = Matrix::Zero(ds.n(), ds.p_d());
  const bool partial = ds.p_x() > 0 && mode == CovariateMode::partial_linear;
  for (std::size_t j = 0; j < plan.size(); ++j) {
    const IndexList& tr = plan.train[j];
    const IndexList& ev = plan.eval[j];
    const Matrix w_tr = take_rows(ds.w, tr);
    const Matrix w_ev = take_rows(ds.w, ev);
    const Matrix d_tr = take_rows(ds.d, tr);
    const Predictor g_d = fit(learners.treatment, w_tr, d_tr);
    detail::note_learner(out.warnings, g_d, "E[D|W]", j);
    Matrix pred = g_d.predict(w_ev);
    if (partial) {
      const Matrix x_tr = take_rows(ds.x, tr);
      const Predictor g_x = fit(learners.covariate, w_tr, x_tr);
      detail::note_learner(out.warnings, g_x, "E[X|W]", j);
      PartialLinearFold pl;
      pl.train_d_resid = d_tr - g_d.predict(w_tr);
      pl.train_x_resid = x_tr - g_x.predict(w_tr);
      const LeastSquaresFit ls = least_squares(pl.train_x_resid, pl.train_d_resid);
      if (ls.ridge) out.warnings.push_back(detail::fold_tag(j) + "singular residualized covariates: ridge fallback used");
      pl.ell = ls.coef;
      pred += (take_rows(ds.x, ev) - g_x.predict(w_ev)) * pl.ell;
      out.partial_linear.push_back(std::move(pl));
    }
    detail::scatter_rows(out.prediction, ev, pred);
  }
  return out;
}

// Cross-fitted best partially linear prediction of D given (X, W).
inline Matrix partial_linear_predict(const Dataset& ds, const FoldAssignment& folds, const NuisanceLearners& learners) {
  if (ds.p_x() < 1) throw InputError("partial_linear_predict requires at least one covariate");
  return crossfit_treatment(ds, detail::plan_for(folds, ds.n(), false), learners, CovariateMode::partial_linear)
      .prediction;
}

inline Matrix partial_linear_predict(const Dataset& ds, const FoldAssignment& folds, const LearnerSpec& spec) {
  return partial_linear_predict(ds, folds, NuisanceLearners::uniform(spec));
}

namespace detail {

// Fold bookkeeping and out-of-sample fit diagnostics shared by every
// weighting scheme.
inline void fill_diagnostics(InstrumentMatrix& inst, const Dataset& ds, const CrossFitPlan& plan,
                             const Matrix& treatment_pred) {
  inst.treatment_prediction = treatment_pred;
  inst.fold_of.assign(static_cast<std::size_t>(ds.n()), -1);
  inst.fold_rows = plan.eval;
  std::vector<double> ssr(static_cast<std::size_t>(ds.p_d()), 0.0), sst(static_cast<std::size_t>(ds.p_d()), 0.0);
  for (std::size_t j = 0; j < plan.size(); ++j) {
    FoldDiagnostics diag;
    diag.size = static_cast<Index>(plan.eval[j].size());
    for (Index i : plan.eval[j]) inst.fold_of[static_cast<std::size_t>(i)] = static_cast<int>(j);
    const Matrix d_ev = take_rows(ds.d, plan.eval[j]);
    const Matrix p_ev = take_rows(treatment_pred, plan.eval[j]);
    const Matrix d_tr = take_rows(ds.d, plan.train[j]);
    for (Index k = 0; k < ds.p_d(); ++k) {
      const double train_mean = d_tr.col(k).mean();
      const OosR2 r2 = oos_r2(p_ev.col(k), d_ev.col(k), train_mean);
      diag.oos_r2.push_back(r2.value);
      ssr[static_cast<std::size_t>(k)] += (d_ev.col(k) - p_ev.col(k)).squaredNorm();
      sst[static_cast<std::size_t>(k)] += (d_ev.col(k).array() - train_mean).square().sum();
    }
    inst.folds.push_back(std::move(diag));
  }
  for (std::size_t k = 0; k < ssr.size(); ++k)
    inst.pooled_oos_r2.push_back(sst[k] > 0.0 ? 1.0 - ssr[k] / sst[k] : 0.0);
  for (Index k = 0; k < ds.p_d(); ++k) {
    const Vector col = treatment_pred.col(k);
    if (col.maxCoeff() - col.minCoeff() <= 1e-12 * std::max(1.0, col.cwiseAbs().maxCoeff())) {
      inst.degenerate = true;
      inst.warnings.push_back("estimated treatment '" + ds.d_names.at(static_cast<std::size_t>(k)) +
                              "' is constant: instrument is degenerate");
    }
  }
}

inline InstrumentMatrix identity_instrument(const Dataset& ds, const CrossFitPlan& plan,
                                            const NuisanceLearners& learners, CovariateMode mode, bool full_sample) {
  TreatmentCrossFit tc = crossfit_treatment(ds, plan, learners, mode);
  InstrumentMatrix inst;
  inst.weighting = WeightingScheme::identity;
  inst.covariate_mode = mode;
  inst.full_sample = full_sample;
  inst.upsilon = hcat(hcat(ones_column(ds.n()), tc.prediction), ds.x);
  for (Index k = 0; k < ds.p_d(); ++k) inst.excluded_block.push_back(1 + k);
  inst.warnings = std::move(tc.warnings);
  fill_diagnostics(inst, ds, plan, tc.prediction);
  return inst;
}

}  // namespace detail

// Cross-fitted variance nuisances for efficient weighting.
struct EfficientNuisances {
  struct Fold {
    IndexList train;
    IndexList eval;
    Vector prelim_theta;
    Vector u_train;        // U-hat on the training rows
    Vector sigma2_train;   // floored sigma^2-hat on the training rows
    Matrix xu2_train;      // E[X U^2 | W]-hat on the training rows
    double floor = 0.0;
    Index floored = 0;
  };

  Vector sigma2_hat;  // n, evaluated off-fold, floored
  Matrix xu2_hat;     // n x p_x (zero columns when p_x == 0)
  std::vector<Fold> folds;
  Warnings warnings;

  Matrix prelim_theta() const {
    Matrix out(folds.empty() ? 0 : folds.front().prelim_theta.size(), static_cast<Index>(folds.size()));
    for (std::size_t j = 0; j < folds.size(); ++j) out.col(static_cast<Index>(j)) = folds[j].prelim_theta;
    return out;
  }
};

// Lower bound for sigma^2-hat: `relative` times the variance of U-hat on the
// training rows.
inline double variance_floor(const Vector& u_train, double relative = 1e-6) {
  const double m = u_train.mean();
  const double var = (u_train.array() - m).square().mean();
  return var > 0.0 ? relative * var : 1e-12;
}

namespace detail {

inline EfficientNuisances efficient_nuisances(const Dataset& ds, const CrossFitPlan& plan, std::uint64_t seed,
                                              const NuisanceLearners& learners, CovariateMode mode,
                                              bool full_sample, double floor_rel = 1e-6) {
  detail::check_plan(plan);
  if (!(floor_rel > 0.0 && floor_rel < 1.0)) throw InputError("sigma^2 floor must be in (0, 1)");
  EfficientNuisances nuis;
  nuis.sigma2_hat = Vector::Zero(ds.n());
  nuis.xu2_hat = Matrix::Zero(ds.n(), ds.p_x());
  for (std::size_t j = 0; j < plan.size(); ++j) {
    EfficientNuisances::Fold fold;
    fold.train = plan.train[j];
    fold.eval = plan.eval[j];
    const Dataset sub = ds.subset(fold.train);
    const DesignPair sub_pair = design_matrices(sub);

    // Preliminary identity-weighted estimate inside the training rows.
    CrossFitPlan inner;
    if (full_sample) {
      inner = CrossFitPlan::full_sample(sub.n());
    } else {
      if (sub.n() < 4) throw DegenerateError(fold_tag(j) + "too few training rows for the internal split (need 4)");
      inner = CrossFitPlan::from_folds(make_folds(sub.n(), 2, derive_seed(seed, 0x5eed0000ULL + j)));
    }
    const InstrumentMatrix prelim_inst = identity_instrument(sub, inner, learners, mode, full_sample);
    const EstimateResult prelim = plugin_estimate(prelim_inst.upsilon, sub_pair.t, sub.y);
    fold.prelim_theta = prelim.theta;
    fold.u_train = prelim.residuals;

    // Variance regressions on W: targets [U^2, X * U^2].
    const Vector u2 = fold.u_train.array().square();
    Matrix targets(sub.n(), 1 + ds.p_x());
    targets.col(0) = u2;
    for (Index c = 0; c < ds.p_x(); ++c) targets.col(1 + c) = sub.x.col(c).cwiseProduct(u2);
    const Predictor var_model = fit(learners.variance, sub.w, targets);
    note_learner(nuis.warnings, var_model, "variance nuisances", j);
    const Matrix pred_tr = var_model.predict(sub.w);
    const Matrix pred_ev = var_model.predict(take_rows(ds.w, fold.eval));

    fold.floor = variance_floor(fold.u_train, floor_rel);
    fold.sigma2_train = pred_tr.col(0).cwiseMax(fold.floor);
    fold.xu2_train = pred_tr.rightCols(ds.p_x());
    for (std::size_t r = 0; r < fold.eval.size(); ++r) {
      const Index i = fold.eval[r];
      const double s2 = pred_ev(static_cast<Index>(r), 0);
      if (!(s2 >= fold.floor)) ++fold.floored;
      nuis.sigma2_hat(i) = std::max(s2, fold.floor);
      if (ds.p_x() > 0) nuis.xu2_hat.row(i) = pred_ev.block(static_cast<Index>(r), 1, 1, ds.p_x());
    }
    if (fold.floored > 0)
      nuis.warnings.push_back(fold_tag(j) + std::to_string(fold.floored) +
                              " sigma^2 predictions floored at " + std::to_string(fold.floor));
    nuis.folds.push_back(std::move(fold));
  }
  return nuis;
}

}  // namespace detail

inline EfficientNuisances efficient_nuisances(const Dataset& ds, const FoldAssignment& folds,
                                              const NuisanceLearners& learners,
                                              CovariateMode mode = CovariateMode::partial_linear,
                                              bool full_sample = false, double floor_rel = 1e-6) {
  return detail::efficient_nuisances(ds, detail::plan_for(folds, ds.n(), full_sample), folds.seed, learners, mode,
                                     full_sample, floor_rel);
}

inline EfficientNuisances efficient_nuisances(const Dataset& ds, const FoldAssignment& folds, const LearnerSpec& spec) {
  return efficient_nuisances(ds, folds, NuisanceLearners::uniform(spec));
}

namespace detail {

// Efficient instrument rows from nuisances already fitted on plan's folds.
inline InstrumentMatrix efficient_instrument(const Dataset& ds, const CrossFitPlan& plan,
                                             const NuisanceLearners& learners, const EfficientNuisances& nuis,
                                             CovariateMode mode, bool full_sample) {
  if (nuis.folds.size() != plan.size()) throw InputError("efficient nuisances do not match the fold plan");
  const Index p_d = ds.p_d();
  const Index p_x = ds.p_x();
  const Index dim = 1 + p_d + p_x;
  const DesignPair pair = design_matrices(ds);

  InstrumentMatrix inst;
  inst.weighting = WeightingScheme::efficient;
  inst.covariate_mode = mode;
  inst.full_sample = full_sample;
  inst.upsilon = Matrix::Zero(ds.n(), dim);
  for (Index k = 0; k < p_d; ++k) inst.excluded_block.push_back(1 + k);
  append(inst.warnings, nuis.warnings);

  // Off-fold E[D|W] (and E[X|W]); these enter E[T|W] and the fit diagnostics.
  Matrix treatment_pred = Matrix::Zero(ds.n(), p_d);
  for (std::size_t j = 0; j < plan.size(); ++j) {
    const auto& fold = nuis.folds[j];
    const Matrix w_tr = take_rows(ds.w, fold.train);
    const Matrix w_ev = take_rows(ds.w, fold.eval);
    const Predictor g_d = fit(learners.treatment, w_tr, take_rows(ds.d, fold.train));
    note_learner(inst.warnings, g_d, "E[D|W]", j);
    const Matrix ed = g_d.predict(w_ev);
    scatter_rows(treatment_pred, fold.eval, ed);

    const auto m = static_cast<Index>(fold.eval.size());
    const Vector s2 = take_rows(nuis.sigma2_hat, fold.eval);
    Matrix rows(m, dim);
    rows.col(0) = s2.cwiseInverse();
    rows.middleCols(1, p_d) = ed.array().colwise() / s2.array();
    if (p_x > 0) {
      const Predictor g_x = fit(learners.covariate, w_tr, take_rows(ds.x, fold.train));
      note_learner(inst.warnings, g_x, "E[X|W]", j);
      rows.rightCols(p_x) = g_x.predict(w_ev).array().colwise() / s2.array();

      // X-tilde = X - E[X U^2|W] / sigma^2(W); moments over the training rows.
      const Matrix x_tr = take_rows(ds.x, fold.train);
      const Matrix xt_tr = x_tr - Matrix(fold.xu2_train.array().colwise() / fold.sigma2_train.array());
      const Matrix t_tr = take_rows(pair.t, fold.train);
      const double nt = static_cast<double>(fold.train.size());
      const Matrix m1 = t_tr.transpose() * xt_tr / nt;
      const Matrix weighted = xt_tr.array().colwise() * fold.u_train.array().square();
      const Matrix m2 = weighted.transpose() * xt_tr / nt;
      Matrix coef;
      Eigen::ColPivHouseholderQR<Matrix> qr(m2);
      if (qr.rank() < p_x) {
        const double lambda = std::max(1e-8 * m2.trace() / static_cast<double>(p_x), 1e-300);
        coef = m1 * (m2 + lambda * Matrix::Identity(p_x, p_x)).inverse();
        inst.warnings.push_back(fold_tag(j) + "singular E[U^2 Xt Xt']: ridge fallback used");
      } else {
        coef = qr.solve(m1.transpose()).transpose();  // m1 * m2^{-1}, m2 symmetric
      }
      const Matrix x_ev = take_rows(ds.x, fold.eval);
      const Matrix xt_ev = x_ev - Matrix(take_rows(nuis.xu2_hat, fold.eval).array().colwise() / s2.array());
      rows += xt_ev * coef.transpose();
    }
    scatter_rows(inst.upsilon, fold.eval, rows);
  }
  fill_diagnostics(inst, ds, plan, treatment_pred);
  return inst;
}

}  // namespace detail

// Efficient-weighting instrument E[T|W]/sigma^2(W) + E[T Xt'] E[U^2 Xt Xt']^{-1} Xt
// with Xt = X - E[X U^2|W]/sigma^2(W); reduces to [1, mu(W)]/sigma^2(W)
// without covariates.
inline InstrumentMatrix hetero_optimal_instrument(const Dataset& ds, const FoldAssignment& folds,
                                                  const NuisanceLearners& learners, const EfficientNuisances& nuis,
                                                  bool full_sample = false) {
  return detail::efficient_instrument(ds, detail::plan_for(folds, ds.n(), full_sample), learners, nuis,
                                      CovariateMode::partial_linear, full_sample);
}

inline InstrumentMatrix generate_instrument(const Dataset& ds, const FoldAssignment& folds,
                                            const NuisanceLearners& learners, const InstrumentOptions& opts = {}) {
  const CrossFitPlan plan = detail::plan_for(folds, ds.n(), opts.full_sample);
  if (opts.weighting == WeightingScheme::identity)
    return detail::identity_instrument(ds, plan, learners, opts.covariate_mode, opts.full_sample);
  const EfficientNuisances nuis =
      detail::efficient_nuisances(ds, plan, folds.seed, learners, opts.covariate_mode, opts.full_sample,
                                  opts.sigma2_floor);
  return detail::efficient_instrument(ds, plan, learners, nuis, opts.covariate_mode, opts.full_sample);
}

inline InstrumentMatrix generate_instrument(const Dataset& ds, const FoldAssignment& folds, const LearnerSpec& spec,
                                            const InstrumentOptions& opts = {}) {
  return generate_instrument(ds, folds, NuisanceLearners::uniform(spec), opts);
}

// Full-sample (no splitting) instrument; folds are not needed.
inline InstrumentMatrix generate_instrument_full_sample(const Dataset& ds, const NuisanceLearners& learners,
                                                        InstrumentOptions opts = {}) {
  opts.full_sample = true;
  return generate_instrument(ds, FoldAssignment{}, learners, opts);
}

}  // namespace mlss
