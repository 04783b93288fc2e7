#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mlss/common.hpp"
#include "mlss/data.hpp"
#include "mlss/features.hpp"
#include "mlss/instrument_matrix.hpp"
#include "mlss/linalg.hpp"
#include "mlss/stats.hpp"

namespace mlss {

inline constexpr double kMaxCondition = 1e12;
inline constexpr double kFCap = 1e12;

struct FStat {
  double value = 0.0;
  int dof_num = 1;
  Index dof_den = 0;
  bool robust = true;
  bool perfect_fit = false;  // zero residual variation; value capped
};

struct EstimateResult {
  Vector theta;       // (alpha, tau', beta')' in T's column order
  Matrix vcov;        // covariance of theta-hat, already divided by n
  Matrix g_hat;       // (1/n) sum Upsilon_i T_i'
  Matrix omega_hat;   // (1/n) sum U_i^2 Upsilon_i Upsilon_i'
  Vector residuals;
  double condition = 1.0;
  bool hc1 = false;
  std::vector<FStat> first_stage_f;
  std::vector<double> oos_r2;
  Warnings warnings;

  Index n() const { return residuals.size(); }
  Vector standard_errors() const { return vcov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

struct EstimateOptions {
  bool hc1 = false;  // rescale Omega-hat by n / (n - dim theta)
};

// Just-identified plug-in IV: theta = (sum Upsilon T')^{-1} sum Upsilon Y with
// sandwich covariance G^{-1} Omega G^{-T} / n.
inline EstimateResult plugin_estimate(const Matrix& upsilon, const Matrix& t, const Vector& y,
                                      EstimateOptions opts = {}) {
  const Index n = t.rows();
  if (upsilon.rows() != n || y.size() != n) throw InputError("plugin_estimate: row count mismatch");
  if (upsilon.cols() != t.cols()) throw InputError("plugin_estimate: instrument and regressor dimensions differ");
  if (!upsilon.allFinite()) throw DegenerateError("instrument matrix contains non-finite values");
  const double dn = static_cast<double>(n);

  EstimateResult res;
  res.g_hat = upsilon.transpose() * t / dn;
  res.condition = condition_number(res.g_hat);
  if (!(res.condition <= kMaxCondition)) throw WeakIdentificationError(res.condition);

  const Eigen::ColPivHouseholderQR<Matrix> qr(res.g_hat);
  res.theta = qr.solve(Vector(upsilon.transpose() * y / dn));
  res.residuals = y - t * res.theta;
  const Matrix scaled = upsilon.array().colwise() * res.residuals.array();
  res.omega_hat = scaled.transpose() * scaled / dn;
  res.hc1 = opts.hc1;
  if (opts.hc1) {
    if (n <= t.cols()) throw DegenerateError("HC1 correction needs n > dim theta");
    res.omega_hat *= dn / (dn - static_cast<double>(t.cols()));
  }
  const Matrix g_inv = qr.solve(Matrix::Identity(t.cols(), t.cols()));
  Matrix v = g_inv * res.omega_hat * g_inv.transpose() / dn;
  res.vcov = 0.5 * (v + v.transpose());
  return res;
}

// Robust first-stage F for the constructed instrument: for each treatment,
// regress d on [1, upsilon_d, X] and square the HC1 t-statistic on
// upsilon_d (one numerator degree of freedom).
inline std::vector<FStat> first_stage_F(const InstrumentMatrix& inst, const DesignPair& pair) {
  const Index n = pair.t.rows();
  const auto p_d = static_cast<Index>(inst.excluded_block.size());
  const Index p_x = pair.t.cols() - 1 - p_d;
  if (inst.upsilon.rows() != n) throw InputError("first_stage_F: row count mismatch");
  std::vector<FStat> out;
  for (Index k = 0; k < p_d; ++k) {
    Matrix r(n, 2 + p_x);
    r.col(0).setOnes();
    r.col(1) = inst.upsilon.col(inst.excluded_block[static_cast<std::size_t>(k)]);
    if (p_x > 0) r.rightCols(p_x) = pair.t.rightCols(p_x);
    const Vector d = pair.t.col(1 + k);
    Eigen::ColPivHouseholderQR<Matrix> qr(r.rows(), r.cols());
    qr.setThreshold(1e-10);
    qr.compute(r);
    if (qr.rank() < r.cols()) throw DegenerateError("first-stage regressors are collinear (constant instrument?)");
    const Vector coef = qr.solve(d);
    const Vector e = d - r * coef;
    // Sandwich weight of each row on the instrument coefficient.
    const Matrix rtr = r.transpose() * r;
    const Vector h = rtr.ldlt().solve(Vector::Unit(r.cols(), 1));
    const Vector a = r * h;
    FStat f;
    f.dof_den = n - r.cols();
    const double dof_scale = f.dof_den > 0 ? static_cast<double>(n) / static_cast<double>(f.dof_den) : 1.0;
    const double var = dof_scale * (a.array().square() * e.array().square()).sum();
    const double value = coef(1) * coef(1) / var;
    if (!(var > 0.0) || !(value < kFCap)) {
      f.value = kFCap;
      f.perfect_fit = true;
    } else {
      f.value = value;
    }
    out.push_back(f);
  }
  return out;
}

// Plug-in estimate from an estimated instrument, with first-stage F for
// identity weighting and the instrument's pooled out-of-sample R^2.
inline EstimateResult mlss_estimate(const InstrumentMatrix& inst, const DesignPair& pair, const Vector& y,
                                    EstimateOptions opts = {}) {
  EstimateResult res = plugin_estimate(inst.upsilon, pair.t, y, opts);
  res.oos_r2 = inst.pooled_oos_r2;
  append(res.warnings, inst.warnings);
  if (inst.weighting == WeightingScheme::identity) {
    try {
      res.first_stage_f = first_stage_F(inst, pair);
    } catch (const DegenerateError& e) {
      res.warnings.push_back(std::string("first-stage F unavailable: ") + e.what());
    }
  }
  return res;
}

// m minus its least-squares projection on the columns of xbar.
inline Matrix fwl_residualize(const Matrix& m, const Matrix& xbar, Warnings* warnings = nullptr) {
  bool ridge = false;
  Matrix out = residualize(m, xbar, &ridge);
  if (ridge && warnings != nullptr) warnings->push_back("rank-deficient covariate block: ridge fallback used");
  return out;
}

struct SubvectorResult {
  Vector tau;
  Matrix vcov;
};

// Treatment coefficients from covariate-residualized instrument, outcome
// and treatments. Identity weighting only.
inline SubvectorResult subvector_tau(const InstrumentMatrix& inst, const DesignPair& pair, const Vector& y) {
  if (inst.weighting != WeightingScheme::identity)
    throw InputError("subvector_tau requires identity weighting");
  const Index n = pair.t.rows();
  const auto p_d = static_cast<Index>(inst.excluded_block.size());
  const Index p_x = pair.t.cols() - 1 - p_d;
  const double dn = static_cast<double>(n);
  Matrix xbar(n, 1 + p_x);
  xbar.col(0).setOnes();
  if (p_x > 0) xbar.rightCols(p_x) = pair.t.rightCols(p_x);

  const Matrix ups = fwl_residualize(inst.excluded(), xbar);
  const Matrix d = fwl_residualize(pair.t.middleCols(1, p_d), xbar);
  const Vector yt = fwl_residualize(y, xbar).col(0);

  const Matrix a = ups.transpose() * d / dn;
  if (!(condition_number(a) <= kMaxCondition)) throw WeakIdentificationError(condition_number(a));
  const Eigen::ColPivHouseholderQR<Matrix> qr(a);
  SubvectorResult out;
  out.tau = qr.solve(Vector(ups.transpose() * yt / dn));
  const Vector u = yt - d * out.tau;
  const Matrix scaled = ups.array().colwise() * u.array();
  const Matrix omega = scaled.transpose() * scaled / dn;
  const Matrix a_inv = qr.solve(Matrix::Identity(p_d, p_d));
  const Matrix v = a_inv * omega * a_inv.transpose() / dn;
  out.vcov = 0.5 * (v + v.transpose());
  return out;
}

// Classical two-stage least squares with [1, f(W), X] as instruments and
// HC0 sandwich covariance; no sample splitting.
inline EstimateResult tsls(const Dataset& ds, InstrumentTransform transform, EstimateOptions opts = {}) {
  const DesignPair pair = design_matrices(ds);
  Matrix fw = transform_instruments(ds.w, transform);
  // Drop all-zero columns (empty discretization cells).
  std::vector<Index> keep;
  for (Index c = 0; c < fw.cols(); ++c)
    if (fw.col(c).cwiseAbs().maxCoeff() > 0.0) keep.push_back(c);
  Matrix f(fw.rows(), static_cast<Index>(keep.size()));
  for (Index c = 0; c < f.cols(); ++c) f.col(c) = fw.col(keep[static_cast<std::size_t>(c)]);
  if (f.cols() < ds.p_d()) throw InputError("tsls: fewer excluded instruments than treatments");

  const Matrix zf = hcat(hcat(ones_column(ds.n()), f), ds.x);
  Eigen::ColPivHouseholderQR<Matrix> qr(zf);
  if (qr.rank() < 1 + ds.p_x() + ds.p_d()) throw DegenerateError("tsls: instrument matrix is rank deficient");
  const Matrix fitted = zf * qr.solve(pair.t);

  InstrumentMatrix inst;
  inst.upsilon = fitted;
  for (Index k = 0; k < ds.p_d(); ++k) inst.excluded_block.push_back(1 + k);
  inst.full_sample = true;
  const Matrix d_hat = fitted.middleCols(1, ds.p_d());
  for (Index k = 0; k < ds.p_d(); ++k) {
    const OosR2 r2 = oos_r2(d_hat.col(k), ds.d.col(k), ds.d.col(k).mean());
    inst.pooled_oos_r2.push_back(r2.value);
  }
  EstimateResult res = mlss_estimate(inst, pair, ds.y, opts);
  if (qr.rank() < zf.cols()) res.warnings.push_back("tsls: collinear instrument columns dropped by pivoting");
  return res;
}

struct HausmanResult {
  double stat = 0.0;
  Index dof = 0;
  double pvalue = 1.0;
  bool inconclusive = false;  // variance gap has rank 0 or is indefinite
};

// Contrast of two estimates of the same coefficients on `block`, with
// b presumed efficient: d'(V_a - V_b)^+ d against chi^2(rank).
inline HausmanResult hausman_test(const EstimateResult& a, const EstimateResult& b, const IndexList& block) {
  if (a.theta.size() != b.theta.size() || a.vcov.rows() != b.vcov.rows())
    throw InputError("hausman_test: estimates are not conformable");
  const auto m = static_cast<Index>(block.size());
  if (m == 0) throw InputError("hausman_test: empty coefficient block");
  Vector d(m);
  Matrix va(m, m), vb(m, m);
  for (Index r = 0; r < m; ++r) {
    const Index ir = block[static_cast<std::size_t>(r)];
    if (ir < 0 || ir >= a.theta.size()) throw InputError("hausman_test: block index out of range");
    d(r) = a.theta(ir) - b.theta(ir);
    for (Index c = 0; c < m; ++c) {
      va(r, c) = a.vcov(ir, block[static_cast<std::size_t>(c)]);
      vb(r, c) = b.vcov(ir, block[static_cast<std::size_t>(c)]);
    }
  }
  const double norm_a = Eigen::JacobiSVD<Matrix>(va).singularValues()(0);
  const SymmetricPinv pinv = symmetric_pinv(va - vb, 1e-10 * norm_a);
  HausmanResult out;
  out.dof = pinv.rank;
  if (out.dof == 0) {
    out.inconclusive = d.squaredNorm() > 0.0;
    return out;
  }
  out.stat = d.dot(pinv.inverse * d);
  if (out.stat < 0.0) {
    out.inconclusive = true;
    out.stat = 0.0;
  }
  out.pvalue = stats::chi2_sf(static_cast<double>(out.dof), out.stat);
  return out;
}

}  // namespace mlss
