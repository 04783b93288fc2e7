#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mlss/common.hpp"
#include "mlss/data.hpp"
#include "mlss/estimator.hpp"
#include "mlss/instrument_matrix.hpp"
#include "mlss/linalg.hpp"
#include "mlss/stats.hpp"

namespace mlss {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// One fold's inputs to the Anderson-Rubin test: the off-fold-trained
// estimated treatments and the fold's own outcome, treatments and [1, X].
struct ARFoldInput {
  Matrix upsilon_hat;  // n_bar x p_d
  Vector y;
  Matrix d;            // n_bar x p_d
  Matrix xbar;         // n_bar x (1 + p_x)

  Index size() const { return y.size(); }
};

// Splits an identity-weighted cross-fitted instrument into per-fold AR inputs.
inline std::vector<ARFoldInput> ar_fold_inputs(const InstrumentMatrix& inst, const Dataset& ds) {
  if (inst.weighting != WeightingScheme::identity)
    throw InputError("Anderson-Rubin inference requires identity weighting");
  if (inst.full_sample) throw InputError("Anderson-Rubin inference requires a split-sample instrument");
  const Matrix ups = inst.excluded();
  const Matrix xbar = ds.xbar();
  std::vector<ARFoldInput> out;
  for (const auto& rows : inst.fold_rows) {
    ARFoldInput in;
    in.upsilon_hat = take_rows(ups, rows);
    in.y = take_rows(ds.y, rows);
    in.d = take_rows(ds.d, rows);
    in.xbar = take_rows(xbar, rows);
    out.push_back(std::move(in));
  }
  return out;
}

namespace detail {

inline void check_ar_input(const ARFoldInput& in) {
  const Index n = in.size();
  if (in.upsilon_hat.rows() != n || in.d.rows() != n || in.xbar.rows() != n)
    throw InputError("AR fold input has inconsistent row counts");
  if (in.upsilon_hat.cols() != in.d.cols()) throw InputError("AR fold input: instrument and treatment dims differ");
  if (n <= in.xbar.cols()) throw DegenerateError("AR fold too small to partial out covariates");
}

// Instrument columns scaled to unit in-fold sum of squares.
inline Matrix normalized_instrument(const Matrix& ups) {
  Matrix out = ups;
  for (Index c = 0; c < out.cols(); ++c) {
    const double norm = out.col(c).norm();
    if (norm > 0.0) out.col(c) /= norm;
  }
  return out;
}

}  // namespace detail

// AR_j(tau0) = V' Omega^{-1} V with V = n^{-1/2} sum upsilon_i U~_i(tau0) and
// Omega = n^{-1} sum U~_i^2 upsilon~_i upsilon~_i'. Returns +inf when Omega is
// singular.
inline double ar_statistic(const ARFoldInput& in, const Vector& tau0) {
  detail::check_ar_input(in);
  if (tau0.size() != in.d.cols()) throw InputError("ar_statistic: tau0 has the wrong dimension");
  const double nb = static_cast<double>(in.size());
  const Matrix ups = detail::normalized_instrument(in.upsilon_hat);
  const Vector u = residualize(in.y - in.d * tau0, in.xbar).col(0);
  const Matrix ups_t = residualize(ups, in.xbar);
  const Vector v = ups.transpose() * u / std::sqrt(nb);
  const Matrix scaled = ups_t.array().colwise() * u.array();
  const Matrix omega = scaled.transpose() * scaled / nb;
  Eigen::LDLT<Matrix> ldlt(omega);
  const double scale = omega.diagonal().cwiseAbs().maxCoeff();
  if (!(scale > 0.0) || ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * scale)
    return kInf;
  return std::max(0.0, v.dot(ldlt.solve(v)));
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double t) const { return lo <= t && t <= hi; }
  bool bounded() const { return std::isfinite(lo) && std::isfinite(hi); }
};

// half_line and other only arise from measure-zero coefficient
// configurations or from intersecting sets.
enum class ARShape { finite_interval, two_rays, whole_line, empty, half_line, other };

inline std::string to_string(ARShape s) {
  switch (s) {
    case ARShape::finite_interval: return "finite_interval";
    case ARShape::two_rays: return "two_rays";
    case ARShape::whole_line: return "whole_line";
    case ARShape::empty: return "empty";
    case ARShape::half_line: return "half_line";
    case ARShape::other: return "other";
  }
  return "other";
}

inline ARShape classify(const std::vector<Interval>& iv) {
  if (iv.empty()) return ARShape::empty;
  if (iv.size() == 1) {
    const bool lo_inf = std::isinf(iv[0].lo);
    const bool hi_inf = std::isinf(iv[0].hi);
    if (lo_inf && hi_inf) return ARShape::whole_line;
    if (!lo_inf && !hi_inf) return ARShape::finite_interval;
    return ARShape::half_line;
  }
  if (iv.size() == 2 && std::isinf(iv.front().lo) && std::isinf(iv.back().hi) && std::isfinite(iv.front().hi) &&
      std::isfinite(iv.back().lo))
    return ARShape::two_rays;
  return ARShape::other;
}

// Confidence set for a scalar treatment coefficient: sorted, disjoint closed
// intervals with possibly infinite endpoints.
struct ARSet {
  std::vector<Interval> intervals;
  ARShape shape = ARShape::empty;
  double level = 0.0;     // per-set test level alpha'
  double critical = 0.0;  // chi^2 quantile used
  Warnings warnings;

  bool empty() const { return intervals.empty(); }
  bool contains(double t) const {
    return std::any_of(intervals.begin(), intervals.end(), [t](const Interval& i) { return i.contains(t); });
  }
  bool finite() const { return shape == ARShape::finite_interval; }

  static ARSet from(std::vector<Interval> iv) {
    ARSet s;
    s.intervals = std::move(iv);
    s.shape = classify(s.intervals);
    return s;
  }
};

// Coefficients of the affine/quadratic pieces of AR_j in a scalar tau:
// sum upsilon U~(tau) = a - b tau, n_bar * Omega(tau) = A - 2 B tau + C tau^2.
struct ARQuadratic {
  double a = 0.0, b = 0.0, big_a = 0.0, big_b = 0.0, big_c = 0.0;

  double statistic(double tau) const {
    const double s = a - b * tau;
    const double om = big_a - 2.0 * big_b * tau + big_c * tau * tau;
    if (!(om > 0.0)) return kInf;
    return s * s / om;
  }
};

inline ARQuadratic ar_quadratic(const ARFoldInput& in) {
  detail::check_ar_input(in);
  if (in.d.cols() != 1) throw InputError("closed-form AR sets need a scalar treatment");
  const Vector ups = detail::normalized_instrument(in.upsilon_hat).col(0);
  const Vector ups_t = residualize(ups, in.xbar).col(0);
  const Vector yt = residualize(in.y, in.xbar).col(0);
  const Vector dt = residualize(in.d, in.xbar).col(0);
  const Vector w2 = ups_t.array().square();
  ARQuadratic q;
  q.a = ups.dot(yt);
  q.b = ups.dot(dt);
  q.big_a = (yt.array().square() * w2.array()).sum();
  q.big_b = (yt.array() * dt.array() * w2.array()).sum();
  q.big_c = (dt.array().square() * w2.array()).sum();
  return q;
}

// {tau : AR_j(tau) <= chi^2_{1, 1 - level}}, solved in closed form from the
// quadratic inequality (b^2 - cC) tau^2 - 2 (ab - cB) tau + (a^2 - cA) <= 0.
inline ARSet ar_set_fold(const ARFoldInput& in, double level) {
  if (!(level > 0.0 && level < 1.0)) throw InputError("AR level must be in (0, 1)");
  const ARQuadratic q = ar_quadratic(in);
  const double c = stats::chi2_quantile(1.0, 1.0 - level);
  const double p2 = q.b * q.b - c * q.big_c;
  const double p1 = -2.0 * (q.a * q.b - c * q.big_b);
  const double p0 = q.a * q.a - c * q.big_a;
  const double scale = q.a * q.a + q.b * q.b + c * (std::abs(q.big_a) + std::abs(q.big_c));
  const double tol = 1e-12 * scale;

  std::vector<Interval> iv;
  Warnings warnings;
  if (!(scale > 0.0) || (std::abs(p2) <= tol && std::abs(p1) <= tol && std::abs(p0) <= tol)) {
    iv.push_back({-kInf, kInf});
    warnings.push_back("degenerate fold: AR statistic is flat, confidence set is the whole line");
  } else if (std::abs(p2) <= tol) {
    if (std::abs(p1) <= tol) {
      if (p0 <= 0.0) iv.push_back({-kInf, kInf});
    } else if (p1 > 0.0) {
      iv.push_back({-kInf, -p0 / p1});
    } else {
      iv.push_back({-p0 / p1, kInf});
    }
  } else {
    const double disc = p1 * p1 - 4.0 * p2 * p0;
    if (disc < 0.0) {
      if (p2 < 0.0) iv.push_back({-kInf, kInf});
    } else {
      const double sq = std::sqrt(disc);
      const double qq = -0.5 * (p1 + std::copysign(sq, p1));
      double r1 = qq / p2;
      double r2 = qq != 0.0 ? p0 / qq : r1;
      if (r1 > r2) std::swap(r1, r2);
      if (p2 > 0.0) {
        iv.push_back({r1, r2});
      } else if (r1 < r2) {
        iv.push_back({-kInf, r1});
        iv.push_back({r2, kInf});
      } else {
        iv.push_back({-kInf, kInf});
      }
    }
  }
  ARSet set = ARSet::from(std::move(iv));
  set.level = level;
  set.critical = c;
  set.warnings = std::move(warnings);
  return set;
}

inline std::vector<Interval> intersect(const std::vector<Interval>& a, const std::vector<Interval>& b) {
  std::vector<Interval> out;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double lo = std::max(a[i].lo, b[j].lo);
    const double hi = std::min(a[i].hi, b[j].hi);
    if (lo <= hi) out.push_back({lo, hi});
    if (a[i].hi < b[j].hi) {
      ++i;
    } else {
      ++j;
    }
  }
  return out;
}

struct CombinedARSet {
  ARSet combined;
  std::vector<ARSet> per_fold;
};

// Bonferroni combination: intersection of per-fold sets at level alpha / K.
inline CombinedARSet ar_set_combined(const std::vector<ARFoldInput>& folds, double alpha, std::size_t k) {
  if (folds.empty()) throw InputError("ar_set_combined: no folds");
  if (k < 1) throw InputError("ar_set_combined: K must be positive");
  CombinedARSet out;
  const double level = alpha / static_cast<double>(k);
  std::vector<Interval> acc{{-kInf, kInf}};
  for (const auto& f : folds) {
    out.per_fold.push_back(ar_set_fold(f, level));
    acc = intersect(acc, out.per_fold.back().intervals);
    append(out.combined.warnings, out.per_fold.back().warnings);
  }
  out.combined.intervals = std::move(acc);
  out.combined.shape = classify(out.combined.intervals);
  out.combined.level = alpha;
  out.combined.critical = out.per_fold.front().critical;
  if (out.combined.empty())
    out.combined.warnings.push_back(
        "per-fold AR sets do not overlap: the Bonferroni intersection is empty (each fold set is non-empty)");
  return out;
}

// AR acceptance on a grid of tau vectors (rows), for any treatment dimension.
inline std::vector<bool> ar_grid(const ARFoldInput& in, const Matrix& taus, double level) {
  const double c = stats::chi2_quantile(static_cast<double>(in.d.cols()), 1.0 - level);
  std::vector<bool> out;
  out.reserve(static_cast<std::size_t>(taus.rows()));
  for (Index r = 0; r < taus.rows(); ++r) out.push_back(ar_statistic(in, taus.row(r).transpose()) <= c);
  return out;
}

// theta_i +- z_{1 - alpha/2} * se_i.
inline Interval wald_ci(const EstimateResult& est, Index index, double alpha) {
  if (index < 0 || index >= est.theta.size()) throw InputError("wald_ci: coefficient index out of range");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("wald_ci: alpha must be in (0, 1]");
  const double se = std::sqrt(std::max(0.0, est.vcov(index, index)));
  const double z = alpha >= 1.0 ? 0.0 : stats::normal_quantile(1.0 - alpha / 2.0);
  return {est.theta(index) - z * se, est.theta(index) + z * se};
}

}  // namespace mlss
