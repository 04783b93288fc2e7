#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "mlss/common.hpp"
#include "mlss/data.hpp"
#include "mlss/learners.hpp"

namespace mlss {

// Simulated dataset with its oracle quantities. True tau is 1.
struct SimDataset {
  Dataset data;
  Vector propensity;  // P(D = 1 | W), before any covariate-driven flip
  Vector d_latent;    // D before the covariate-driven flip
  Vector u;           // structural error
  Vector scale;       // v(W); ones when the outcome is not rescaled
  double tau = 1.0;
};

enum class DgpKind { nocov, cov };

inline std::string to_string(DgpKind k) { return k == DgpKind::nocov ? "dgp_nocov" : "dgp_cov"; }

inline DgpKind dgp_from_string(const std::string& s) {
  if (s == "dgp_nocov") return DgpKind::nocov;
  if (s == "dgp_cov") return DgpKind::cov;
  throw InputError("unknown dgp '" + s + "' (valid: dgp_nocov, dgp_cov)");
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// sgn(0) = 0, so mu vanishes on the axes inside the unit disk.
inline double mu_xor(double w0, double w1) {
  const double r2 = w0 * w0 + w1 * w1;
  if (r2 > 1.0) return 0.1;
  const double prod = w0 * w1;
  const double sgn = prod > 0.0 ? 1.0 : (prod < 0.0 ? -1.0 : 0.0);
  return sgn * r2;
}

inline double propensity(double w0, double w1, double w2) {
  const double s = std::sin(2.0 * w2);
  return logistic(3.0 * mu_xor(w0, w1)) * s * s;
}

inline double outcome_scale(double w0, double w1, double w2) { return 0.1 + logistic((w0 + w1) * w2); }

// Loadings of X on W in the covariate design.
inline const Matrix& covariate_loadings() {
  static const Matrix a = [] {
    Matrix m(2, 3);
    m << 1.0, 0.4, 0.3, 0.5, 2.0, 0.2;
    return m;
  }();
  return a;
}

inline constexpr double kFlipProbability = 0.3;
inline const Vector& covariate_effects() {
  static const Vector b = (Vector(2) << 0.1, 0.3).finished();
  return b;
}

namespace detail {

inline SimDataset simulate(DgpKind kind, Index n, std::uint64_t seed) {
  if (n < 1) throw InputError("simulated sample size must be >= 1");
  std::mt19937_64 rng(mix_seed(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const bool cov = kind == DgpKind::cov;
  const Matrix& a = covariate_loadings();
  const Vector& beta = covariate_effects();

  Vector y(n), d(n), d0(n), p(n), u(n), v(n);
  Matrix w(n, 3), x(n, cov ? 2 : 0);
  // Draws are made row by row in a fixed order, so a smaller sample is a
  // prefix of a larger one under the same seed.
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < 3; ++c) w(i, c) = normal(rng);
    p(i) = propensity(w(i, 0), w(i, 1), w(i, 2));
    const double di = unif(rng) < p(i) ? 1.0 : 0.0;
    d0(i) = di;
    const double z1 = normal(rng);
    const double z2 = normal(rng);
    u(i) = 0.5 * (di - p(i)) * std::abs(z1) + std::sqrt(1.0 - 0.25) * z2;
    if (!cov) {
      v(i) = outcome_scale(w(i, 0), w(i, 1), w(i, 2));
      d(i) = di;
      y(i) = di + v(i) * u(i);
      continue;
    }
    const Vector xi = a * w.row(i).transpose() + Vector{{normal(rng), normal(rng)}};
    x.row(i) = xi.transpose();
    const double flip_draw = unif(rng);
    const double dt = (xi(0) > 0.0 && flip_draw < kFlipProbability) ? 1.0 - di : di;
    v(i) = 1.0;
    d(i) = dt;
    y(i) = dt + xi.dot(beta) + u(i);
  }
  SimDataset out;
  out.data = make_dataset(std::move(y), d, std::move(x), std::move(w));
  out.propensity = std::move(p);
  out.d_latent = std::move(d0);
  out.u = std::move(u);
  out.scale = std::move(v);
  return out;
}

}  // namespace detail

inline SimDataset dgp_nocov(Index n, std::uint64_t seed) { return detail::simulate(DgpKind::nocov, n, seed); }
inline SimDataset dgp_cov(Index n, std::uint64_t seed) { return detail::simulate(DgpKind::cov, n, seed); }
inline SimDataset simulate(DgpKind kind, Index n, std::uint64_t seed) { return detail::simulate(kind, n, seed); }

// E[D|W] under either design. With covariates, D is flipped with probability
// 0.3 when X0 > 0, and P(X0 > 0 | W) = Phi((AW)_0).
inline Matrix true_treatment_mean(DgpKind kind, const Matrix& w) {
  Matrix out(w.rows(), 1);
  const boost::math::normal_distribution<double> std_normal;
  for (Index i = 0; i < w.rows(); ++i) {
    const double p = propensity(w(i, 0), w(i, 1), w(i, 2));
    if (kind == DgpKind::nocov) {
      out(i, 0) = p;
      continue;
    }
    const double q = boost::math::cdf(std_normal, covariate_loadings().row(0).dot(w.row(i)));
    out(i, 0) = p * (1.0 - kFlipProbability * q) + (1.0 - p) * kFlipProbability * q;
  }
  return out;
}

inline Matrix true_covariate_mean(const Matrix& w) { return w * covariate_loadings().transpose(); }

// Var(U|W) scaled by v(W)^2: the conditional variance of the outcome error in
// the design without covariates.
inline Vector true_error_variance_nocov(const Matrix& w) {
  Vector out(w.rows());
  for (Index i = 0; i < w.rows(); ++i) {
    const double p = propensity(w(i, 0), w(i, 1), w(i, 2));
    const double v = outcome_scale(w(i, 0), w(i, 1), w(i, 2));
    out(i) = v * v * (0.25 * p * (1.0 - p) + 0.75);
  }
  return out;
}

// Oracle targets of the variance regressions, [E[U^2|W], E[X U^2|W]'], with U
// the outcome error. V is independent of U, so E[X U^2|W] = AW E[U^2|W].
inline Matrix true_variance_targets(DgpKind kind, const Matrix& w) {
  if (kind == DgpKind::nocov) return true_error_variance_nocov(w);
  Matrix out(w.rows(), 3);
  const Matrix ax = true_covariate_mean(w);
  for (Index i = 0; i < w.rows(); ++i) {
    const double p = propensity(w(i, 0), w(i, 1), w(i, 2));
    const double s2 = 0.25 * p * (1.0 - p) + 0.75;
    out(i, 0) = s2;
    out.row(i).tail(2) = ax.row(i) * s2;
  }
  return out;
}

inline LearnerSpec oracle_treatment_learner(DgpKind kind) {
  return LearnerSpec::oracle([kind](const Matrix& w) { return true_treatment_mean(kind, w); });
}

inline LearnerSpec oracle_covariate_learner() {
  return LearnerSpec::oracle([](const Matrix& w) { return true_covariate_mean(w); });
}

}  // namespace mlss
