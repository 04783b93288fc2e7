#pragma once

#include <random>

#include "mlss/mlss.hpp"

namespace mlss::testutil {

// Linear-Gaussian IV design: D depends on W (nonlinearly when `nonlinear`),
// U correlated with the first-stage error, optional covariates entering both
// equations.
inline Dataset random_iv_data(Index n, Index p_d, Index p_x, Index p_w, std::uint64_t seed, bool nonlinear = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix w(n, p_w), x(n, p_x), d(n, p_d);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < p_w; ++c) w(i, c) = z(rng);
    for (Index c = 0; c < p_x; ++c) x(i, c) = 0.5 * w(i, c % p_w) + z(rng);
    const double v = z(rng);
    const double u = 0.6 * v + 0.8 * z(rng);
    double yi = 0.5 + u;
    for (Index k = 0; k < p_d; ++k) {
      double di = 0.3 * v + 0.2 * z(rng);
      for (Index c = 0; c < p_w; ++c) di += (0.5 + 0.3 * static_cast<double>((c + k) % 3)) * w(i, c);
      if (nonlinear) di += w(i, k % p_w) * w(i, k % p_w);
      for (Index c = 0; c < p_x; ++c) di += 0.2 * x(i, c);
      d(i, k) = di;
      yi += (1.0 + static_cast<double>(k)) * di;
    }
    for (Index c = 0; c < p_x; ++c) yi += 0.3 * x(i, c);
    y(i) = yi;
  }
  return make_dataset(y, d, x, w);
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace mlss::testutil
