#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "mlss/common.hpp"

namespace mlss {

struct LeastSquaresFit {
  Matrix coef;         // q x r
  bool ridge = false;  // rank-deficient design, ridge fallback used
};

// Least-squares coefficients of every column of `targets` on `design`.
// Rank-deficient designs fall back to ridge with
// lambda = 1e-8 * trace(X'X) / q.
inline LeastSquaresFit least_squares(const Matrix& design, const Matrix& targets) {
  if (design.rows() != targets.rows()) throw InputError("least_squares: row count mismatch");
  LeastSquaresFit fit;
  const Index q = design.cols();
  if (q == 0) {
    fit.coef = Matrix::Zero(0, targets.cols());
    return fit;
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  if (qr.rank() == q) {
    fit.coef = qr.solve(targets);
    return fit;
  }
  const Matrix gram = design.transpose() * design;
  double lambda = 1e-8 * gram.trace() / static_cast<double>(q);
  if (!(lambda > 0.0)) lambda = 1e-8;
  const Matrix reg = gram + lambda * Matrix::Identity(q, q);
  fit.coef = reg.ldlt().solve(design.transpose() * targets);
  fit.ridge = true;
  return fit;
}

// Residual of `m` after least-squares projection on the columns of `basis`.
inline Matrix residualize(const Matrix& m, const Matrix& basis, bool* ridge = nullptr) {
  const LeastSquaresFit fit = least_squares(basis, m);
  if (ridge != nullptr) *ridge = fit.ridge;
  return m - basis * fit.coef;
}

// Ratio of extreme singular values; +inf for exactly singular input.
inline double condition_number(const Matrix& a) {
  if (a.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  const Vector s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  if (!(smin > 0.0) || !std::isfinite(smax)) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

struct SymmetricPinv {
  Matrix inverse;
  Index rank = 0;
};

// Moore-Penrose inverse of a symmetric matrix; eigenvalues with
// |lambda| <= cutoff are treated as zero.
inline SymmetricPinv symmetric_pinv(const Matrix& a, double cutoff) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (a + a.transpose()));
  const Vector& lambda = eig.eigenvalues();
  const Matrix& vecs = eig.eigenvectors();
  SymmetricPinv out;
  out.inverse = Matrix::Zero(a.rows(), a.cols());
  for (Index k = 0; k < lambda.size(); ++k) {
    if (std::abs(lambda(k)) > cutoff) {
      out.inverse += vecs.col(k) * vecs.col(k).transpose() / lambda(k);
      ++out.rank;
    }
  }
  return out;
}

}  // namespace mlss
