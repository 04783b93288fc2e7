#pragma once

#include <string>
#include <vector>

#include "mlss/common.hpp"

namespace mlss {

// Monomials of total degree 1..degree. Without interactions only pure
// powers are produced, ordered levels, squares, cubes.
inline Matrix polynomial_expand(const Matrix& x, int degree, bool interactions) {
  if (degree < 1) throw InputError("polynomial degree must be at least 1");
  const Index n = x.rows();
  const Index q = x.cols();
  if (q == 0) return Matrix(n, 0);
  std::vector<Vector> columns;
  if (!interactions) {
    for (int p = 1; p <= degree; ++p)
      for (Index j = 0; j < q; ++j) columns.push_back(x.col(j).array().pow(p).matrix());
  } else {
    // Non-decreasing index tuples of length `deg`.
    std::vector<Index> combo;
    for (int deg = 1; deg <= degree; ++deg) {
      combo.assign(static_cast<std::size_t>(deg), 0);
      for (;;) {
        Vector col = Vector::Ones(n);
        for (Index j : combo) col.array() *= x.col(j).array();
        columns.push_back(std::move(col));
        int pos = deg - 1;
        while (pos >= 0 && combo[static_cast<std::size_t>(pos)] == q - 1) --pos;
        if (pos < 0) break;
        const Index next = combo[static_cast<std::size_t>(pos)] + 1;
        for (int r = pos; r < deg; ++r) combo[static_cast<std::size_t>(r)] = next;
      }
    }
  }
  Matrix out(n, static_cast<Index>(columns.size()));
  for (Index c = 0; c < out.cols(); ++c) out.col(c) = columns[static_cast<std::size_t>(c)];
  return out;
}

// Level of v relative to ascending thresholds: the count of thresholds
// strictly below v.
inline int threshold_level(double v, const std::vector<double>& thresholds) {
  int level = 0;
  for (double t : thresholds)
    if (v > t) ++level;
  return level;
}

inline Index cell_count(Index q, const std::vector<double>& thresholds) {
  Index cells = 1;
  const auto levels = static_cast<Index>(thresholds.size() + 1);
  for (Index j = 0; j < q; ++j) cells *= levels;
  return cells;
}

// Mixed-radix cell id over all columns (full interactions).
inline Index cell_of(const Eigen::Ref<const Eigen::RowVectorXd>& row, const std::vector<double>& thresholds) {
  const auto levels = static_cast<Index>(thresholds.size() + 1);
  Index id = 0;
  Index radix = 1;
  for (Index j = 0; j < row.size(); ++j) {
    id += threshold_level(row(j), thresholds) * radix;
    radix *= levels;
  }
  return id;
}

// Indicator columns for every cell except cell 0 (absorbed by a constant).
inline Matrix cell_dummies(const Matrix& x, const std::vector<double>& thresholds) {
  const Index cells = cell_count(x.cols(), thresholds);
  Matrix out = Matrix::Zero(x.rows(), cells - 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const Index c = cell_of(x.row(i), thresholds);
    if (c > 0) out(i, c - 1) = 1.0;
  }
  return out;
}

inline const std::vector<double>& default_thresholds() {
  static const std::vector<double> t{-1.0, 0.0, 1.0};
  return t;
}

enum class InstrumentTransform { linear, quadratic, quadratic_interact, cubic_interact, discretized };

inline std::string to_string(InstrumentTransform t) {
  switch (t) {
    case InstrumentTransform::linear: return "linear";
    case InstrumentTransform::quadratic: return "quadratic";
    case InstrumentTransform::quadratic_interact: return "quadratic_interact";
    case InstrumentTransform::cubic_interact: return "cubic_interact";
    case InstrumentTransform::discretized: return "discretized";
  }
  return "linear";
}

inline InstrumentTransform transform_from_string(const std::string& s) {
  if (s == "linear") return InstrumentTransform::linear;
  if (s == "quadratic") return InstrumentTransform::quadratic;
  if (s == "quadratic_interact") return InstrumentTransform::quadratic_interact;
  if (s == "cubic_interact") return InstrumentTransform::cubic_interact;
  if (s == "discretized") return InstrumentTransform::discretized;
  throw InputError("unknown instrument transform '" + s + "'");
}

// Excluded-instrument columns f(W) for classical two-stage least squares.
inline Matrix transform_instruments(const Matrix& w, InstrumentTransform t) {
  switch (t) {
    case InstrumentTransform::linear: return w;
    case InstrumentTransform::quadratic: return polynomial_expand(w, 2, false);
    case InstrumentTransform::quadratic_interact: return polynomial_expand(w, 2, true);
    case InstrumentTransform::cubic_interact: return polynomial_expand(w, 3, true);
    case InstrumentTransform::discretized: return cell_dummies(w, default_thresholds());
  }
  return w;
}

}  // namespace mlss
