#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mlss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

// Bad input: malformed files, invalid configuration, dimension mismatches.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Statistical degeneracy the caller may recover from (singular moments,
// empty folds, zero denominators).
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The plug-in Jacobian is singular or too ill-conditioned to invert.
class WeakIdentificationError : public DegenerateError {
 public:
  explicit WeakIdentificationError(double condition)
      : DegenerateError("weak identification: condition number of G-hat is " +
                        std::to_string(condition) +
                        " (threshold 1e12); use Anderson-Rubin inference"),
        condition_(condition) {}

  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

// Non-fatal notes accumulated along a computation (ridge fallbacks, floors).
using Warnings = std::vector<std::string>;

inline void append(Warnings& into, const Warnings& from) {
  into.insert(into.end(), from.begin(), from.end());
}

// SplitMix64 finaliser; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix_seed(mix_seed(master) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

// Rows of m listed in idx, in order.
inline Matrix take_rows(const Matrix& m, const IndexList& idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (Index r = 0; r < out.rows(); ++r) out.row(r) = m.row(idx[r]);
  return out;
}

inline Vector take_rows(const Vector& v, const IndexList& idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (Index r = 0; r < out.size(); ++r) out(r) = v(idx[r]);
  return out;
}

inline Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw InputError("hcat: row count mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

inline Matrix ones_column(Index n) { return Matrix::Ones(n, 1); }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace mlss
