#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mlss/common.hpp"

namespace mlss {

// Observations (Y, D, X, W). Column roles come from CSV header prefixes:
// `y`, `d_*` (endogenous treatments), `x_*` (exogenous covariates) and
// `w_*` (excluded instruments).
struct Dataset {
  Vector y;
  Matrix d;
  Matrix x;  // may have zero columns
  Matrix w;
  std::vector<std::string> d_names;
  std::vector<std::string> x_names;
  std::vector<std::string> w_names;

  Index n() const { return y.size(); }
  Index p_d() const { return d.cols(); }
  Index p_x() const { return x.cols(); }
  Index p_w() const { return w.cols(); }

  // [1, X]: the constant plus covariate columns of T.
  Matrix xbar() const { return hcat(ones_column(n()), x); }

  Dataset subset(const IndexList& rows) const {
    Dataset out;
    out.y = take_rows(y, rows);
    out.d = take_rows(d, rows);
    out.x = take_rows(x, rows);
    out.w = take_rows(w, rows);
    out.d_names = d_names;
    out.x_names = x_names;
    out.w_names = w_names;
    return out;
  }
};

inline void fill_default_names(Dataset& ds) {
  auto fill = [](std::vector<std::string>& names, Index count, const std::string& prefix) {
    if (static_cast<Index>(names.size()) == count) return;
    names.clear();
    for (Index k = 0; k < count; ++k) names.push_back(prefix + std::to_string(k));
  };
  fill(ds.d_names, ds.p_d(), "d_");
  fill(ds.x_names, ds.p_x(), "x_");
  fill(ds.w_names, ds.p_w(), "w_");
}

inline void validate(const Dataset& ds) {
  const Index n = ds.n();
  if (n < 2) throw InputError("dataset needs at least 2 observations");
  if (ds.d.rows() != n || ds.x.rows() != n || ds.w.rows() != n)
    throw InputError("dataset blocks have inconsistent row counts");
  if (ds.p_d() < 1) throw InputError("dataset has no endogenous treatment columns");
  if (ds.p_w() < 1) throw InputError("dataset has no excluded instrument columns");
  if (!ds.y.allFinite() || !ds.d.allFinite() || !ds.x.allFinite() || !ds.w.allFinite())
    throw InputError("dataset contains non-finite values");
}

// Assembles a dataset from raw blocks; `x` may be an n x 0 matrix.
inline Dataset make_dataset(Vector y, Matrix d, Matrix x, Matrix w) {
  Dataset ds;
  ds.y = std::move(y);
  ds.d = std::move(d);
  ds.x = x.rows() == 0 && x.cols() == 0 ? Matrix(ds.y.size(), 0) : std::move(x);
  ds.w = std::move(w);
  fill_default_names(ds);
  validate(ds);
  return ds;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() > prefix.size() && s.substr(0, prefix.size()) == prefix;
}

}  // namespace detail

// Parses the numeric CSV format. With `strict`, columns that match none of
// the role prefixes are rejected; otherwise they are ignored.
inline Dataset parse_csv(std::istream& in, bool strict = true) {
  enum class Role { y, d, x, w, skip };
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw InputError("empty CSV file (no header row)");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
    line.erase(0, 3);

  const auto header = detail::split_commas(line);
  std::vector<Role> roles;
  std::vector<std::string> names;
  Dataset ds;
  int y_count = 0;
  for (const auto& raw : header) {
    std::string name(raw);
    names.push_back(name);
    if (name == "y") {
      roles.push_back(Role::y);
      ++y_count;
    } else if (detail::starts_with(name, "d_")) {
      roles.push_back(Role::d);
      ds.d_names.push_back(name);
    } else if (detail::starts_with(name, "x_")) {
      roles.push_back(Role::x);
      ds.x_names.push_back(name);
    } else if (detail::starts_with(name, "w_")) {
      roles.push_back(Role::w);
      ds.w_names.push_back(name);
    } else if (strict) {
      throw InputError("unrecognised column '" + name + "' (expected y, d_*, x_* or w_*)");
    } else {
      roles.push_back(Role::skip);
    }
  }
  if (y_count == 0) throw InputError("missing outcome column 'y'");
  if (y_count > 1) throw InputError("duplicate outcome column 'y'");
  if (ds.d_names.empty()) throw InputError("no treatment columns (prefix 'd_')");
  if (ds.w_names.empty()) throw InputError("no instrument columns (prefix 'w_')");
  {
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    const auto dup = std::adjacent_find(sorted.begin(), sorted.end());
    if (dup != sorted.end()) throw InputError("duplicate column '" + *dup + "'");
  }

  std::vector<double> ys;
  std::vector<std::vector<double>> ds_rows, xs_rows, ws_rows;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_commas(line);
    if (cells.size() != roles.size())
      throw InputError("row " + std::to_string(row) + " (line " + std::to_string(line_no) + ") has " +
                       std::to_string(cells.size()) + " cells, expected " + std::to_string(roles.size()));
    std::vector<double> drow, xrow, wrow;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (roles[c] == Role::skip) continue;
      const auto cell = cells[c];
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value))
        throw InputError("row " + std::to_string(row) + ", column '" + names[c] + "': cannot parse '" +
                         std::string(cell) + "' as a finite number");
      switch (roles[c]) {
        case Role::y: ys.push_back(value); break;
        case Role::d: drow.push_back(value); break;
        case Role::x: xrow.push_back(value); break;
        case Role::w: wrow.push_back(value); break;
        case Role::skip: break;
      }
    }
    ds_rows.push_back(std::move(drow));
    xs_rows.push_back(std::move(xrow));
    ws_rows.push_back(std::move(wrow));
  }
  if (ys.empty()) throw InputError("CSV has a header but no data rows");

  const auto n = static_cast<Index>(ys.size());
  auto to_matrix = [n](const std::vector<std::vector<double>>& rows, std::size_t cols) {
    Matrix m(n, static_cast<Index>(cols));
    for (Index i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cols; ++c) m(i, static_cast<Index>(c)) = rows[i][c];
    return m;
  };
  ds.y = Eigen::Map<const Vector>(ys.data(), n);
  ds.d = to_matrix(ds_rows, ds.d_names.size());
  ds.x = to_matrix(xs_rows, ds.x_names.size());
  ds.w = to_matrix(ws_rows, ds.w_names.size());
  validate(ds);
  return ds;
}

inline Dataset load_csv(const std::string& path, bool strict = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open data file '" + path + "'");
  return parse_csv(in, strict);
}

inline void write_csv(std::ostream& out, const Dataset& ds) {
  Dataset named = ds;
  fill_default_names(named);
  out << "y";
  for (const auto& nm : named.d_names) out << ',' << nm;
  for (const auto& nm : named.x_names) out << ',' << nm;
  for (const auto& nm : named.w_names) out << ',' << nm;
  out << '\n';
  out << std::setprecision(17);
  for (Index i = 0; i < ds.n(); ++i) {
    out << ds.y(i);
    for (Index c = 0; c < ds.p_d(); ++c) out << ',' << ds.d(i, c);
    for (Index c = 0; c < ds.p_x(); ++c) out << ',' << ds.x(i, c);
    for (Index c = 0; c < ds.p_w(); ++c) out << ',' << ds.w(i, c);
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_csv(out, ds);
}

// T = [1, D, X] and Z = [1, W, X].
struct DesignPair {
  Matrix t;
  Matrix z;
};

inline DesignPair design_matrices(const Dataset& ds) {
  DesignPair pair;
  pair.t = hcat(hcat(ones_column(ds.n()), ds.d), ds.x);
  pair.z = hcat(hcat(ones_column(ds.n()), ds.w), ds.x);
  return pair;
}

// K disjoint folds covering 0..n-1.
struct FoldAssignment {
  std::vector<IndexList> folds;
  std::uint64_t seed = 0;

  std::size_t k() const { return folds.size(); }

  Index n() const {
    Index total = 0;
    for (const auto& f : folds) total += static_cast<Index>(f.size());
    return total;
  }

  std::vector<int> fold_of() const {
    std::vector<int> out(static_cast<std::size_t>(n()), -1);
    for (std::size_t j = 0; j < folds.size(); ++j)
      for (Index i : folds[j]) out[static_cast<std::size_t>(i)] = static_cast<int>(j);
    return out;
  }

  // S_{-j}, ascending.
  IndexList complement(std::size_t j) const {
    IndexList out;
    for (std::size_t other = 0; other < folds.size(); ++other)
      if (other != j) out.insert(out.end(), folds[other].begin(), folds[other].end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

namespace detail {

// Unbiased draw from [0, bound) by rejection; stable across standard libraries.
inline std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v = 0;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

}  // namespace detail

// Seeded uniform permutation cut into K contiguous blocks; the n mod K
// leftover observations go to the lowest-index folds.
inline FoldAssignment make_folds(Index n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InputError("number of folds must be at least 2");
  if (static_cast<Index>(k) > n) throw InputError("number of folds exceeds number of observations");
  IndexList perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(mix_seed(seed));
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(detail::bounded_draw(rng, i + 1));
    std::swap(perm[i], perm[j]);
  }
  FoldAssignment fa;
  fa.seed = seed;
  const std::size_t base = static_cast<std::size_t>(n) / k;
  const std::size_t extra = static_cast<std::size_t>(n) % k;
  std::size_t pos = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t size = base + (j < extra ? 1 : 0);
    IndexList fold(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                   perm.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(fold.begin(), fold.end());
    fa.folds.push_back(std::move(fold));
    pos += size;
  }
  return fa;
}

// Train/evaluate row sets for cross-fitting. Full-sample mode trains and
// evaluates on every row (no splitting).
struct CrossFitPlan {
  std::vector<IndexList> train;
  std::vector<IndexList> eval;

  std::size_t size() const { return eval.size(); }

  static CrossFitPlan from_folds(const FoldAssignment& fa) {
    CrossFitPlan plan;
    for (std::size_t j = 0; j < fa.k(); ++j) {
      plan.train.push_back(fa.complement(j));
      plan.eval.push_back(fa.folds[j]);
    }
    return plan;
  }

  static CrossFitPlan full_sample(Index n) {
    IndexList all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index{0});
    CrossFitPlan plan;
    plan.train.push_back(all);
    plan.eval.push_back(std::move(all));
    return plan;
  }
};

}  // namespace mlss
