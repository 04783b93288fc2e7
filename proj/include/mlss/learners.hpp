#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "mlss/common.hpp"
#include "mlss/features.hpp"
#include "mlss/linalg.hpp"
#include "mlss/tree.hpp"

namespace mlss {

enum class LearnerKind { ols, polynomial, discretized, random_forest, gradient_boosting, oracle };

inline std::string to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::ols: return "ols";
    case LearnerKind::polynomial: return "polynomial";
    case LearnerKind::discretized: return "discretized";
    case LearnerKind::random_forest: return "random_forest";
    case LearnerKind::gradient_boosting: return "gradient_boosting";
    case LearnerKind::oracle: return "oracle";
  }
  return "ols";
}

inline LearnerKind learner_kind_from_string(const std::string& s) {
  if (s == "ols") return LearnerKind::ols;
  if (s == "polynomial") return LearnerKind::polynomial;
  if (s == "discretized") return LearnerKind::discretized;
  if (s == "random_forest") return LearnerKind::random_forest;
  if (s == "gradient_boosting") return LearnerKind::gradient_boosting;
  if (s == "oracle") return LearnerKind::oracle;
  throw InputError("unknown learner kind '" + s +
                   "' (valid: ols, polynomial, discretized, random_forest, gradient_boosting, oracle)");
}

struct PolynomialParams {
  int degree = 2;
  bool interactions = false;
};

struct DiscretizedParams {
  std::vector<double> thresholds{-1.0, 0.0, 1.0};
};

struct ForestParams {
  int n_trees = 200;
  int max_depth = 8;
  double min_leaf = 5.0;
  int max_features = 0;  // 0 -> round(sqrt(q))
  bool bootstrap = true;
};

struct BoostingParams {
  int n_trees = 200;
  int max_depth = 3;
  double learning_rate = 0.1;
  double min_leaf = 5.0;
};

// Maps an m x q feature matrix to the m x r matrix of true conditional means.
using TruthFunction = std::function<Matrix(const Matrix&)>;

struct LearnerSpec {
  LearnerKind kind = LearnerKind::gradient_boosting;
  PolynomialParams polynomial;
  DiscretizedParams discretized;
  ForestParams forest;
  BoostingParams boosting;
  TruthFunction truth;  // oracle only
  std::uint64_t seed = 0;

  static LearnerSpec ols() { return of(LearnerKind::ols); }
  static LearnerSpec poly(int degree, bool interactions) {
    LearnerSpec s = of(LearnerKind::polynomial);
    s.polynomial = {degree, interactions};
    return s;
  }
  static LearnerSpec cells(std::vector<double> thresholds = {-1.0, 0.0, 1.0}) {
    LearnerSpec s = of(LearnerKind::discretized);
    s.discretized.thresholds = std::move(thresholds);
    return s;
  }
  static LearnerSpec forest_default() { return of(LearnerKind::random_forest); }
  static LearnerSpec boosting_default() { return of(LearnerKind::gradient_boosting); }
  static LearnerSpec oracle(TruthFunction f) {
    LearnerSpec s = of(LearnerKind::oracle);
    s.truth = std::move(f);
    return s;
  }

  void validate() const {
    switch (kind) {
      case LearnerKind::ols: break;
      case LearnerKind::polynomial:
        if (polynomial.degree < 1 || polynomial.degree > 3)
          throw InputError("polynomial degree must be 1, 2 or 3");
        break;
      case LearnerKind::discretized:
        for (std::size_t k = 1; k < discretized.thresholds.size(); ++k)
          if (!(discretized.thresholds[k - 1] < discretized.thresholds[k]))
            throw InputError("discretized thresholds must be strictly increasing");
        break;
      case LearnerKind::random_forest:
        if (forest.n_trees < 1) throw InputError("random_forest n_trees must be >= 1");
        if (forest.max_depth < 0) throw InputError("random_forest max_depth must be >= 0");
        if (!(forest.min_leaf >= 1.0)) throw InputError("random_forest min_leaf must be >= 1");
        if (forest.max_features < 0) throw InputError("random_forest max_features must be >= 0");
        break;
      case LearnerKind::gradient_boosting:
        if (boosting.n_trees < 0) throw InputError("gradient_boosting n_trees must be >= 0");
        if (boosting.max_depth < 0) throw InputError("gradient_boosting max_depth must be >= 0");
        if (!(boosting.learning_rate > 0.0 && boosting.learning_rate <= 1.0))
          throw InputError("gradient_boosting learning_rate must be in (0, 1]");
        if (!(boosting.min_leaf >= 1.0)) throw InputError("gradient_boosting min_leaf must be >= 1");
        break;
      case LearnerKind::oracle:
        if (!truth) throw InputError("oracle learner requires a truth function");
        break;
    }
  }

 private:
  static LearnerSpec of(LearnerKind k) {
    LearnerSpec s;
    s.kind = k;
    return s;
  }
};

namespace model {

struct Constant {
  double value = 0.0;
};

// Least squares on [1, phi(x)] with phi the identity or a polynomial map.
struct Linear {
  int degree = 1;
  bool interactions = false;
  Vector coef;
};

struct CellMeans {
  std::vector<double> thresholds;
  std::vector<double> means;  // NaN for cells without training rows
  double global_mean = 0.0;
};

struct Forest {
  std::vector<RegressionTree> trees;
};

struct Boosting {
  double base = 0.0;
  double learning_rate = 0.1;
  std::vector<RegressionTree> trees;
};

using Any = std::variant<Constant, Linear, CellMeans, Forest, Boosting>;

}  // namespace model

// A fitted learner: r independent single-output models over q features.
class Predictor {
 public:
  LearnerKind kind() const { return kind_; }
  Index feature_dim() const { return feature_dim_; }
  Index target_dim() const { return target_dim_; }
  const Warnings& warnings() const { return warnings_; }

  Matrix predict(const Matrix& features) const {
    if (features.cols() != feature_dim_)
      throw InputError("predict: expected " + std::to_string(feature_dim_) + " feature columns, got " +
                       std::to_string(features.cols()));
    if (truth_) {
      Matrix out = truth_(features);
      if (out.rows() != features.rows() || out.cols() != target_dim_)
        throw InputError("oracle truth returned a " + std::to_string(out.rows()) + "x" +
                         std::to_string(out.cols()) + " matrix, expected " + std::to_string(features.rows()) +
                         "x" + std::to_string(target_dim_));
      return out;
    }
    Matrix out(features.rows(), target_dim_);
    for (Index r = 0; r < target_dim_; ++r) out.col(r) = predict_output(models_[static_cast<std::size_t>(r)], features);
    return out;
  }

  // Per-tree predictions of output `r` for forest models (m x n_trees).
  Matrix per_tree_predictions(const Matrix& features, Index r = 0) const {
    const auto* forest = std::get_if<model::Forest>(&models_.at(static_cast<std::size_t>(r)));
    if (forest == nullptr) throw InputError("per_tree_predictions: output is not a forest model");
    Matrix out(features.rows(), static_cast<Index>(forest->trees.size()));
    for (std::size_t t = 0; t < forest->trees.size(); ++t) out.col(static_cast<Index>(t)) = forest->trees[t].predict(features);
    return out;
  }

  // Predictions of output `r` using only the first `trees` boosting rounds.
  Vector predict_staged(const Matrix& features, std::size_t trees, Index r = 0) const {
    const auto* boost = std::get_if<model::Boosting>(&models_.at(static_cast<std::size_t>(r)));
    if (boost == nullptr) throw InputError("predict_staged: output is not a boosting model");
    Vector out = Vector::Constant(features.rows(), boost->base);
    for (std::size_t t = 0; t < std::min(trees, boost->trees.size()); ++t)
      out += boost->learning_rate * boost->trees[t].predict(features);
    return out;
  }

 private:
  friend Predictor fit(const LearnerSpec&, const Matrix&, const Matrix&);

  static Vector predict_output(const model::Any& m, const Matrix& x) {
    return std::visit(
        [&](const auto& mm) -> Vector {
          using T = std::decay_t<decltype(mm)>;
          if constexpr (std::is_same_v<T, model::Constant>) {
            return Vector::Constant(x.rows(), mm.value);
          } else if constexpr (std::is_same_v<T, model::Linear>) {
            const Matrix phi = mm.degree == 1 ? x : polynomial_expand(x, mm.degree, mm.interactions);
            return mm.coef(0) + (phi * mm.coef.tail(mm.coef.size() - 1)).array();
          } else if constexpr (std::is_same_v<T, model::CellMeans>) {
            Vector out(x.rows());
            for (Index i = 0; i < x.rows(); ++i) {
              const double v = mm.means[static_cast<std::size_t>(cell_of(x.row(i), mm.thresholds))];
              out(i) = std::isnan(v) ? mm.global_mean : v;
            }
            return out;
          } else if constexpr (std::is_same_v<T, model::Forest>) {
            Vector out = Vector::Zero(x.rows());
            for (const auto& tree : mm.trees) out += tree.predict(x);
            return out / static_cast<double>(mm.trees.size());
          } else {
            Vector out = Vector::Constant(x.rows(), mm.base);
            for (const auto& tree : mm.trees) out += mm.learning_rate * tree.predict(x);
            return out;
          }
        },
        m);
  }

  LearnerKind kind_ = LearnerKind::ols;
  Index feature_dim_ = 0;
  Index target_dim_ = 0;
  std::vector<model::Any> models_;
  TruthFunction truth_;
  Warnings warnings_;
};

namespace detail {

inline model::Linear fit_linear(const Matrix& phi, const Vector& y, int degree, bool interactions, Warnings& warnings) {
  const Matrix design = hcat(ones_column(phi.rows()), phi);
  const LeastSquaresFit ls = least_squares(design, y);
  if (ls.ridge) warnings.push_back("rank-deficient design: ridge fallback used");
  return {degree, interactions, ls.coef.col(0)};
}

inline model::CellMeans fit_cells(const Matrix& x, const Vector& y, const std::vector<double>& thresholds) {
  model::CellMeans m;
  m.thresholds = thresholds;
  m.global_mean = y.mean();
  const Index cells = cell_count(x.cols(), thresholds);
  std::vector<double> sum(static_cast<std::size_t>(cells), 0.0);
  std::vector<double> count(static_cast<std::size_t>(cells), 0.0);
  for (Index i = 0; i < x.rows(); ++i) {
    const auto c = static_cast<std::size_t>(cell_of(x.row(i), thresholds));
    sum[c] += y(i);
    count[c] += 1.0;
  }
  m.means.resize(static_cast<std::size_t>(cells));
  for (std::size_t c = 0; c < m.means.size(); ++c)
    m.means[c] = count[c] > 0.0 ? sum[c] / count[c] : std::numeric_limits<double>::quiet_NaN();
  return m;
}

inline model::Forest fit_forest(const Matrix& x, const Vector& y, const ForestParams& p, std::uint64_t seed,
                                const PresortedFeatures& sorted) {
  TreeParams tp;
  tp.max_depth = p.max_depth;
  tp.min_leaf = p.min_leaf;
  tp.max_features = p.max_features > 0
                        ? static_cast<Index>(p.max_features)
                        : std::max<Index>(1, static_cast<Index>(std::lround(std::sqrt(static_cast<double>(x.cols())))));
  TreeBuilder builder(x, sorted, tp);
  model::Forest forest;
  forest.trees.reserve(static_cast<std::size_t>(p.n_trees));
  const Index m = x.rows();
  for (int t = 0; t < p.n_trees; ++t) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    Vector weight = Vector::Ones(m);
    if (p.bootstrap) {
      weight.setZero();
      for (Index k = 0; k < m; ++k) weight(static_cast<Index>(bounded_draw(rng, static_cast<std::uint64_t>(m)))) += 1.0;
    }
    forest.trees.push_back(builder.grow(y, weight, &rng));
  }
  return forest;
}

inline model::Boosting fit_boosting(const Matrix& x, const Vector& y, const BoostingParams& p,
                                    const PresortedFeatures& sorted) {
  TreeParams tp;
  tp.max_depth = p.max_depth;
  tp.min_leaf = p.min_leaf;
  TreeBuilder builder(x, sorted, tp);
  model::Boosting boost;
  boost.base = y.mean();
  boost.learning_rate = p.learning_rate;
  boost.trees.reserve(static_cast<std::size_t>(p.n_trees));
  Vector fitted = Vector::Constant(y.size(), boost.base);
  const Vector weight = Vector::Ones(y.size());
  for (int t = 0; t < p.n_trees; ++t) {
    const Vector residual = y - fitted;
    boost.trees.push_back(builder.grow(residual, weight));
    fitted += p.learning_rate * boost.trees.back().predict(x);
  }
  return boost;
}

}  // namespace detail

// Fits r = targets.cols() independent single-output models. Deterministic
// given (spec, data).
inline Predictor fit(const LearnerSpec& spec, const Matrix& features, const Matrix& targets) {
  spec.validate();
  if (features.rows() != targets.rows()) throw InputError("fit: features and targets have different row counts");
  if (features.rows() < 2) throw InputError("fit: need at least 2 training rows");
  if (targets.cols() < 1) throw InputError("fit: need at least one target column");
  if (!features.allFinite() || !targets.allFinite()) throw InputError("fit: non-finite training data");

  Predictor p;
  p.kind_ = spec.kind;
  p.feature_dim_ = features.cols();
  p.target_dim_ = targets.cols();
  if (spec.kind == LearnerKind::oracle) {
    p.truth_ = spec.truth;
    return p;
  }

  const bool tree_kind = spec.kind == LearnerKind::random_forest || spec.kind == LearnerKind::gradient_boosting;
  const double min_leaf = spec.kind == LearnerKind::random_forest ? spec.forest.min_leaf : spec.boosting.min_leaf;
  if (tree_kind && static_cast<double>(features.rows()) < min_leaf) {
    p.warnings_.push_back("fewer training rows than the minimum leaf size: constant (mean) predictor used");
    for (Index r = 0; r < targets.cols(); ++r) p.models_.emplace_back(model::Constant{targets.col(r).mean()});
    return p;
  }

  std::unique_ptr<PresortedFeatures> sorted;
  if (tree_kind) sorted = std::make_unique<PresortedFeatures>(features);
  Matrix phi;
  if (spec.kind == LearnerKind::polynomial)
    phi = polynomial_expand(features, spec.polynomial.degree, spec.polynomial.interactions);

  for (Index r = 0; r < targets.cols(); ++r) {
    const Vector y = targets.col(r);
    switch (spec.kind) {
      case LearnerKind::ols:
        p.models_.emplace_back(detail::fit_linear(features, y, 1, false, p.warnings_));
        break;
      case LearnerKind::polynomial:
        p.models_.emplace_back(
            detail::fit_linear(phi, y, spec.polynomial.degree, spec.polynomial.interactions, p.warnings_));
        break;
      case LearnerKind::discretized:
        p.models_.emplace_back(detail::fit_cells(features, y, spec.discretized.thresholds));
        break;
      case LearnerKind::random_forest:
        p.models_.emplace_back(detail::fit_forest(features, y, spec.forest, spec.seed, *sorted));
        break;
      case LearnerKind::gradient_boosting:
        p.models_.emplace_back(detail::fit_boosting(features, y, spec.boosting, *sorted));
        break;
      case LearnerKind::oracle: break;
    }
  }
  return p;
}

inline Matrix predict(const Predictor& p, const Matrix& features) { return p.predict(features); }

struct OosR2 {
  double value = 0.0;
  bool degenerate = false;  // zero hold-out variation around the training mean
};

// 1 - SSR / sum((actual - train_mean)^2); may be negative.
inline OosR2 oos_r2(const Vector& pred, const Vector& actual, double train_mean) {
  if (pred.size() != actual.size()) throw InputError("oos_r2: length mismatch");
  if (pred.size() < 1) throw InputError("oos_r2: empty input");
  const double num = (actual - pred).squaredNorm();
  const double den = (actual.array() - train_mean).square().sum();
  if (den == 0.0) {
    if (num == 0.0) return {0.0, true};
    return {-std::numeric_limits<double>::infinity(), true};
  }
  return {1.0 - num / den, false};
}

}  // namespace mlss
