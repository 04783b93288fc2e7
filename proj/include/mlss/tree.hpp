#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mlss/common.hpp"
#include "mlss/data.hpp"

namespace mlss {

struct TreeParams {
  int max_depth = 3;
  double min_leaf = 5.0;     // minimum total weight per leaf
  Index max_features = 0;    // features tried per split; 0 = all
};

// Axis-aligned regression tree; rows with x[feature] <= threshold go left.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int at = 0;
    while (nodes_[static_cast<std::size_t>(at)].feature >= 0) {
      const Node& nd = nodes_[static_cast<std::size_t>(at)];
      at = row(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(at)].value;
  }

  Vector predict(const Matrix& x) const {
    Vector out(x.rows());
    for (Index i = 0; i < x.rows(); ++i) out(i) = predict_row(x.row(i));
    return out;
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const Node& nd) { return nd.feature < 0; }));
  }

  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  friend class TreeBuilder;
  std::vector<Node> nodes_;
};

// Row orderings by each feature, computed once per training matrix and
// shared by every tree grown on it.
struct PresortedFeatures {
  std::vector<IndexList> order;

  explicit PresortedFeatures(const Matrix& x) {
    order.resize(static_cast<std::size_t>(x.cols()));
    for (Index f = 0; f < x.cols(); ++f) {
      auto& o = order[static_cast<std::size_t>(f)];
      o.resize(static_cast<std::size_t>(x.rows()));
      std::iota(o.begin(), o.end(), Index{0});
      std::stable_sort(o.begin(), o.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
    }
  }
};

// Exact greedy CART growth on squared loss with row weights. Ties between
// candidate splits keep the lowest feature index, then the lowest threshold.
class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const PresortedFeatures& sorted, TreeParams params)
      : x_(x), sorted_(sorted), params_(params), go_left_(static_cast<std::size_t>(x.rows()), 0) {}

  RegressionTree grow(const Vector& target, const Vector& weight, std::mt19937_64* rng = nullptr) {
    target_ = &target;
    weight_ = &weight;
    rng_ = rng;
    RegressionTree tree;
    tree_ = &tree;
    std::vector<IndexList> lists(sorted_.order.size());
    for (std::size_t f = 0; f < lists.size(); ++f) {
      lists[f].reserve(sorted_.order[f].size());
      for (Index i : sorted_.order[f])
        if (weight(i) > 0.0) lists[f].push_back(i);
    }
    if (lists.empty()) {
      // No features: single leaf.
      double sw = 0.0, sy = 0.0;
      for (Index i = 0; i < target.size(); ++i) {
        sw += weight(i);
        sy += weight(i) * target(i);
      }
      tree.nodes_.push_back({-1, 0.0, -1, -1, sw > 0.0 ? sy / sw : 0.0});
      return tree;
    }
    build(std::move(lists), 0);
    return tree;
  }

 private:
  int build(std::vector<IndexList> lists, int depth) {
    const IndexList& rows = lists.front();
    double sw = 0.0, sy = 0.0, syy = 0.0;
    for (Index i : rows) {
      const double w = (*weight_)(i);
      const double y = (*target_)(i);
      sw += w;
      sy += w * y;
      syy += w * y * y;
    }
    const int id = static_cast<int>(tree_->nodes_.size());
    tree_->nodes_.push_back({-1, 0.0, -1, -1, sw > 0.0 ? sy / sw : 0.0});
    if (depth >= params_.max_depth || sw < 2.0 * params_.min_leaf) return id;

    const double parent = sy * sy / sw;
    const double min_gain = 1e-12 * std::max(1.0, syy);
    double best_gain = min_gain;
    int best_feature = -1;
    double best_threshold = 0.0;
    for (Index f : candidate_features()) {
      const IndexList& list = lists[static_cast<std::size_t>(f)];
      double lw = 0.0, ly = 0.0;
      for (std::size_t k = 0; k + 1 < list.size(); ++k) {
        const Index a = list[k];
        lw += (*weight_)(a);
        ly += (*weight_)(a) * (*target_)(a);
        const double xa = x_(a, f);
        const double xb = x_(list[k + 1], f);
        if (!(xa < xb)) continue;
        const double rw = sw - lw;
        if (lw < params_.min_leaf || rw < params_.min_leaf) continue;
        const double ry = sy - ly;
        const double gain = ly * ly / lw + ry * ry / rw - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          double mid = 0.5 * (xa + xb);
          if (!(mid < xb)) mid = xa;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0) return id;

    for (Index i : rows) go_left_[static_cast<std::size_t>(i)] = x_(i, best_feature) <= best_threshold ? 1 : 0;
    std::vector<IndexList> left(lists.size()), right(lists.size());
    for (std::size_t f = 0; f < lists.size(); ++f) {
      for (Index i : lists[f]) (go_left_[static_cast<std::size_t>(i)] ? left[f] : right[f]).push_back(i);
    }
    lists.clear();
    lists.shrink_to_fit();
    const int l = build(std::move(left), depth + 1);
    const int r = build(std::move(right), depth + 1);
    auto& nd = tree_->nodes_[static_cast<std::size_t>(id)];
    nd.feature = best_feature;
    nd.threshold = best_threshold;
    nd.left = l;
    nd.right = r;
    return id;
  }

  IndexList candidate_features() {
    const Index q = x_.cols();
    IndexList all(static_cast<std::size_t>(q));
    std::iota(all.begin(), all.end(), Index{0});
    if (params_.max_features <= 0 || params_.max_features >= q || rng_ == nullptr) return all;
    for (Index k = 0; k < params_.max_features; ++k) {
      const auto pick = static_cast<Index>(detail::bounded_draw(*rng_, static_cast<std::uint64_t>(q - k)));
      std::swap(all[static_cast<std::size_t>(k)], all[static_cast<std::size_t>(k + pick)]);
    }
    all.resize(static_cast<std::size_t>(params_.max_features));
    std::sort(all.begin(), all.end());
    return all;
  }

  const Matrix& x_;
  const PresortedFeatures& sorted_;
  TreeParams params_;
  std::vector<char> go_left_;
  const Vector* target_ = nullptr;
  const Vector* weight_ = nullptr;
  std::mt19937_64* rng_ = nullptr;
  RegressionTree* tree_ = nullptr;
};

}  // namespace mlss
