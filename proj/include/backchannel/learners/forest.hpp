#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "backchannel/learners/model.hpp"

namespace bc::learners {

struct ForestParams {
  int trees = 100;
  int max_depth = 0;  // 0: unlimited
  int min_samples_split = 2;
  int max_features = 0;  // 0: floor(sqrt(dim))
  bool bootstrap = true;
};

/// Gini decision tree in flat arrays; `feature < 0` marks a leaf whose class
/// distribution lives at dist[node * classes ...].
struct DecisionTree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left, right;
  std::vector<double> dist;

  const double* leaf_distribution(const std::vector<double>& x, std::size_t classes) const {
    std::size_t node = 0;
    while (feature[node] >= 0)
      node = static_cast<std::size_t>(x[static_cast<std::size_t>(feature[node])] <= threshold[node] ? left[node]
                                                                                                   : right[node]);
    return dist.data() + node * classes;
  }
};

namespace detail {

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double score = -1.0;  // sum over children of sum_c n_c^2 / n (higher is purer)
};

class TreeBuilder {
 public:
  /// `columns` is the training matrix in feature-major order (n rows, dim features).
  TreeBuilder(const std::vector<double>& columns, std::size_t n, std::size_t dim, const std::vector<int>& y,
              std::size_t classes, const ForestParams& p, Rng& rng)
      : columns_(columns), n_(n), dim_(dim), y_(y), classes_(classes), params_(p), rng_(rng) {
    mtry_ = p.max_features > 0 ? static_cast<std::size_t>(p.max_features)
                               : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(dim))));
    mtry_ = std::min(mtry_, dim);
  }

  DecisionTree build(std::vector<std::size_t> samples) {
    samples_ = std::move(samples);
    struct Pending {
      std::size_t node, begin, end;
      int depth;
    };
    std::vector<Pending> stack;
    stack.push_back({new_node(), 0, samples_.size(), 0});
    while (!stack.empty()) {
      const Pending job = stack.back();
      stack.pop_back();
      std::vector<double> counts(classes_, 0.0);
      for (std::size_t i = job.begin; i < job.end; ++i) counts[static_cast<std::size_t>(y_[samples_[i]])] += 1.0;
      const std::size_t n = job.end - job.begin;
      const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;
      const bool depth_cap = params_.max_depth > 0 && job.depth >= params_.max_depth;
      SplitChoice split;
      if (!pure && !depth_cap && n >= static_cast<std::size_t>(std::max(2, params_.min_samples_split)))
        split = best_split(job.begin, job.end);
      if (split.feature < 0) {
        for (std::size_t c = 0; c < classes_; ++c)
          tree_.dist[job.node * classes_ + c] = counts[c] / static_cast<double>(n);
        continue;
      }
      const auto f = static_cast<std::size_t>(split.feature);
      const double* column = columns_.data() + f * n_;
      auto mid = std::stable_partition(samples_.begin() + static_cast<long>(job.begin),
                                       samples_.begin() + static_cast<long>(job.end),
                                       [&](std::size_t i) { return column[i] <= split.threshold; });
      const auto m = static_cast<std::size_t>(mid - samples_.begin());
      tree_.feature[job.node] = split.feature;
      tree_.threshold[job.node] = split.threshold;
      const std::size_t l = new_node(), r = new_node();
      tree_.left[job.node] = static_cast<int>(l);
      tree_.right[job.node] = static_cast<int>(r);
      stack.push_back({r, m, job.end, job.depth + 1});
      stack.push_back({l, job.begin, m, job.depth + 1});
    }
    return std::move(tree_);
  }

 private:
  std::size_t new_node() {
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.dist.insert(tree_.dist.end(), classes_, 0.0);
    return tree_.feature.size() - 1;
  }

  /// Visits features in random order; at least `mtry_` are inspected and the
  /// search continues past that until some valid split exists.
  SplitChoice best_split(std::size_t begin, std::size_t end) {
    const std::size_t dim = dim_;
    std::vector<std::size_t> order(dim);
    std::iota(order.begin(), order.end(), 0);
    rng_.shuffle(order);
    SplitChoice best;
    const std::size_t n = end - begin;
    std::vector<std::pair<double, int>> col(n);
    std::vector<double> total(classes_, 0.0);
    for (std::size_t i = begin; i < end; ++i) total[static_cast<std::size_t>(y_[samples_[i]])] += 1.0;
    std::vector<double> lc(classes_);
    for (std::size_t visited = 0; visited < dim; ++visited) {
      if (visited >= mtry_ && best.feature >= 0) break;
      const std::size_t f = order[visited];
      const double* column = columns_.data() + f * n_;
      for (std::size_t i = 0; i < n; ++i) col[i] = {column[samples_[begin + i]], y_[samples_[begin + i]]};
      std::sort(col.begin(), col.end());
      if (col.front().first == col.back().first) continue;
      std::fill(lc.begin(), lc.end(), 0.0);
      for (std::size_t j = 0; j + 1 < n; ++j) {
        lc[static_cast<std::size_t>(col[j].second)] += 1.0;
        if (col[j].first == col[j + 1].first) continue;
        const auto nl = static_cast<double>(j + 1), nr = static_cast<double>(n - j - 1);
        double sl = 0.0, sr = 0.0;
        for (std::size_t c = 0; c < classes_; ++c) {
          sl += lc[c] * lc[c];
          const double rc = total[c] - lc[c];
          sr += rc * rc;
        }
        const double score = sl / nl + sr / nr;
        if (score > best.score) {
          best.score = score;
          best.feature = static_cast<int>(f);
          const double a = col[j].first, b = col[j + 1].first;
          double thr = a + (b - a) / 2.0;
          if (!(thr >= a && thr < b)) thr = a;
          best.threshold = thr;
        }
      }
    }
    return best;
  }

  const std::vector<double>& columns_;
  std::size_t n_;
  std::size_t dim_;
  const std::vector<int>& y_;
  std::size_t classes_;
  ForestParams params_;
  Rng& rng_;
  std::size_t mtry_ = 1;
  std::vector<std::size_t> samples_;
  DecisionTree tree_;
};

}  // namespace detail

class ForestModel final : public Model {
 public:
  ForestModel(std::size_t classes, std::size_t dim, std::vector<DecisionTree> trees)
      : classes_(classes), dim_(dim), trees_(std::move(trees)) {}

  static std::shared_ptr<ForestModel> fit(const ForestParams& p, const std::vector<Example>& X,
                                          const std::vector<int>& y, std::size_t classes, std::uint64_t seed) {
    check_training_set(X, y, classes);
    if (p.trees < 1) throw ConfigError("random_forest needs at least one tree");
    const auto pts = vectors_of(X);
    const std::size_t n = pts.size(), dim = pts.front().size();
    std::vector<double> columns(n * dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < dim; ++f) columns[f * n + i] = pts[i][f];
    Rng rng(seed);
    std::vector<DecisionTree> trees;
    trees.reserve(static_cast<std::size_t>(p.trees));
    for (int t = 0; t < p.trees; ++t) {
      std::vector<std::size_t> sample(pts.size());
      if (p.bootstrap)
        for (auto& s : sample) s = rng.index(pts.size());
      else
        std::iota(sample.begin(), sample.end(), 0);
      detail::TreeBuilder builder(columns, n, dim, y, classes, p, rng);
      trees.push_back(builder.build(std::move(sample)));
    }
    return std::make_shared<ForestModel>(classes, pts.front().size(), std::move(trees));
  }

  /// Mean of the per-tree leaf distributions.
  std::vector<double> predict_proba(const Example& e) const override {
    check_dimension(e, dim_);
    std::vector<double> p(classes_, 0.0);
    for (const auto& t : trees_) {
      const double* d = t.leaf_distribution(e.x, classes_);
      for (std::size_t c = 0; c < classes_; ++c) p[c] += d[c];
    }
    for (double& v : p) v /= static_cast<double>(trees_.size());
    return p;
  }

  const std::vector<DecisionTree>& trees() const { return trees_; }

  void save(ArchiveWriter& out) const override {
    out.put_int("dim", static_cast<long long>(dim_));
    out.put_int("trees", static_cast<long long>(trees_.size()));
    for (const auto& t : trees_) {
      out.put("feature", t.feature);
      out.put("threshold", t.threshold);
      out.put("left", t.left);
      out.put("right", t.right);
      out.put("dist", t.dist);
    }
  }

  static std::shared_ptr<ForestModel> load(ArchiveReader& in, std::size_t classes) {
    const auto dim = static_cast<std::size_t>(in.get_int("dim"));
    const auto n = static_cast<std::size_t>(in.get_int("trees"));
    std::vector<DecisionTree> trees(n);
    for (auto& t : trees) {
      t.feature = in.get_ints("feature");
      t.threshold = in.get_vector("threshold");
      t.left = in.get_ints("left");
      t.right = in.get_ints("right");
      t.dist = in.get_vector("dist");
    }
    return std::make_shared<ForestModel>(classes, dim, std::move(trees));
  }

 private:
  std::size_t classes_;
  std::size_t dim_;
  std::vector<DecisionTree> trees_;
};

}  // namespace bc::learners
