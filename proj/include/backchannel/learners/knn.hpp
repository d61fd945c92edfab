#pragma once

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "backchannel/learners/model.hpp"

namespace bc::learners {

struct KnnParams {
  int k = 5;
};

/// Indices of the k nearest rows of `points` to `q` (Euclidean), nearest
/// first; equal distances resolve to the lower index.
inline std::vector<std::size_t> nearest_neighbors(const std::vector<std::vector<double>>& points,
                                                  const std::vector<double>& q, std::size_t k,
                                                  std::size_t exclude = SIZE_MAX) {
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    if (i != exclude) d.emplace_back(squared_distance(points[i], q), i);
  k = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<long>(k), d.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = d[i].second;
  return out;
}

class KnnModel final : public Model {
 public:
  KnnModel(KnnParams p, std::size_t classes, features::StandardScaler scaler,
           std::vector<std::vector<double>> points, std::vector<int> labels)
      : params_(p), classes_(classes), scaler_(std::move(scaler)), points_(std::move(points)),
        labels_(std::move(labels)) {}

  static std::shared_ptr<KnnModel> fit(const KnnParams& p, const std::vector<Example>& X,
                                       const std::vector<int>& y, std::size_t classes) {
    check_training_set(X, y, classes);
    auto scaler = features::fit_scaler(vectors_of(X));
    std::vector<std::vector<double>> pts;
    pts.reserve(X.size());
    for (const auto& e : X) pts.push_back(scaler.apply(e.x));
    return std::make_shared<KnnModel>(p, classes, std::move(scaler), std::move(pts), y);
  }

  /// Vote fractions among the min(k, n) nearest training points.
  std::vector<double> predict_proba(const Example& e) const override {
    check_dimension(e, scaler_.dim());
    const auto q = scaler_.apply(e.x);
    const auto nn = nearest_neighbors(points_, q, static_cast<std::size_t>(params_.k));
    std::vector<double> p(classes_, 0.0);
    for (std::size_t i : nn) p[static_cast<std::size_t>(labels_[i])] += 1.0;
    for (double& v : p) v /= static_cast<double>(nn.size());
    return p;
  }

  void save(ArchiveWriter& out) const override {
    out.put_int("k", params_.k);
    save_scaler(out, scaler_);
    out.put_int("points", static_cast<long long>(points_.size()));
    for (const auto& pt : points_) out.put("x", pt);
    out.put("labels", labels_);
  }

  static std::shared_ptr<KnnModel> load(ArchiveReader& in, std::size_t classes) {
    KnnParams p;
    p.k = static_cast<int>(in.get_int("k"));
    auto scaler = load_scaler(in);
    const auto n = static_cast<std::size_t>(in.get_int("points"));
    std::vector<std::vector<double>> pts(n);
    for (auto& pt : pts) pt = in.get_vector("x");
    auto labels = in.get_ints("labels");
    return std::make_shared<KnnModel>(p, classes, std::move(scaler), std::move(pts), std::move(labels));
  }

 private:
  KnnParams params_;
  std::size_t classes_;
  features::StandardScaler scaler_;
  std::vector<std::vector<double>> points_;
  std::vector<int> labels_;
};

}  // namespace bc::learners
