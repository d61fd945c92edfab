#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "backchannel/learners/knn.hpp"
#include "backchannel/learners/model.hpp"

namespace bc::learners {

struct SpreadingParams {
  int k = 7;
  double alpha = 0.2;
  double tolerance = 1e-6;
  int max_iterations = 1000;
};

/// Graph-based propagation over a symmetric k-nearest-neighbor graph with
/// row-stochastic transitions: F <- alpha * S * F + (1 - alpha) * Y.
/// A query identical to a training point returns that point's propagated
/// distribution; other queries take the mean distribution of their k nearest
/// training points.
class SpreadingModel final : public Model {
 public:
  SpreadingModel(SpreadingParams p, std::size_t classes, features::StandardScaler scaler,
                 std::vector<std::vector<double>> points, std::vector<double> distributions)
      : params_(p), classes_(classes), scaler_(std::move(scaler)), points_(std::move(points)),
        dist_(std::move(distributions)) {}

  struct FitTrace {
    std::vector<double> deltas;  // max-norm change per iteration
    bool converged = false;
  };

  static std::shared_ptr<SpreadingModel> fit(const SpreadingParams& p, const std::vector<Example>& X,
                                             const std::vector<int>& y, std::size_t classes,
                                             FitTrace* trace = nullptr) {
    check_training_set(X, y, classes, true);
    if (p.k < 1) throw ConfigError("label_spreading needs k >= 1");
    if (!(p.alpha > 0.0 && p.alpha < 1.0)) throw ConfigError("label_spreading alpha must lie in (0, 1)");
    const std::size_t n = X.size();
    auto scaler = features::fit_scaler(vectors_of(X));
    std::vector<std::vector<double>> pts;
    pts.reserve(n);
    for (const auto& e : X) pts.push_back(scaler.apply(e.x));

    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j : nearest_neighbors(pts, pts[i], static_cast<std::size_t>(p.k), i)) {
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
    for (auto& a : adj) {
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
    }

    const std::size_t K = classes;
    std::vector<double> Y(n * K, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (y[i] != kUnlabeled) Y[i * K + static_cast<std::size_t>(y[i])] = 1.0;
    std::vector<double> F = Y, next(n * K);
    FitTrace local;
    for (int it = 0; it < p.max_iterations; ++it) {
      double delta = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = adj[i].empty() ? 0.0 : 1.0 / static_cast<double>(adj[i].size());
        for (std::size_t c = 0; c < K; ++c) {
          double s = 0.0;
          for (std::size_t j : adj[i]) s += F[j * K + c];
          const double v = p.alpha * w * s + (1.0 - p.alpha) * Y[i * K + c];
          delta = std::max(delta, std::abs(v - F[i * K + c]));
          next[i * K + c] = v;
        }
      }
      F.swap(next);
      local.deltas.push_back(delta);
      if (delta < p.tolerance) {
        local.converged = true;
        break;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < K; ++c) s += F[i * K + c];
      for (std::size_t c = 0; c < K; ++c) F[i * K + c] = s > 0.0 ? F[i * K + c] / s : 1.0 / static_cast<double>(K);
    }
    if (trace) *trace = std::move(local);
    return std::make_shared<SpreadingModel>(p, classes, std::move(scaler), std::move(pts), std::move(F));
  }

  /// Row-normalized propagated distribution of training point i.
  std::vector<double> label_distribution(std::size_t i) const {
    return {dist_.begin() + static_cast<long>(i * classes_), dist_.begin() + static_cast<long>((i + 1) * classes_)};
  }

  std::vector<double> predict_proba(const Example& e) const override {
    check_dimension(e, scaler_.dim());
    const auto q = scaler_.apply(e.x);
    const auto nn = nearest_neighbors(points_, q, static_cast<std::size_t>(params_.k));
    if (squared_distance(points_[nn.front()], q) == 0.0) return label_distribution(nn.front());
    std::vector<double> p(classes_, 0.0);
    for (std::size_t i : nn)
      for (std::size_t c = 0; c < classes_; ++c) p[c] += dist_[i * classes_ + c];
    for (double& v : p) v /= static_cast<double>(nn.size());
    return p;
  }

  void save(ArchiveWriter& out) const override {
    out.put_int("k", params_.k);
    out.put("alpha", params_.alpha);
    save_scaler(out, scaler_);
    out.put_int("points", static_cast<long long>(points_.size()));
    for (const auto& pt : points_) out.put("x", pt);
    out.put("distributions", dist_);
  }

  static std::shared_ptr<SpreadingModel> load(ArchiveReader& in, std::size_t classes) {
    SpreadingParams p;
    p.k = static_cast<int>(in.get_int("k"));
    p.alpha = in.get("alpha");
    auto scaler = load_scaler(in);
    const auto n = static_cast<std::size_t>(in.get_int("points"));
    std::vector<std::vector<double>> pts(n);
    for (auto& pt : pts) pt = in.get_vector("x");
    auto dist = in.get_vector("distributions");
    return std::make_shared<SpreadingModel>(p, classes, std::move(scaler), std::move(pts), std::move(dist));
  }

 private:
  SpreadingParams params_;
  std::size_t classes_;
  features::StandardScaler scaler_;
  std::vector<std::vector<double>> points_;
  std::vector<double> dist_;
};

}  // namespace bc::learners
