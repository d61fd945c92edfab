#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "backchannel/learners/model.hpp"

namespace bc::learners {

struct AdaBoostParams {
  int rounds = 100;
};

/// Decision stump: x[feature] <= threshold predicts `left_class`, otherwise
/// `right_class`. feature < 0 is a constant predictor.
struct Stump {
  int feature = -1;
  double threshold = 0.0;
  int left_class = 0;
  int right_class = 0;
  double alpha = 0.0;

  int predict(const std::vector<double>& x) const {
    if (feature < 0) return left_class;
    return x[static_cast<std::size_t>(feature)] <= threshold ? left_class : right_class;
  }
};

/// Multi-class boosting of stumps with SAMME weights. Class scores are the
/// alpha-weighted vote sums; probabilities are their softmax.
class AdaBoostModel final : public Model {
 public:
  static constexpr double kMinError = 1e-10;

  AdaBoostModel(std::size_t classes, std::size_t dim, std::vector<Stump> stumps)
      : classes_(classes), dim_(dim), stumps_(std::move(stumps)) {}

  static std::shared_ptr<AdaBoostModel> fit(const AdaBoostParams& p, const std::vector<Example>& X,
                                            const std::vector<int>& y, std::size_t classes) {
    check_training_set(X, y, classes);
    if (p.rounds < 1) throw ConfigError("adaboost needs at least one round");
    const std::size_t n = X.size(), dim = X.front().x.size();
    const auto K = static_cast<double>(classes);

    std::vector<std::vector<std::size_t>> sorted(dim);
    for (std::size_t f = 0; f < dim; ++f) {
      auto& idx = sorted[f];
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return X[a].x[f] < X[b].x[f]; });
    }

    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    std::vector<Stump> stumps;
    for (int round = 0; round < p.rounds; ++round) {
      Stump s = best_stump(X, y, classes, sorted, w);
      double err = 0.0, total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        total += w[i];
        if (s.predict(X[i].x) != y[i]) err += w[i];
      }
      err /= total;
      if (err >= 1.0 - 1.0 / K) {
        if (stumps.empty()) stumps.push_back(s);
        break;
      }
      const bool perfect = err <= 0.0;
      const double e = std::max(err, kMinError);
      s.alpha = std::log((1.0 - e) / e) + std::log(K - 1.0);
      stumps.push_back(s);
      if (perfect) break;
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (s.predict(X[i].x) != y[i]) w[i] *= std::exp(s.alpha);
        sum += w[i];
      }
      for (double& v : w) v /= sum;
    }
    return std::make_shared<AdaBoostModel>(classes, dim, std::move(stumps));
  }

  std::vector<double> scores(const Example& e) const {
    check_dimension(e, dim_);
    std::vector<double> s(classes_, 0.0);
    for (const auto& st : stumps_) s[static_cast<std::size_t>(st.predict(e.x))] += st.alpha;
    return s;
  }

  std::vector<double> predict_proba(const Example& e) const override { return softmax(scores(e)); }

  const std::vector<Stump>& stumps() const { return stumps_; }

  void save(ArchiveWriter& out) const override {
    out.put_int("dim", static_cast<long long>(dim_));
    out.put_int("stumps", static_cast<long long>(stumps_.size()));
    for (const auto& s : stumps_) {
      out.put("stump", std::vector<double>{static_cast<double>(s.feature), s.threshold,
                                           static_cast<double>(s.left_class),
                                           static_cast<double>(s.right_class), s.alpha});
    }
  }

  static std::shared_ptr<AdaBoostModel> load(ArchiveReader& in, std::size_t classes) {
    const auto dim = static_cast<std::size_t>(in.get_int("dim"));
    const auto n = static_cast<std::size_t>(in.get_int("stumps"));
    std::vector<Stump> stumps(n);
    for (auto& s : stumps) {
      auto v = in.get_vector("stump");
      if (v.size() != 5) throw DataError("model archive: malformed stump");
      s = {static_cast<int>(v[0]), v[1], static_cast<int>(v[2]), static_cast<int>(v[3]), v[4]};
    }
    return std::make_shared<AdaBoostModel>(classes, dim, std::move(stumps));
  }

 private:
  /// Minimum weighted-error stump over all features and thresholds; the
  /// first minimum in (feature, position) order wins.
  static Stump best_stump(const std::vector<Example>& X, const std::vector<int>& y, std::size_t classes,
                          const std::vector<std::vector<std::size_t>>& sorted, const std::vector<double>& w) {
    std::vector<double> total(classes, 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) total[static_cast<std::size_t>(y[i])] += w[i];
    Stump best;
    best.left_class = best.right_class = argmax(total);
    double best_correct = total[static_cast<std::size_t>(best.left_class)];
    std::vector<double> left(classes), right(classes);
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      const auto& idx = sorted[f];
      std::fill(left.begin(), left.end(), 0.0);
      for (std::size_t j = 0; j + 1 < idx.size(); ++j) {
        left[static_cast<std::size_t>(y[idx[j]])] += w[idx[j]];
        const double a = X[idx[j]].x[f], b = X[idx[j + 1]].x[f];
        if (a == b) continue;
        for (std::size_t c = 0; c < classes; ++c) right[c] = total[c] - left[c];
        const int lc = argmax(left), rc = argmax(right);
        const double correct = left[static_cast<std::size_t>(lc)] + right[static_cast<std::size_t>(rc)];
        if (correct > best_correct * (1.0 + 1e-12)) {
          best_correct = correct;
          double thr = a + (b - a) / 2.0;
          if (!(thr >= a && thr < b)) thr = a;
          best = {static_cast<int>(f), thr, lc, rc, 0.0};
        }
      }
    }
    return best;
  }

  std::size_t classes_;
  std::size_t dim_;
  std::vector<Stump> stumps_;
};

}  // namespace bc::learners
