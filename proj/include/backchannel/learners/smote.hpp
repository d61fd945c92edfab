#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "backchannel/learners/knn.hpp"
#include "backchannel/learners/model.hpp"

namespace bc::learners {

struct SmoteParams {
  int k = 5;
  /// Classes with a single sample are upsampled by duplication instead of
  /// raising an error.
  bool allow_duplication = false;
};

/// How a synthetic row was made: x = X[base] + lambda * (X[neighbor] - X[base]).
struct SyntheticOrigin {
  std::size_t base = 0;
  std::size_t neighbor = 0;
  double lambda = 0.0;
};

struct SmoteResult {
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  std::vector<SyntheticOrigin> origins;  // one per row after the originals
};

/// Upsamples every class to the majority count. Original rows come first and
/// unchanged; synthetic rows follow in class order.
inline SmoteResult smote(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                         const SmoteParams& p, std::uint64_t seed) {
  if (X.size() != y.size()) throw DataError("smote: examples/labels size mismatch");
  if (p.k < 1) throw ConfigError("smote needs k >= 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
  std::size_t majority = 0;
  for (const auto& [c, idx] : by_class) majority = std::max(majority, idx.size());

  SmoteResult out{X, y, {}};
  Rng rng(seed);
  for (const auto& [c, idx] : by_class) {
    if (idx.size() == majority) continue;
    const std::size_t need = majority - idx.size();
    if (idx.size() == 1 && !p.allow_duplication)
      throw DataError(fmt::format(
          "smote: class {} has a single sample; enable duplication fallback to upsample it", c));
    std::vector<std::vector<double>> members;
    for (std::size_t i : idx) members.push_back(X[i]);
    const std::size_t k = std::min(static_cast<std::size_t>(p.k), idx.size() - 1);
    std::vector<std::vector<std::size_t>> nn(idx.size());
    for (std::size_t a = 0; a < idx.size() && k > 0; ++a) nn[a] = nearest_neighbors(members, members[a], k, a);
    for (std::size_t s = 0; s < need; ++s) {
      const std::size_t a = rng.index(idx.size());
      const std::size_t b = k > 0 ? nn[a][rng.index(k)] : a;
      const double lambda = rng.uniform();
      std::vector<double> row(members[a].size());
      for (std::size_t d = 0; d < row.size(); ++d) row[d] = members[a][d] + lambda * (members[b][d] - members[a][d]);
      out.X.push_back(std::move(row));
      out.y.push_back(c);
      out.origins.push_back({idx[a], idx[b], lambda});
    }
  }
  return out;
}

}  // namespace bc::learners
