#pragma once

// Splitting schemes, classification metrics, worst-case confusion and elbow
// selection.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "backchannel/core.hpp"

namespace bc::evaluation {

using Matrix = std::vector<std::vector<double>>;

// ---------------------------------------------------------------------------
// Splits

/// Random partition of [0, n) into k folds whose sizes differ by at most
/// one; each fold is ascending.
inline std::vector<std::vector<std::size_t>> kfold(std::size_t n, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("kfold needs k >= 1");
  const auto K = static_cast<std::size_t>(k);
  if (n < K) throw DataError(fmt::format("kfold: {} instances cannot fill {} folds", n, k));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> folds(K);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < K; ++f) {
    const std::size_t size = n / K + (f < n % K ? 1 : 0);
    folds[f].assign(perm.begin() + static_cast<long>(pos), perm.begin() + static_cast<long>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

using GroupAssignment = std::map<std::string, int>;

/// Round-robin over subjects ordered by instance count (descending, then id).
/// `subjects` holds one subject id per instance; `known_subjects` may add
/// subjects that have no instances.
inline GroupAssignment assign_groups(const std::vector<std::string>& subjects, int groups,
                                     const std::vector<std::string>& known_subjects = {}) {
  if (groups < 1) throw ConfigError("group count must be >= 1");
  std::map<std::string, std::size_t> count;
  for (const auto& s : known_subjects) count.emplace(s, 0);
  for (const auto& s : subjects) ++count[s];
  std::vector<std::pair<std::string, std::size_t>> order(count.begin(), count.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  GroupAssignment out;
  for (std::size_t i = 0; i < order.size(); ++i) out[order[i].first] = static_cast<int>(i % static_cast<std::size_t>(groups));
  return out;
}

/// Fold g holds the instances whose subject is in group g. Requires at least
/// two non-empty folds.
inline std::vector<std::vector<std::size_t>> group_kfold(const std::vector<std::string>& subjects,
                                                         const GroupAssignment& assignment) {
  int groups = 0;
  for (const auto& [s, g] : assignment) {
    if (g < 0) throw ConfigError(fmt::format("subject {} has negative group {}", s, g));
    groups = std::max(groups, g + 1);
  }
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(groups));
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    auto it = assignment.find(subjects[i]);
    if (it == assignment.end()) throw DataError(fmt::format("subject '{}' has no group", subjects[i]));
    folds[static_cast<std::size_t>(it->second)].push_back(i);
  }
  if (std::count_if(folds.begin(), folds.end(), [](const auto& f) { return !f.empty(); }) < 2)
    throw DataError("group k-fold needs at least two non-empty groups");
  return folds;
}

/// Indices in [0, n) not listed in the (ascending) `held_out`.
inline std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& held_out) {
  std::vector<bool> out(n, false);
  for (std::size_t i : held_out) out[i] = true;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i)
    if (!out[i]) rest.push_back(i);
  return rest;
}

// ---------------------------------------------------------------------------
// Metrics

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;    // true count
  std::size_t predicted = 0;  // predicted count
};

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::size_t>> confusion;  // row = true, column = predicted
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  double precision_weighted = 0.0;
  double recall_weighted = 0.0;
  double f1_weighted = 0.0;
  std::optional<int> positive_class;
  std::vector<std::string> warnings;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : confusion)
      for (std::size_t v : row) n += v;
    return n;
  }

  /// Rows divided by their sums; rows without support stay zero.
  Matrix row_normalized() const {
    Matrix m(confusion.size(), std::vector<double>(confusion.size(), 0.0));
    for (std::size_t r = 0; r < confusion.size(); ++r) {
      const double s = static_cast<double>(std::accumulate(confusion[r].begin(), confusion[r].end(), std::size_t{0}));
      if (s > 0)
        for (std::size_t c = 0; c < confusion.size(); ++c) m[r][c] = static_cast<double>(confusion[r][c]) / s;
    }
    return m;
  }

  const ClassMetrics& positive() const { return per_class.at(static_cast<std::size_t>(positive_class.value())); }
};

inline std::vector<std::string> default_class_names(std::size_t k) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(fmt::format("class{}", i));
  return out;
}

/// Standard precision/recall/F1 per class; undefined ratios are reported as 0
/// with a warning. Weighted averages use true support.
inline MetricsReport compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred, std::size_t classes,
                                     std::optional<int> positive_class = std::nullopt,
                                     std::vector<std::string> class_names = {}) {
  if (y_true.size() != y_pred.size())
    throw DataError(fmt::format("metrics: {} true labels but {} predictions", y_true.size(), y_pred.size()));
  if (y_true.empty()) throw DataError("metrics: no predictions");
  if (class_names.empty()) class_names = default_class_names(classes);
  if (class_names.size() != classes) throw ConfigError("metrics: class name count mismatch");
  if (positive_class && (*positive_class < 0 || static_cast<std::size_t>(*positive_class) >= classes))
    throw ConfigError("metrics: positive class out of range");
  MetricsReport r;
  r.class_names = std::move(class_names);
  r.positive_class = positive_class;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes || static_cast<std::size_t>(p) >= classes)
      throw DataError(fmt::format("metrics: label pair ({}, {}) outside [0, {})", t, p, classes));
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  const auto n = static_cast<double>(y_true.size());
  std::size_t correct = 0;
  r.per_class.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    auto& m = r.per_class[c];
    const std::size_t tp = r.confusion[c][c];
    correct += tp;
    for (std::size_t k = 0; k < classes; ++k) {
      m.support += r.confusion[c][k];
      m.predicted += r.confusion[k][c];
    }
    if (m.predicted > 0)
      m.precision = static_cast<double>(tp) / static_cast<double>(m.predicted);
    else
      r.warnings.push_back(fmt::format("precision undefined for {} (never predicted)", r.class_names[c]));
    if (m.support > 0)
      m.recall = static_cast<double>(tp) / static_cast<double>(m.support);
    else
      r.warnings.push_back(fmt::format("recall undefined for {} (absent from truth)", r.class_names[c]));
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  }
  r.accuracy = static_cast<double>(correct) / n;
  for (const auto& m : r.per_class) {
    const double w = static_cast<double>(m.support) / n;
    r.precision_weighted += w * m.precision;
    r.recall_weighted += w * m.recall;
    r.f1_weighted += w * m.f1;
  }
  return r;
}

/// Key/value lines followed by the confusion matrix.
inline std::string format_report(const MetricsReport& r) {
  std::string out;
  out += fmt::format("accuracy {:.6f}\n", r.accuracy);
  out += fmt::format("precision_weighted {:.6f}\n", r.precision_weighted);
  out += fmt::format("recall_weighted {:.6f}\n", r.recall_weighted);
  out += fmt::format("f1_weighted {:.6f}\n", r.f1_weighted);
  if (r.positive_class) {
    const auto& p = r.positive();
    out += fmt::format("positive_class {}\n", r.class_names[static_cast<std::size_t>(*r.positive_class)]);
    out += fmt::format("positive_precision {:.6f}\npositive_recall {:.6f}\npositive_f1 {:.6f}\n", p.precision,
                       p.recall, p.f1);
  }
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    out += fmt::format("class {} precision {:.6f} recall {:.6f} f1 {:.6f} support {}\n", r.class_names[c],
                       m.precision, m.recall, m.f1, m.support);
  }
  out += "confusion (rows: true, columns: predicted)\n";
  for (std::size_t c = 0; c < r.confusion.size(); ++c) {
    out += r.class_names[c];
    for (std::size_t v : r.confusion[c]) out += fmt::format(" {}", v);
    out += '\n';
  }
  for (const auto& w : r.warnings) out += fmt::format("warning {}\n", w);
  return out;
}

inline std::string format_matrix(const Matrix& m, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t r = 0; r < m.size(); ++r) {
    out += names.at(r);
    for (double v : m[r]) out += fmt::format(" {:.6f}", v);
    out += '\n';
  }
  return out;
}

/// Per cell: the diagonal keeps its minimum across folds, off-diagonal cells
/// their maximum; rows are then renormalized to sum to one.
inline Matrix worst_case_confusion(const std::vector<Matrix>& folds) {
  if (folds.empty()) throw DataError("worst-case confusion needs at least one matrix");
  const std::size_t k = folds.front().size();
  for (const auto& m : folds) {
    if (m.size() != k) throw DataError("worst-case confusion: matrix shape mismatch");
    for (const auto& row : m)
      if (row.size() != k) throw DataError("worst-case confusion: matrix shape mismatch");
  }
  Matrix out = folds.front();
  for (std::size_t f = 1; f < folds.size(); ++f)
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < k; ++c)
        out[r][c] = r == c ? std::min(out[r][c], folds[f][r][c]) : std::max(out[r][c], folds[f][r][c]);
  for (auto& row : out) {
    const double s = std::accumulate(row.begin(), row.end(), 0.0);
    if (s > 0)
      for (double& v : row) v /= s;
  }
  return out;
}

/// Area under the ROC curve via the rank-sum statistic; tied scores count
/// one half.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size()) throw DataError("roc_auc: score/label size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi < order.size() && scores[order[hi]] == scores[order[lo]]) ++hi;
    const double mid = (static_cast<double>(lo + 1) + static_cast<double>(hi)) / 2.0;
    for (std::size_t k = lo; k < hi; ++k)
      if (positive[order[k]]) {
        rank_sum += mid;
        ++pos;
      }
    lo = hi;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw DataError("roc_auc needs both positive and negative examples");
  const auto P = static_cast<double>(pos), N = static_cast<double>(neg);
  return (rank_sum - P * (P + 1.0) / 2.0) / (P * N);
}

// ---------------------------------------------------------------------------
// Elbow

/// Smallest x whose accuracy is within `tol` of the curve maximum.
inline double elbow_select(std::vector<std::pair<double, double>> curve, double tol = 0.02) {
  if (curve.empty()) throw DataError("elbow selection needs a non-empty curve");
  std::sort(curve.begin(), curve.end());
  double best = curve.front().second;
  for (const auto& [x, acc] : curve) best = std::max(best, acc);
  for (const auto& [x, acc] : curve)
    if (acc >= best - tol - 1e-12) return x;
  return curve.back().first;
}

}  // namespace bc::evaluation
