#pragma once

// Self-training: fit on a labeled seed, move confidently predicted unlabeled
// items into the training set, refit, and finally label whatever is left.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "backchannel/csv.hpp"
#include "backchannel/learners.hpp"

namespace bc::selftrain {

using learners::ClassifierSpec;
using learners::Example;
using learners::FittedModel;

struct SelfTrainConfig {
  ClassifierSpec base;
  double threshold = 0.90;
  int max_iterations = 50;
  double seed_fraction = 0.25;

  void validate() const {
    base.validate();
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError(fmt::format("threshold {} outside (0, 1]", threshold));
    if (!(seed_fraction > 0.0 && seed_fraction <= 1.0))
      throw ConfigError(fmt::format("seed fraction {} outside (0, 1]", seed_fraction));
    if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
  }
};

enum class Provenance { seed, pseudo, fallback };

struct LedgerEntry {
  std::string instance_id;
  int label = 0;
  Provenance provenance = Provenance::seed;
  int iteration = 0;  // for pseudo entries: the iteration that assigned them
  double confidence = 1.0;

  std::string provenance_token() const {
    switch (provenance) {
      case Provenance::seed: return "seed";
      case Provenance::pseudo: return fmt::format("pseudo_iteration_{}", iteration);
      case Provenance::fallback: return "fallback_final_pass";
    }
    return "?";
  }
};

struct SelfTrainResult {
  FittedModel model;
  /// Labeled items in input order, then unlabeled items in input order.
  std::vector<LedgerEntry> ledger;
  int iterations = 0;
  std::size_t pseudo_count = 0;
  std::size_t fallback_count = 0;
};

/// Runs the loop. Iteration 0 fits with base.seed; iteration k >= 1 refits
/// with derive_seed(base.seed, {k}). Unlabeled items still pending are passed
/// to learners that accept unlabeled input.
inline SelfTrainResult self_train(const SelfTrainConfig& config, const std::vector<Example>& labeled,
                                  const std::vector<int>& labels, const std::vector<Example>& unlabeled,
                                  std::size_t classes, const std::vector<std::string>& labeled_ids = {},
                                  const std::vector<std::string>& unlabeled_ids = {}, int workers = 1) {
  config.validate();
  if (labeled.size() != labels.size()) throw DataError("labeled examples/labels size mismatch");
  if ((!labeled_ids.empty() && labeled_ids.size() != labeled.size()) ||
      (!unlabeled_ids.empty() && unlabeled_ids.size() != unlabeled.size()))
    throw DataError("instance id list size mismatch");
  {
    std::vector<int> distinct(labels);
    std::sort(distinct.begin(), distinct.end());
    if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2)
      throw DataError("the labeled seed must contain at least two classes");
  }
  auto lid = [&](std::size_t i) { return labeled_ids.empty() ? fmt::format("L{}", i) : labeled_ids[i]; };
  auto uid = [&](std::size_t i) { return unlabeled_ids.empty() ? fmt::format("U{}", i) : unlabeled_ids[i]; };

  SelfTrainResult result;
  result.ledger.resize(labeled.size() + unlabeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) result.ledger[i] = {lid(i), labels[i], Provenance::seed, 0, 1.0};

  std::vector<Example> train = labeled;
  std::vector<int> train_y = labels;
  std::vector<std::size_t> pending(unlabeled.size());
  std::iota(pending.begin(), pending.end(), 0);

  const bool transductive = config.base.accepts_unlabeled();
  auto refit = [&](std::uint64_t seed) {
    if (!transductive || pending.empty()) return learners::fit(config.base, train, train_y, classes, seed);
    std::vector<Example> X = train;
    std::vector<int> y = train_y;
    for (std::size_t u : pending) {
      X.push_back(unlabeled[u]);
      y.push_back(learners::kUnlabeled);
    }
    return learners::fit(config.base, X, y, classes, seed);
  };
  auto predict_pending = [&](const FittedModel& m) {
    std::vector<Example> batch;
    batch.reserve(pending.size());
    for (std::size_t u : pending) batch.push_back(unlabeled[u]);
    return m.predict_all(batch, workers);
  };

  FittedModel model = refit(config.base.seed);
  int it = 0;
  while (!pending.empty() && it < config.max_iterations) {
    const auto preds = predict_pending(model);
    std::vector<std::size_t> still;
    bool moved = false;
    for (std::size_t j = 0; j < pending.size(); ++j) {
      if (preds[j].confidence >= config.threshold) {
        if (!moved) ++it;
        moved = true;
        const std::size_t u = pending[j];
        train.push_back(unlabeled[u]);
        train_y.push_back(preds[j].label);
        result.ledger[labeled.size() + u] = {uid(u), preds[j].label, Provenance::pseudo, it, preds[j].confidence};
        ++result.pseudo_count;
      } else {
        still.push_back(pending[j]);
      }
    }
    if (!moved) break;
    pending = std::move(still);
    model = refit(derive_seed(config.base.seed, {static_cast<std::uint64_t>(it)}));
  }
  if (!pending.empty()) {
    const auto preds = predict_pending(model);
    for (std::size_t j = 0; j < pending.size(); ++j) {
      const std::size_t u = pending[j];
      result.ledger[labeled.size() + u] = {uid(u), preds[j].label, Provenance::fallback, 0, preds[j].confidence};
      ++result.fallback_count;
    }
  }
  result.iterations = it;
  result.model = std::move(model);
  return result;
}

struct SeedSplit {
  std::vector<std::size_t> labeled;    // ascending
  std::vector<std::size_t> unlabeled;  // ascending
};

/// Stratified split with |L| = round(x * N) and at least one item of every
/// present class in L. Per-class counts use largest remainders.
inline SeedSplit split_seed(const std::vector<int>& labels, double x, std::uint64_t seed) {
  if (!(x > 0.0 && x <= 1.0)) throw ConfigError(fmt::format("seed fraction {} outside (0, 1]", x));
  if (labels.empty()) throw DataError("cannot split an empty dataset");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  const auto N = static_cast<double>(labels.size());
  const auto target = static_cast<std::size_t>(std::llround(x * N));
  if (target < by_class.size())
    throw DataError(fmt::format("seed fraction {} gives {} labeled items for {} classes; need at least one per class", x,
                                target, by_class.size()));
  std::vector<std::size_t> alloc, size;
  std::vector<double> quota;
  for (const auto& [c, idx] : by_class) {
    const double q = x * static_cast<double>(idx.size());
    quota.push_back(q);
    size.push_back(idx.size());
    alloc.push_back(std::min(idx.size(), std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(q)))));
  }
  std::size_t sum = std::accumulate(alloc.begin(), alloc.end(), std::size_t{0});
  while (sum < target) {
    std::size_t best = SIZE_MAX;
    for (std::size_t c = 0; c < alloc.size(); ++c)
      if (alloc[c] < size[c] &&
          (best == SIZE_MAX || quota[c] - static_cast<double>(alloc[c]) > quota[best] - static_cast<double>(alloc[best])))
        best = c;
    ++alloc[best];
    ++sum;
  }
  while (sum > target) {
    std::size_t best = SIZE_MAX;
    for (std::size_t c = 0; c < alloc.size(); ++c)
      if (alloc[c] > 1 &&
          (best == SIZE_MAX || quota[c] - static_cast<double>(alloc[c]) < quota[best] - static_cast<double>(alloc[best])))
        best = c;
    --alloc[best];
    --sum;
  }
  Rng rng(seed);
  SeedSplit out;
  std::size_t c = 0;
  for (auto& [cls, idx] : by_class) {
    std::vector<std::size_t> shuffled = idx;
    rng.shuffle(shuffled);
    out.labeled.insert(out.labeled.end(), shuffled.begin(), shuffled.begin() + static_cast<long>(alloc[c]));
    out.unlabeled.insert(out.unlabeled.end(), shuffled.begin() + static_cast<long>(alloc[c]), shuffled.end());
    ++c;
  }
  std::sort(out.labeled.begin(), out.labeled.end());
  std::sort(out.unlabeled.begin(), out.unlabeled.end());
  return out;
}

/// Rows `instance_id,label,provenance,confidence`.
inline void write_ledger(csv::Writer& w, const std::vector<LedgerEntry>& ledger,
                         const std::vector<std::string>& label_names) {
  w.row({"instance_id", "label", "provenance", "confidence"});
  for (const auto& e : ledger)
    w.row({e.instance_id, label_names.at(static_cast<std::size_t>(e.label)), e.provenance_token(),
           fmt::format("{:.6f}", e.confidence)});
}

inline std::vector<LedgerEntry> read_ledger(const csv::Table& t, const std::vector<std::string>& label_names) {
  const auto c_id = t.column("instance_id"), c_label = t.column("label"), c_prov = t.column("provenance"),
             c_conf = t.column("confidence");
  std::vector<LedgerEntry> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto where = t.where(r);
    LedgerEntry e;
    e.instance_id = row[c_id];
    auto it = std::find(label_names.begin(), label_names.end(), row[c_label]);
    if (it == label_names.end()) throw DataError(fmt::format("{}: unknown label '{}'", where, row[c_label]));
    e.label = static_cast<int>(it - label_names.begin());
    const auto& p = row[c_prov];
    if (p == "seed") {
      e.provenance = Provenance::seed;
    } else if (p == "fallback_final_pass") {
      e.provenance = Provenance::fallback;
    } else if (p.rfind("pseudo_iteration_", 0) == 0) {
      e.provenance = Provenance::pseudo;
      e.iteration = static_cast<int>(csv::to_int(std::string_view(p).substr(17), where));
    } else {
      throw DataError(fmt::format("{}: unknown provenance '{}'", where, p));
    }
    e.confidence = csv::to_double(row[c_conf], where);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace bc::selftrain
