#pragma once

// Sensitivity sweep over seed fractions, the supervised cross-validation
// baseline, and the human-label vs pseudo-label paradigm comparison.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "backchannel/core.hpp"
#include "backchannel/csv.hpp"
#include "backchannel/evaluation.hpp"
#include "backchannel/learners.hpp"
#include "backchannel/learners/smote.hpp"
#include "backchannel/parallel.hpp"
#include "backchannel/pipeline.hpp"
#include "backchannel/selftrain.hpp"

namespace bc::experiments {

using evaluation::Matrix;
using evaluation::MetricsReport;
using learners::ClassifierSpec;
using pipeline::Dataset;

inline std::vector<double> default_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 20; ++k) g.push_back(k * 0.05);
  return g;
}

struct SweepConfig {
  std::vector<ClassifierSpec> specs;
  std::vector<double> grid = default_grid();
  int simulations = 10;
  int folds = 5;
  double threshold = 0.90;
  int max_iterations = 50;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    if (specs.empty()) throw ConfigError("sweep: no classifier specs");
    for (const auto& s : specs) s.validate();
    for (std::size_t i = 0; i < specs.size(); ++i)
      for (std::size_t j = i + 1; j < specs.size(); ++j)
        if (specs[i].name() == specs[j].name())
          throw ConfigError(fmt::format("sweep: duplicate classifier name '{}'", specs[i].name()));
    if (grid.empty()) throw ConfigError("sweep: empty grid");
    for (double x : grid)
      if (!(x > 0.0 && x <= 1.0)) throw ConfigError(fmt::format("sweep: grid value {} outside (0, 1]", x));
    if (simulations < 1 || folds < 2) throw ConfigError("sweep: need >= 1 simulation and >= 2 folds");
  }
};

/// One (spec, x, simulation, fold) run scored on the held-out fold.
struct RunResult {
  double accuracy = 0.0;
  double precision_weighted = 0.0;
  double recall_weighted = 0.0;
  double f1_weighted = 0.0;
  double ledger_agreement = 1.0;   // training-fold ledger labels equal to the truth
  double fallback_fraction = 0.0;  // training-fold items labeled in the final pass
  int iterations = 0;
};

struct SweepCell {
  std::string classifier;
  double x = 0.0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // over simulation means
  double mean_precision_weighted = 0.0;
  double mean_recall_weighted = 0.0;
  double mean_f1_weighted = 0.0;
  double mean_ledger_agreement = 0.0;
  double mean_fallback_fraction = 0.0;
  std::size_t runs = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;  // spec order, then grid order
  std::map<std::string, double> elbow;

  std::vector<std::pair<double, double>> curve(const std::string& classifier) const {
    std::vector<std::pair<double, double>> out;
    for (const auto& c : cells)
      if (c.classifier == classifier) out.emplace_back(c.x, c.mean_accuracy);
    return out;
  }

  const SweepCell& cell(const std::string& classifier, double x) const {
    for (const auto& c : cells)
      if (c.classifier == classifier && std::abs(c.x - x) < 1e-12) return c;
    throw DataError(fmt::format("sweep has no cell ({}, {})", classifier, x));
  }
};

/// Seed of one run; depends only on (master, spec name, x, simulation, fold).
inline std::uint64_t run_seed(std::uint64_t master, const std::string& spec_name, double x, int sim, int fold) {
  return derive_seed(master, {stable_hash(spec_name), static_cast<std::uint64_t>(std::llround(x * 1e6)),
                              static_cast<std::uint64_t>(sim), static_cast<std::uint64_t>(fold)});
}

inline std::vector<std::vector<std::size_t>> simulation_folds(std::size_t n, int folds, std::uint64_t master, int sim) {
  return evaluation::kfold(n, folds, derive_seed(master, {0x666f6c64ULL, static_cast<std::uint64_t>(sim)}));
}

namespace detail {

inline std::vector<learners::Example> pick(const std::vector<learners::Example>& X, const std::vector<std::size_t>& idx) {
  std::vector<learners::Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(X[i]);
  return out;
}

inline std::vector<int> pick(const std::vector<int>& y, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(y[i]);
  return out;
}

inline RunResult score(const Dataset& d, const learners::FittedModel& model, const std::vector<std::size_t>& test) {
  std::vector<int> pred;
  for (const auto& p : model.predict_all(pick(d.X, test))) pred.push_back(p.label);
  const auto m = evaluation::compute_metrics(pick(d.y, test), pred, d.classes(), d.positive_class, d.class_names);
  RunResult r;
  r.accuracy = m.accuracy;
  r.precision_weighted = m.precision_weighted;
  r.recall_weighted = m.recall_weighted;
  r.f1_weighted = m.f1_weighted;
  return r;
}

inline SweepCell summarize(const std::string& name, double x, const std::vector<std::vector<RunResult>>& by_sim) {
  SweepCell c;
  c.classifier = name;
  c.x = x;
  std::vector<double> sim_acc;
  for (const auto& runs : by_sim) {
    RunResult mean;
    mean.accuracy = mean.precision_weighted = mean.recall_weighted = mean.f1_weighted = 0.0;
    mean.ledger_agreement = mean.fallback_fraction = 0.0;
    for (const auto& r : runs) {
      mean.accuracy += r.accuracy;
      mean.precision_weighted += r.precision_weighted;
      mean.recall_weighted += r.recall_weighted;
      mean.f1_weighted += r.f1_weighted;
      mean.ledger_agreement += r.ledger_agreement;
      mean.fallback_fraction += r.fallback_fraction;
      ++c.runs;
    }
    const auto n = static_cast<double>(runs.size());
    sim_acc.push_back(mean.accuracy / n);
    c.mean_precision_weighted += mean.precision_weighted / n;
    c.mean_recall_weighted += mean.recall_weighted / n;
    c.mean_f1_weighted += mean.f1_weighted / n;
    c.mean_ledger_agreement += mean.ledger_agreement / n;
    c.mean_fallback_fraction += mean.fallback_fraction / n;
  }
  const auto S = static_cast<double>(by_sim.size());
  for (double a : sim_acc) c.mean_accuracy += a;
  c.mean_accuracy /= S;
  double ss = 0.0;
  for (double a : sim_acc) ss += (a - c.mean_accuracy) * (a - c.mean_accuracy);
  c.std_accuracy = std::sqrt(ss / S);
  c.mean_precision_weighted /= S;
  c.mean_recall_weighted /= S;
  c.mean_f1_weighted /= S;
  c.mean_ledger_agreement /= S;
  c.mean_fallback_fraction /= S;
  return c;
}

}  // namespace detail

/// Self-trains on k-1 folds with seed fraction x and scores the held-out
/// fold, for every (spec, x, simulation, fold). Folds are shared across specs
/// and fractions within a simulation. Results do not depend on `workers`.
inline SweepResult sensitivity_sweep(const SweepConfig& cfg, const Dataset& d) {
  cfg.validate();
  const auto S = static_cast<std::size_t>(cfg.simulations), F = static_cast<std::size_t>(cfg.folds);
  std::vector<std::vector<std::vector<std::size_t>>> folds;
  for (int s = 0; s < cfg.simulations; ++s) folds.push_back(simulation_folds(d.size(), cfg.folds, cfg.seed, s));
  const std::size_t per_spec = cfg.grid.size() * S * F;
  std::vector<RunResult> runs(cfg.specs.size() * per_spec);
  parallel_for(runs.size(), cfg.workers, [&](std::size_t t) {
    const std::size_t spec_i = t / per_spec;
    const std::size_t x_i = (t % per_spec) / (S * F);
    const std::size_t sim = (t % (S * F)) / F;
    const std::size_t fold = t % F;
    const double x = cfg.grid[x_i];
    const auto& spec = cfg.specs[spec_i];
    const auto& test = folds[sim][fold];
    const auto train = evaluation::complement(d.size(), test);
    const auto base = run_seed(cfg.seed, spec.name(), x, static_cast<int>(sim), static_cast<int>(fold));
    const auto train_y = detail::pick(d.y, train);
    const auto split = selftrain::split_seed(train_y, x, derive_seed(base, {2}));
    std::vector<std::size_t> lab, unl;
    for (std::size_t i : split.labeled) lab.push_back(train[i]);
    for (std::size_t i : split.unlabeled) unl.push_back(train[i]);
    selftrain::SelfTrainConfig st;
    st.base = spec;
    st.base.seed = derive_seed(base, {1});
    st.threshold = cfg.threshold;
    st.max_iterations = cfg.max_iterations;
    st.seed_fraction = x;
    const auto result = selftrain::self_train(st, detail::pick(d.X, lab), detail::pick(d.y, lab), detail::pick(d.X, unl),
                                              d.classes());
    RunResult r = detail::score(d, result.model, test);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < lab.size(); ++i) agree += result.ledger[i].label == d.y[lab[i]];
    for (std::size_t i = 0; i < unl.size(); ++i) agree += result.ledger[lab.size() + i].label == d.y[unl[i]];
    r.ledger_agreement = static_cast<double>(agree) / static_cast<double>(train.size());
    r.fallback_fraction = static_cast<double>(result.fallback_count) / static_cast<double>(train.size());
    r.iterations = result.iterations;
    runs[t] = r;
  });
  SweepResult out;
  for (std::size_t spec_i = 0; spec_i < cfg.specs.size(); ++spec_i) {
    for (std::size_t x_i = 0; x_i < cfg.grid.size(); ++x_i) {
      std::vector<std::vector<RunResult>> by_sim(S);
      for (std::size_t sim = 0; sim < S; ++sim)
        for (std::size_t fold = 0; fold < F; ++fold)
          by_sim[sim].push_back(runs[spec_i * per_spec + x_i * S * F + sim * F + fold]);
      out.cells.push_back(detail::summarize(cfg.specs[spec_i].name(), cfg.grid[x_i], by_sim));
    }
    out.elbow[cfg.specs[spec_i].name()] = evaluation::elbow_select(out.curve(cfg.specs[spec_i].name()));
  }
  return out;
}

/// Plain k-fold training on all training labels, with the folds and model
/// seeds the sweep uses at x = 1.
inline SweepCell supervised_cv(const ClassifierSpec& spec, const Dataset& d, int simulations, int folds,
                               std::uint64_t seed, int workers = 1) {
  spec.validate();
  const auto S = static_cast<std::size_t>(simulations), F = static_cast<std::size_t>(folds);
  std::vector<std::vector<std::vector<std::size_t>>> all_folds;
  for (int s = 0; s < simulations; ++s) all_folds.push_back(simulation_folds(d.size(), folds, seed, s));
  std::vector<RunResult> runs(S * F);
  parallel_for(runs.size(), workers, [&](std::size_t t) {
    const std::size_t sim = t / F, fold = t % F;
    const auto& test = all_folds[sim][fold];
    const auto train = evaluation::complement(d.size(), test);
    const auto base = run_seed(seed, spec.name(), 1.0, static_cast<int>(sim), static_cast<int>(fold));
    const auto model =
        learners::fit(spec, detail::pick(d.X, train), detail::pick(d.y, train), d.classes(), derive_seed(base, {1}));
    runs[t] = detail::score(d, model, test);
  });
  std::vector<std::vector<RunResult>> by_sim(S);
  for (std::size_t t = 0; t < runs.size(); ++t) by_sim[t / F].push_back(runs[t]);
  return detail::summarize(spec.name(), 1.0, by_sim);
}

/// Rows `classifier,x,mean_acc,std_acc,mean_precision_w,mean_recall_w,mean_f1w,ledger_agreement,fallback_fraction,runs`.
inline void write_sweep(csv::Writer& w, const SweepResult& r) {
  w.row({"classifier", "x", "mean_acc", "std_acc", "mean_precision_w", "mean_recall_w", "mean_f1w", "ledger_agreement",
         "fallback_fraction", "runs"});
  for (const auto& c : r.cells)
    w.row({c.classifier, fmt::format("{:.2f}", c.x), fmt::format("{:.6f}", c.mean_accuracy),
           fmt::format("{:.6f}", c.std_accuracy), fmt::format("{:.6f}", c.mean_precision_weighted),
           fmt::format("{:.6f}", c.mean_recall_weighted), fmt::format("{:.6f}", c.mean_f1_weighted),
           fmt::format("{:.6f}", c.mean_ledger_agreement), fmt::format("{:.6f}", c.mean_fallback_fraction),
           std::to_string(c.runs)});
}

inline std::string format_elbows(const SweepResult& r) {
  std::string out;
  for (const auto& [name, x] : r.elbow) {
    const auto& at = r.cell(name, x);
    double best = 0.0;
    for (const auto& [gx, acc] : r.curve(name)) best = std::max(best, acc);
    out += fmt::format("elbow {} x={:.2f} accuracy={:.6f} max_accuracy={:.6f}\n", name, x, at.mean_accuracy, best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paradigm comparison

enum class Paradigm { human, pseudo };

inline std::string_view to_string(Paradigm p) { return p == Paradigm::human ? "human" : "pseudo"; }

inline Paradigm parse_paradigm(std::string_view s) {
  if (s == "human") return Paradigm::human;
  if (s == "pseudo") return Paradigm::pseudo;
  throw ConfigError(fmt::format("unknown paradigm '{}' (expected human|pseudo)", s));
}

struct ParadigmConfig {
  ClassifierSpec spec;
  int groups = 6;
  bool smote = false;
  learners::SmoteParams smote_params;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct ParadigmOutcome {
  MetricsReport pooled;  // predictions of all held-out groups together
  std::vector<MetricsReport> per_fold;
  Matrix worst_case;
};

struct ParadigmComparison {
  evaluation::GroupAssignment assignment;
  ParadigmOutcome human, pseudo;
  std::vector<std::pair<std::string, double>> ratios;  // pseudo / human
};

/// Fits on the training groups with the given labels, optionally SMOTE
/// rebalanced, and predicts the held-out group.
inline std::vector<int> fit_and_predict(const ParadigmConfig& cfg, const Dataset& d, const std::vector<int>& labels,
                                        const std::vector<std::size_t>& train, const std::vector<std::size_t>& test,
                                        std::uint64_t seed) {
  auto X = detail::pick(d.X, train);
  auto y = detail::pick(labels, train);
  if (cfg.smote) {
    if (cfg.spec.uses_series()) throw ConfigError("SMOTE works on aggregate vectors; it cannot be combined with resnet_ts");
    auto res = learners::smote(learners::vectors_of(X), y, cfg.smote_params, derive_seed(seed, {0x736d6f74ULL}));
    X.clear();
    for (auto& row : res.X) X.push_back({std::move(row), nullptr});
    y = std::move(res.y);
  }
  const auto model = learners::fit(cfg.spec, X, y, d.classes(), seed);
  std::vector<int> out;
  for (const auto& p : model.predict_all(detail::pick(d.X, test))) out.push_back(p.label);
  return out;
}

/// Leave-one-group-out over subjects. Paradigm A trains on the dataset's
/// labels, paradigm B on `pseudo_labels`; both are scored on the dataset's
/// labels and share fold seeds.
inline ParadigmComparison compare_paradigms(const ParadigmConfig& cfg, const Dataset& d,
                                            const std::vector<int>& pseudo_labels) {
  cfg.spec.validate();
  if (pseudo_labels.size() != d.size()) throw DataError("pseudo labels do not cover the dataset");
  for (int v : pseudo_labels)
    if (v < 0 || static_cast<std::size_t>(v) >= d.classes()) throw DataError(fmt::format("pseudo label {} out of range", v));
  ParadigmComparison out;
  out.assignment = evaluation::assign_groups(d.subjects, cfg.groups);
  const auto folds = evaluation::group_kfold(d.subjects, out.assignment);
  const std::vector<int>* label_sets[2] = {&d.y, &pseudo_labels};
  std::vector<std::vector<int>> preds(2 * folds.size());
  parallel_for(preds.size(), cfg.workers, [&](std::size_t t) {
    const std::size_t g = t / 2, which = t % 2;
    if (folds[g].empty()) return;
    const auto train = evaluation::complement(d.size(), folds[g]);
    preds[t] = fit_and_predict(cfg, d, *label_sets[which], train, folds[g], derive_seed(cfg.seed, {g}));
  });
  for (std::size_t which = 0; which < 2; ++which) {
    ParadigmOutcome& o = which == 0 ? out.human : out.pseudo;
    std::vector<int> pooled_true, pooled_pred;
    std::vector<Matrix> normalized;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (folds[g].empty()) continue;
      const auto truth = detail::pick(d.y, folds[g]);
      const auto& pred = preds[2 * g + which];
      pooled_true.insert(pooled_true.end(), truth.begin(), truth.end());
      pooled_pred.insert(pooled_pred.end(), pred.begin(), pred.end());
      o.per_fold.push_back(evaluation::compute_metrics(truth, pred, d.classes(), d.positive_class, d.class_names));
      normalized.push_back(o.per_fold.back().row_normalized());
    }
    o.pooled = evaluation::compute_metrics(pooled_true, pooled_pred, d.classes(), d.positive_class, d.class_names);
    o.worst_case = evaluation::worst_case_confusion(normalized);
  }
  auto ratio = [](double b, double a) { return a > 0.0 ? b / a : std::numeric_limits<double>::quiet_NaN(); };
  const auto &A = out.human.pooled, &B = out.pseudo.pooled;
  out.ratios = {{"accuracy", ratio(B.accuracy, A.accuracy)},
                {"precision_weighted", ratio(B.precision_weighted, A.precision_weighted)},
                {"recall_weighted", ratio(B.recall_weighted, A.recall_weighted)},
                {"f1_weighted", ratio(B.f1_weighted, A.f1_weighted)}};
  if (d.positive_class) out.ratios.emplace_back("positive_f1", ratio(B.positive().f1, A.positive().f1));
  return out;
}

inline double ratio_of(const ParadigmComparison& c, std::string_view key) {
  for (const auto& [k, v] : c.ratios)
    if (k == key) return v;
  throw DataError(fmt::format("no ratio named {}", key));
}

inline std::string format_comparison(const ParadigmComparison& c) {
  std::string out;
  for (const auto& [name, o] : {std::pair<const char*, const ParadigmOutcome*>{"human", &c.human}, {"pseudo", &c.pseudo}}) {
    out += fmt::format("== paradigm {}\n", name);
    out += evaluation::format_report(o->pooled);
    out += "worst-case confusion (row-normalized)\n";
    out += evaluation::format_matrix(o->worst_case, o->pooled.class_names);
  }
  out += "== ratios (pseudo / human)\n";
  for (const auto& [k, v] : c.ratios) out += fmt::format("ratio_{} {:.6f}\n", k, v);
  return out;
}

}  // namespace bc::experiments
