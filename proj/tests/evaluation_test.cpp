#include <gtest/gtest.h>

#include <set>

#include "backchannel/evaluation.hpp"
#include "backchannel/experiments.hpp"
#include "backchannel/stats.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace bc;
using namespace bc::evaluation;

namespace {

pipeline::Dataset blob_dataset(std::size_t per_class, double gap, std::uint64_t seed) {
  const auto b = testkit::make_blobs(per_class, 2, 3, gap, seed);
  pipeline::Dataset d;
  d.class_names = {"neg", "pos"};
  d.positive_class = 1;
  d.X = b.X;
  d.y = b.y;
  for (std::size_t i = 0; i < b.y.size(); ++i) {
    d.ids.push_back(fmt::format("i{}", i));
    d.subjects.push_back(fmt::format("s{}", i % 7));
  }
  return d;
}

}  // namespace

TEST(KFold, PartitionsWithNearEqualSizes) {
  const auto f = kfold(23, 5, 1);
  ASSERT_EQ(f.size(), 5u);
  std::set<std::size_t> all;
  for (const auto& fold : f) {
    EXPECT_GE(fold.size(), 4u);
    EXPECT_LE(fold.size(), 5u);
    all.insert(fold.begin(), fold.end());
  }
  EXPECT_EQ(all.size(), 23u);
  EXPECT_EQ(kfold(23, 5, 1), f);
  EXPECT_NE(kfold(23, 5, 2), f);
  EXPECT_THROW(kfold(3, 5, 1), DataError);
  EXPECT_EQ(complement(5, {1, 3}), (std::vector<std::size_t>{0, 2, 4}));
}

TEST(GroupKFold, RoundRobinByCount) {
  const std::vector<std::string> subj{"a", "a", "a", "b", "b", "c", "d", "d"};
  const auto g = assign_groups(subj, 2, {"e"});
  // a(3) b(2) d(2) c(1) e(0)
  EXPECT_EQ(g, (GroupAssignment{{"a", 0}, {"b", 1}, {"d", 0}, {"c", 1}, {"e", 0}}));
  const auto folds = group_kfold(subj, g);
  EXPECT_EQ(folds[0], (std::vector<std::size_t>{0, 1, 2, 6, 7}));
  EXPECT_EQ(folds[1], (std::vector<std::size_t>{3, 4, 5}));
  EXPECT_THROW(group_kfold({"zz"}, g), DataError);
  EXPECT_THROW(group_kfold({"a", "a"}, g), DataError);
}

TEST(GroupKFoldProperty, NoSubjectCrossesFolds) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> subj(10 + rng.index(200));
    for (auto& s : subj) s = fmt::format("s{}", rng.index(12));
    const int groups = 2 + static_cast<int>(rng.index(3));
    const auto g = assign_groups(subj, groups);
    if (g.size() < 2) continue;
    const auto folds = group_kfold(subj, g);
    std::map<std::string, std::size_t> fold_of;
    std::size_t total = 0;
    for (std::size_t f = 0; f < folds.size(); ++f)
      for (std::size_t i : folds[f]) {
        ++total;
        auto [it, fresh] = fold_of.emplace(subj[i], f);
        EXPECT_EQ(it->second, f);
      }
    EXPECT_EQ(total, subj.size());
  }
}

TEST(Metrics, BinaryExample) {
  // tp=3 fn=1 fp=2 tn=4
  const std::vector<int> t{1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  const std::vector<int> p{1, 1, 1, 0, 1, 1, 0, 0, 0, 0};
  const auto r = compute_metrics(t, p, 2, 1, {"no", "yes"});
  EXPECT_DOUBLE_EQ(r.accuracy, 0.7);
  EXPECT_DOUBLE_EQ(r.positive().precision, 0.6);
  EXPECT_DOUBLE_EQ(r.positive().recall, 0.75);
  EXPECT_NEAR(r.positive().f1, 2 * 0.6 * 0.75 / 1.35, 1e-15);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{4, 2}, {1, 3}}));
  EXPECT_NEAR(r.recall_weighted, r.accuracy, 1e-15);
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_NE(format_report(r).find("accuracy 0.700000"), std::string::npos);
}

TEST(Metrics, UndefinedRatiosWarn) {
  const auto r = compute_metrics({0, 0, 1}, {0, 0, 0}, 3);
  EXPECT_EQ(r.per_class[1].precision, 0.0);
  EXPECT_EQ(r.per_class[2].recall, 0.0);
  EXPECT_EQ(r.warnings.size(), 3u);
  EXPECT_THROW(compute_metrics({0}, {3}, 3), DataError);
  EXPECT_THROW(compute_metrics({0}, {0, 1}, 3), DataError);
}

TEST(MetricsProperty, MatchesTallyOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(4));
    std::vector<int> t(1 + rng.index(80)), p(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<int>(rng.index(static_cast<std::size_t>(k)));
      p[i] = rng.bernoulli(0.6) ? t[i] : static_cast<int>(rng.index(static_cast<std::size_t>(k)));
    }
    const auto r = compute_metrics(t, p, static_cast<std::size_t>(k));
    const auto o = oracle::tally(t, p, k);
    EXPECT_EQ(r.accuracy, o.accuracy);
    EXPECT_EQ(r.precision_weighted, o.precision_w);
    EXPECT_EQ(r.recall_weighted, o.recall_w);
    EXPECT_EQ(r.f1_weighted, o.f1_w);
    for (int c = 0; c < k; ++c) {
      EXPECT_EQ(r.per_class[static_cast<std::size_t>(c)].precision, o.precision[static_cast<std::size_t>(c)]);
      EXPECT_EQ(r.per_class[static_cast<std::size_t>(c)].f1, o.f1[static_cast<std::size_t>(c)]);
    }
    EXPECT_EQ(r.total(), t.size());
    for (const auto& row : r.row_normalized()) {
      const double s = std::accumulate(row.begin(), row.end(), 0.0);
      EXPECT_TRUE(s == 0.0 || std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST(WorstCase, SingleFoldIsRowNormalized) {
  const Matrix m{{8, 2}, {3, 1}};
  const auto w = worst_case_confusion({m});
  EXPECT_DOUBLE_EQ(w[0][0], 0.8);
  EXPECT_DOUBLE_EQ(w[1][0], 0.75);
}

TEST(WorstCase, IdenticalFoldsAreStable) {
  const Matrix m{{0.9, 0.1}, {0.3, 0.7}};
  EXPECT_EQ(worst_case_confusion({m, m}), worst_case_confusion({m}));
}

TEST(WorstCase, TakesWorstCellsThenRenormalizes) {
  const Matrix a{{0.8, 0.2}, {0.4, 0.6}};
  const Matrix b{{0.6, 0.4}, {0.2, 0.8}};
  const auto w = worst_case_confusion({a, b});
  EXPECT_DOUBLE_EQ(w[0][0], 0.6);
  EXPECT_DOUBLE_EQ(w[0][1], 0.4);
  EXPECT_DOUBLE_EQ(w[1][0], 0.4);
  EXPECT_DOUBLE_EQ(w[1][1], 0.6);
  EXPECT_THROW(worst_case_confusion({}), DataError);
  EXPECT_THROW(worst_case_confusion({a, Matrix{{1}}}), DataError);
}

TEST(Elbow, SmallestWithinTolerance) {
  EXPECT_EQ(elbow_select({{0.05, 0.5}, {0.1, 0.69}, {0.2, 0.70}, {1.0, 0.71}}), 0.1);
  EXPECT_EQ(elbow_select({{1.0, 0.9}, {0.5, 0.5}}), 1.0);
  EXPECT_EQ(elbow_select({{0.3, 0.8}}), 0.3);
  EXPECT_EQ(elbow_select({{0.1, 0.80}, {0.2, 0.78}}, 0.02), 0.1);
  EXPECT_THROW(elbow_select({}), DataError);
}

TEST(RocAuc, RankSum) {
  EXPECT_DOUBLE_EQ(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
  EXPECT_THROW(roc_auc({0.1}, {1}), DataError);
}

TEST(Ks, Examples) {
  const auto a = stats::ks_two_sample({1, 2, 3}, {2, 3, 4});
  EXPECT_EQ(a.d_numerator * 3, a.d_denominator);
  EXPECT_DOUBLE_EQ(a.d, 1.0 / 3.0);
  const auto b = stats::ks_two_sample({1, 2}, {5, 6, 7});
  EXPECT_DOUBLE_EQ(b.d, 1.0);
  const auto c = stats::ks_two_sample({1, 2, 3}, {1, 2, 3});
  EXPECT_EQ(c.d, 0.0);
  EXPECT_EQ(c.p, 1.0);
  EXPECT_THROW(stats::ks_two_sample({}, {1}), DataError);
}

TEST(KsProperty, MatchesExhaustiveOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(1 + rng.index(8)), b(1 + rng.index(8));
    for (auto& v : a) v = static_cast<double>(rng.index(6));
    for (auto& v : b) v = static_cast<double>(rng.index(6)) + (rng.bernoulli(0.3) ? 0.5 : 0.0);
    const auto r = stats::ks_two_sample(a, b);
    const auto [num, den] = oracle::ks_statistic(a, b);
    EXPECT_EQ(r.d_numerator * den, num * r.d_denominator);
    const double ne = static_cast<double>(a.size() * b.size()) / static_cast<double>(a.size() + b.size());
    EXPECT_NEAR(r.p, oracle::kolmogorov_tail(std::sqrt(ne) * r.d), 1e-6);
    const auto swapped = stats::ks_two_sample(b, a);
    EXPECT_EQ(swapped.d, r.d);
  }
}

TEST(Wilcoxon, Examples) {
  // differences +1, -2, +3: W+ = 4, W- = 2
  const auto a = stats::wilcoxon_signed_rank({2, 1, 5}, {1, 3, 2});
  EXPECT_EQ(a.w, 2.0);
  EXPECT_DOUBLE_EQ(a.p, 0.75);
  const auto b = stats::wilcoxon_signed_rank({2, 3, 4, 5, 6, 7}, {1, 1, 1, 1, 1, 1});
  EXPECT_EQ(b.w, 0.0);
  EXPECT_DOUBLE_EQ(b.p, 0.03125);
  const auto c = stats::wilcoxon_signed_rank({1, 2}, {1, 2});
  EXPECT_TRUE(c.degenerate);
  EXPECT_EQ(c.n, 0u);
  EXPECT_THROW(stats::wilcoxon_signed_rank({1}, {1, 2}), DataError);
}

TEST(WilcoxonProperty, MatchesSignEnumeration) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> a(1 + rng.index(12)), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<double>(rng.index(7));
      b[i] = static_cast<double>(rng.index(7));
    }
    const auto r = stats::wilcoxon_signed_rank(a, b);
    const auto o = oracle::wilcoxon(a, b);
    EXPECT_EQ(r.degenerate, o.degenerate);
    if (o.degenerate) continue;
    EXPECT_EQ(r.w, o.w);
    EXPECT_NEAR(r.p, o.p, 1e-12);
    EXPECT_TRUE(r.exact);
  }
}

TEST(Wilcoxon, LargeSamplesUseNormalApproximation) {
  std::vector<double> a(40), b(40);
  for (int i = 0; i < 40; ++i) {
    a[static_cast<std::size_t>(i)] = i + (i % 3 == 0 ? -0.5 : 0.7);
    b[static_cast<std::size_t>(i)] = i;
  }
  const auto r = stats::wilcoxon_signed_rank(a, b);
  EXPECT_FALSE(r.exact);
  EXPECT_GT(r.p, 0.0);
  EXPECT_LT(r.p, 1.0);
}

TEST(Sweep, IndependentOfWorkerCount) {
  const auto d = blob_dataset(30, 2.0, 6);
  experiments::SweepConfig cfg;
  cfg.specs = {learners::ClassifierSpec::of(learners::Kind::knn)};
  auto ada = learners::ClassifierSpec::of(learners::Kind::adaboost);
  ada.adaboost.rounds = 10;
  cfg.specs.push_back(ada);
  cfg.grid = {0.25, 0.5, 1.0};
  cfg.simulations = 2;
  cfg.folds = 3;
  cfg.seed = 11;
  cfg.workers = 1;
  const auto one = experiments::sensitivity_sweep(cfg, d);
  cfg.workers = 8;
  const auto eight = experiments::sensitivity_sweep(cfg, d);
  ASSERT_EQ(one.cells.size(), 6u);
  for (std::size_t i = 0; i < one.cells.size(); ++i) {
    EXPECT_EQ(one.cells[i].mean_accuracy, eight.cells[i].mean_accuracy);
    EXPECT_EQ(one.cells[i].std_accuracy, eight.cells[i].std_accuracy);
    EXPECT_EQ(one.cells[i].mean_ledger_agreement, eight.cells[i].mean_ledger_agreement);
    EXPECT_EQ(one.cells[i].runs, 6u);
  }
  EXPECT_EQ(one.elbow, eight.elbow);
}

TEST(Sweep, FullSeedFractionEqualsSupervised) {
  const auto d = blob_dataset(25, 1.5, 7);
  auto spec = learners::ClassifierSpec::of(learners::Kind::random_forest);
  spec.forest.trees = 8;
  experiments::SweepConfig cfg;
  cfg.specs = {spec};
  cfg.grid = {1.0};
  cfg.simulations = 2;
  cfg.folds = 4;
  cfg.seed = 3;
  const auto sweep = experiments::sensitivity_sweep(cfg, d);
  const auto sup = experiments::supervised_cv(spec, d, 2, 4, 3);
  EXPECT_EQ(sweep.cell("random_forest", 1.0).mean_accuracy, sup.mean_accuracy);
  EXPECT_EQ(sweep.cell("random_forest", 1.0).mean_f1_weighted, sup.mean_f1_weighted);
  EXPECT_EQ(sweep.cell("random_forest", 1.0).mean_ledger_agreement, 1.0);
}

TEST(Sweep, RejectsBadConfig) {
  const auto d = blob_dataset(10, 1.0, 8);
  experiments::SweepConfig cfg;
  EXPECT_THROW(experiments::sensitivity_sweep(cfg, d), ConfigError);
  cfg.specs = {learners::ClassifierSpec::of(learners::Kind::knn), learners::ClassifierSpec::of(learners::Kind::knn)};
  EXPECT_THROW(experiments::sensitivity_sweep(cfg, d), ConfigError);
  cfg.specs.pop_back();
  cfg.grid = {0.0};
  EXPECT_THROW(experiments::sensitivity_sweep(cfg, d), ConfigError);
}
