#include <gtest/gtest.h>

#include <map>

#include "backchannel/selftrain.hpp"
#include "support.hpp"

using namespace bc;
using namespace bc::selftrain;

namespace {

SelfTrainConfig knn_config() {
  SelfTrainConfig c;
  c.base = learners::ClassifierSpec::of(learners::Kind::knn, 5);
  return c;
}

struct Split {
  std::vector<learners::Example> L, U;
  std::vector<int> Ly, Uy;
};

Split split(const testkit::Blobs& b, double x, std::uint64_t seed) {
  const auto s = split_seed(b.y, x, seed);
  Split out;
  for (auto i : s.labeled) {
    out.L.push_back(b.X[i]);
    out.Ly.push_back(b.y[i]);
  }
  for (auto i : s.unlabeled) {
    out.U.push_back(b.X[i]);
    out.Uy.push_back(b.y[i]);
  }
  return out;
}

}  // namespace

TEST(SelfTrain, EmptyUnlabeledSetEqualsPlainFit) {
  const auto b = testkit::make_blobs(20, 2, 3, 2.0, 1);
  auto cfg = knn_config();
  cfg.base = learners::ClassifierSpec::of(learners::Kind::random_forest, 9);
  cfg.base.forest.trees = 10;
  const auto r = self_train(cfg, b.X, b.y, {}, 2);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.pseudo_count + r.fallback_count, 0u);
  EXPECT_EQ(r.model.serialize(), learners::fit(cfg.base, b.X, b.y, 2).serialize());
  ASSERT_EQ(r.ledger.size(), b.X.size());
  for (const auto& e : r.ledger) EXPECT_EQ(e.provenance, Provenance::seed);
}

TEST(SelfTrain, UnreachableThresholdFallsBack) {
  const auto b = testkit::make_blobs(30, 2, 2, 1.0, 2);
  const auto s = split(b, 0.25, 3);
  auto cfg = knn_config();
  cfg.base.knn.k = 4;
  cfg.threshold = 1.0;
  // an overlapping pair of blobs leaves some unlabeled item short of unanimous votes
  const auto r = self_train(cfg, s.L, s.Ly, s.U, 2);
  EXPECT_GT(r.fallback_count, 0u);
  EXPECT_EQ(r.pseudo_count + r.fallback_count, s.U.size());
  for (std::size_t i = s.L.size(); i < r.ledger.size(); ++i) {
    if (r.ledger[i].provenance == Provenance::pseudo) {
      EXPECT_EQ(r.ledger[i].confidence, 1.0);
    }
  }
}

TEST(SelfTrain, SeparableBlobsAgreeWithTruth) {
  // one axis, so per-feature scaling keeps the classes far apart
  const auto b = testkit::make_blobs(100, 3, 1, 10.0, 4);
  const auto s = split(b, 0.25, 5);
  const auto r = self_train(knn_config(), s.L, s.Ly, s.U, 3);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < s.U.size(); ++i) agree += r.ledger[s.L.size() + i].label == s.Uy[i];
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(s.U.size()), 0.99);
  EXPECT_GE(r.iterations, 1);
}

TEST(SelfTrainProperty, LedgerIsCompleteAndOrdered) {
  Rng rng(6);
  for (int trial = 0; trial < 12; ++trial) {
    const auto b = testkit::make_blobs(10 + rng.index(30), 2 + rng.index(2), 3, rng.uniform(0.5, 4), rng.next());
    const auto s = split(b, rng.uniform(0.15, 0.6), rng.next());
    auto cfg = knn_config();
    cfg.threshold = rng.uniform(0.5, 1.0);
    cfg.max_iterations = static_cast<int>(rng.index(5));
    std::vector<std::string> lid, uid;
    for (std::size_t i = 0; i < s.L.size(); ++i) lid.push_back(fmt::format("l{}", i));
    for (std::size_t i = 0; i < s.U.size(); ++i) uid.push_back(fmt::format("u{}", i));
    const auto classes = static_cast<std::size_t>(*std::max_element(b.y.begin(), b.y.end()) + 1);
    const auto r = self_train(cfg, s.L, s.Ly, s.U, classes, lid, uid);
    ASSERT_EQ(r.ledger.size(), s.L.size() + s.U.size());
    EXPECT_EQ(r.pseudo_count + r.fallback_count, s.U.size());
    EXPECT_LE(r.iterations, cfg.max_iterations);
    for (std::size_t i = 0; i < s.L.size(); ++i) {
      EXPECT_EQ(r.ledger[i].instance_id, lid[i]);
      EXPECT_EQ(r.ledger[i].label, s.Ly[i]);
      EXPECT_EQ(r.ledger[i].provenance, Provenance::seed);
    }
    for (std::size_t i = 0; i < s.U.size(); ++i) {
      const auto& e = r.ledger[s.L.size() + i];
      EXPECT_EQ(e.instance_id, uid[i]);
      EXPECT_NE(e.provenance, Provenance::seed);
      if (e.provenance == Provenance::pseudo) {
        EXPECT_GE(e.confidence, cfg.threshold);
        EXPECT_GE(e.iteration, 1);
        EXPECT_LE(e.iteration, r.iterations);
      }
    }
  }
}

TEST(SelfTrain, FullLabelsEqualSupervised) {
  const auto b = testkit::make_blobs(25, 2, 3, 1.0, 7);
  const auto s = split_seed(b.y, 1.0, 3);
  EXPECT_EQ(s.labeled.size(), b.y.size());
  EXPECT_TRUE(s.unlabeled.empty());
  const auto r = self_train(knn_config(), b.X, b.y, {}, 2);
  EXPECT_EQ(r.model.serialize(), learners::fit(knn_config().base, b.X, b.y, 2).serialize());
}

TEST(SelfTrain, TransductiveBaseSeesPendingItems) {
  const auto b = testkit::make_blobs(30, 2, 2, 8.0, 8);
  const auto s = split(b, 0.2, 9);
  SelfTrainConfig cfg;
  cfg.base = learners::ClassifierSpec::of(learners::Kind::label_spreading);
  const auto r = self_train(cfg, s.L, s.Ly, s.U, 2);
  EXPECT_EQ(r.pseudo_count + r.fallback_count, s.U.size());
}

TEST(SelfTrain, RejectsBadConfig) {
  const auto b = testkit::make_blobs(5, 2, 2, 1.0, 1);
  auto cfg = knn_config();
  cfg.threshold = 0.0;
  EXPECT_THROW(self_train(cfg, b.X, b.y, {}, 2), ConfigError);
  cfg = knn_config();
  EXPECT_THROW(self_train(cfg, b.X, std::vector<int>(b.y.size(), 0), {}, 2), DataError);
}

TEST(SeedSplit, LargestRemainderCounts) {
  // 7 of class 0, 3 of class 1: quotas at x=.25 are 1.75 and .75 -> 2 + 1
  const std::vector<int> y{0, 0, 0, 0, 0, 0, 0, 1, 1, 1};
  const auto s = split_seed(y, 0.25, 1);
  ASSERT_EQ(s.labeled.size(), 3u);
  std::map<int, int> counts;
  for (auto i : s.labeled) ++counts[y[i]];
  EXPECT_EQ(counts[0], 2);
  EXPECT_EQ(counts[1], 1);
  EXPECT_TRUE(std::is_sorted(s.labeled.begin(), s.labeled.end()));
  EXPECT_TRUE(std::is_sorted(s.unlabeled.begin(), s.unlabeled.end()));
}

TEST(SeedSplit, EveryClassGetsASeed) {
  std::vector<int> y(97, 0);
  y[5] = 1;
  y[50] = 2;
  const auto s = split_seed(y, 0.1, 2);
  EXPECT_EQ(s.labeled.size(), 10u);
  std::map<int, int> counts;
  for (auto i : s.labeled) ++counts[y[i]];
  EXPECT_EQ(counts[1], 1);
  EXPECT_EQ(counts[2], 1);
  EXPECT_THROW(split_seed({0, 1, 2, 0}, 0.25, 1), DataError);
  EXPECT_THROW(split_seed({0, 1}, 0.0, 1), ConfigError);
}

TEST(SeedSplitProperty, PartitionAndDeterminism) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> y(20 + rng.index(200));
    for (auto& v : y) v = static_cast<int>(rng.index(3));
    y[0] = 0;
    y[1] = 1;
    y[2] = 2;
    const double x = rng.uniform(0.15, 1.0);
    const auto seed = rng.next();
    const auto a = split_seed(y, x, seed);
    EXPECT_EQ(a.labeled, split_seed(y, x, seed).labeled);
    EXPECT_EQ(a.labeled.size(), static_cast<std::size_t>(std::llround(x * static_cast<double>(y.size()))));
    std::vector<bool> seen(y.size(), false);
    for (auto i : a.labeled) seen[i] = true;
    for (auto i : a.unlabeled) {
      EXPECT_FALSE(seen[i]);
      seen[i] = true;
    }
    EXPECT_EQ(std::count(seen.begin(), seen.end(), true), static_cast<long>(y.size()));
  }
}

TEST(Ledger, RoundTrip) {
  const std::vector<LedgerEntry> ledger{{"a", 0, Provenance::seed, 0, 1.0},
                                        {"b", 1, Provenance::pseudo, 3, 0.95},
                                        {"c", 0, Provenance::fallback, 0, 0.5}};
  testkit::TempDir dir("ledger");
  {
    csv::Writer w(dir / "l.csv");
    write_ledger(w, ledger, {"no", "yes"});
    w.commit();
  }
  const auto back = read_ledger(csv::read(dir / "l.csv"), {"no", "yes"});
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].provenance_token(), "pseudo_iteration_3");
  EXPECT_EQ(back[2].provenance_token(), "fallback_final_pass");
  EXPECT_EQ(back[1].label, 1);
  EXPECT_DOUBLE_EQ(back[1].confidence, 0.95);
  EXPECT_THROW(read_ledger(csv::read(dir / "l.csv"), {"no"}), DataError);
}
