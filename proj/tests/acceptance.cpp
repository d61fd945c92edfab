// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include <fmt/ranges.h>
#include <json.hpp>

#include "backchannel/annotations.hpp"
#include "backchannel/evaluation.hpp"
#include "backchannel/experiments.hpp"
#include "backchannel/learners.hpp"
#include "backchannel/persona.hpp"
#include "backchannel/pipeline.hpp"
#include "backchannel/sampling.hpp"
#include "backchannel/selftrain.hpp"
#include "backchannel/stats.hpp"
#include "backchannel/synth.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace bc;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Checker {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ |= !ok;
  }
  bool failed() const { return failed_; }
  std::string failures() const {
    std::string s;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + f;
    return s;
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_;
};

Outcome finish(const Checker& c, std::string detail) {
  if (c.failed()) return {false, c.failures()};
  return {true, std::move(detail)};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Shared synthetic corpus for the learning criteria

const synth::Corpus& default_corpus() {
  static const synth::Corpus c = synth::generate(synth::SynthConfig{});
  return c;
}

const pipeline::Assembly& default_assembly() {
  static const pipeline::Assembly a = [] {
    const auto& c = default_corpus();
    return pipeline::assemble(c.conversations, c.annotations, c.vad, 7);
  }();
  return a;
}

pipeline::Dataset default_dataset(pipeline::Task task, pipeline::Stage stage, bool series = false) {
  pipeline::DatasetOptions opt;
  opt.task = task;
  opt.stage = stage;
  opt.keep_series = series;
  return pipeline::build_dataset(default_assembly().instances, default_corpus().streams,
                                 features::FeatureSchema::standard(), opt);
}

learners::ClassifierSpec reduced(learners::Kind k, std::uint64_t seed = 1) {
  auto s = learners::ClassifierSpec::of(k, seed);
  s.forest.trees = 30;
  s.adaboost.rounds = 50;
  s.mlp.hidden = {32};
  s.mlp.epochs = 40;
  s.resnet.blocks = 1;
  s.resnet.filters = 8;
  s.resnet.kernels = {5};
  s.resnet.epochs = 5;
  return s;
}

// ---------------------------------------------------------------------------
// 1. Consensus clustering against exhaustive partition search

Outcome consensus_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  Rng rng(1);
  std::size_t instances = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = oracle::random_case(rng, 6);
    const auto valid = oracle::valid_clusterings(a);
    if (valid.size() != 1) {
      c.require(false, fmt::format("case {} admits {} clusterings", trial, valid.size()));
      continue;
    }
    const auto want = oracle::consensus_of(a, valid[0]);
    const auto got = annotations::merge(a).instances;
    bool same = want.size() == got.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) {
      auto ids = got[i].member_ids, want_ids = want[i].ids;
      std::sort(ids.begin(), ids.end());
      std::sort(want_ids.begin(), want_ids.end());
      same = got[i].interval.onset_s == want[i].onset && got[i].interval.offset_s == want[i].offset &&
             got[i].signals.bits() == want[i].signals && got[i].support == want[i].support && ids == want_ids;
    }
    c.require(same, fmt::format("case {} differs from the oracle", trial));
    instances += got.size();
  }
  const double secs = seconds_since(t0);
  c.require(secs < 10.0, fmt::format("took {:.1f} s", secs));
  return finish(c, fmt::format("1000 cases, {} consensus instances, {:.2f} s", instances, secs));
}

// ---------------------------------------------------------------------------
// 2. Fleiss' kappa

Outcome fleiss() {
  Checker c;
  const auto perfect = annotations::fleiss_kappa({3, 2, {{3, 0}, {0, 3}, {0, 3}, {3, 0}}});
  c.require(perfect && *perfect == 1.0, "perfect agreement is not exactly 1");
  const auto hand = annotations::fleiss_kappa({3, 2, {{3, 0}, {2, 1}}});
  c.require(hand && std::abs(*hand + 0.2) <= 1e-9, fmt::format("hand case gave {}", hand.value_or(NAN)));
  return finish(c, fmt::format("perfect = {}, hand case = {:.12f}", perfect.value_or(NAN), hand.value_or(NAN)));
}

// ---------------------------------------------------------------------------
// 3. Negative sampler constraints

Outcome negative_sampler() {
  Checker c;
  Rng rng(3);
  std::size_t total = 0, violations = 0;
  double shortest = 1e9, longest = 0;
  while (total < 10000) {
    const double span = 30 + rng.uniform() * 150;
    sampling::VoiceActivity vad{"c", "s", {}};
    for (double t = rng.uniform() * 5; t < span; t += 3 + rng.uniform() * 10)
      vad.speech.push_back({t, std::min(span, t + rng.uniform(0.2, 4))});
    vad.speech = sampling::normalize(vad.speech);
    std::vector<annotations::ConsensusInstance> pos;
    for (double t = rng.uniform() * 5; t + 2 < span; t += 2 + rng.uniform() * 8) {
      annotations::ConsensusInstance p;
      p.interval = {t, t + rng.uniform(0.3, 2)};
      p.signals = {SignalKind::Nod};
      p.support = 2;
      pos.push_back(p);
    }
    const auto negs = sampling::sample_negatives("c", "s", sampling::eligible_regions({0, span}, vad, pos), rng.next());
    for (std::size_t i = 0; i < negs.size(); ++i) {
      const auto& iv = negs[i].interval;
      bool bad = iv.duration() < 1.06 || iv.duration() > 5.43 || iv.onset_s < 0 || iv.offset_s > span;
      for (std::size_t j = i + 1; j < negs.size(); ++j) bad |= overlaps(iv, negs[j].interval);
      for (const auto& s : vad.speech) bad |= overlaps(iv, s);
      for (const auto& p : pos) bad |= overlaps(iv, p.interval);
      violations += bad;
      shortest = std::min(shortest, iv.duration());
      longest = std::max(longest, iv.duration());
    }
    total += negs.size();
  }
  c.require(violations == 0, fmt::format("{} violations", violations));
  return finish(c, fmt::format("{} samples, lengths in [{:.3f}, {:.3f}], 0 violations", total, shortest, longest));
}

// ---------------------------------------------------------------------------
// 4. Self-training at x = 1 equals the supervised baseline

Outcome degenerate_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  const auto full = default_dataset(pipeline::Task::opportunity, pipeline::Stage::identification, true);
  std::vector<std::size_t> idx(full.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(4);
  rng.shuffle(idx);
  idx.resize(std::min<std::size_t>(300, idx.size()));
  std::sort(idx.begin(), idx.end());
  const auto d = full.subset(idx);
  std::vector<std::string> kinds;
  for (auto k : {learners::Kind::knn, learners::Kind::random_forest, learners::Kind::adaboost, learners::Kind::mlp,
                 learners::Kind::resnet_ts, learners::Kind::label_spreading}) {
    experiments::SweepConfig cfg;
    cfg.specs = {reduced(k)};
    cfg.grid = {1.0};
    cfg.simulations = 1;
    cfg.folds = 5;
    cfg.seed = 44;
    const auto sweep = experiments::sensitivity_sweep(cfg, d).cells.at(0);
    const auto base = experiments::supervised_cv(cfg.specs[0], d, 1, 5, cfg.seed);
    const bool same = sweep.mean_accuracy == base.mean_accuracy &&
                      sweep.mean_precision_weighted == base.mean_precision_weighted &&
                      sweep.mean_recall_weighted == base.mean_recall_weighted &&
                      sweep.mean_f1_weighted == base.mean_f1_weighted && sweep.runs == base.runs;
    c.require(same, fmt::format("{}: sweep {:.17g} vs supervised {:.17g}", cfg.specs[0].name(), sweep.mean_accuracy,
                                base.mean_accuracy));
    kinds.push_back(fmt::format("{}={:.4f}", cfg.specs[0].name(), base.mean_accuracy));
  }
  const double secs = seconds_since(t0);
  c.require(secs < 60.0, fmt::format("took {:.1f} s", secs));
  return finish(c, fmt::format("{} instances; {}; {:.1f} s", d.size(), fmt::join(kinds, " "), secs));
}

// ---------------------------------------------------------------------------
// 5. Accuracy at 25% seed labels against 100%

Outcome elbow_reproduction() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  const auto d = default_dataset(pipeline::Task::opportunity, pipeline::Stage::identification);
  std::size_t positives = 0;
  for (int v : d.y) positives += v == 1;
  experiments::SweepConfig cfg;
  cfg.specs = {reduced(learners::Kind::knn), reduced(learners::Kind::random_forest),
               reduced(learners::Kind::adaboost)};
  cfg.grid = {0.25, 1.0};
  cfg.simulations = 1;
  cfg.folds = 5;
  cfg.seed = 55;
  const auto r = experiments::sensitivity_sweep(cfg, d);
  std::string best;
  double best_full = -1;
  for (const auto& s : cfg.specs)
    if (r.cell(s.name(), 1.0).mean_accuracy > best_full) {
      best_full = r.cell(s.name(), 1.0).mean_accuracy;
      best = s.name();
    }
  const double quarter = r.cell(best, 0.25).mean_accuracy;
  const double ratio = quarter / best_full;
  c.require(ratio >= 0.95, fmt::format("{}: acc(25%) / acc(100%) = {:.4f}", best, ratio));
  const double secs = seconds_since(t0);
  c.require(secs < 300.0, fmt::format("took {:.1f} s", secs));
  return finish(c, fmt::format("{} instances ({} positive); best {} acc 100% = {:.4f}, 25% = {:.4f}, ratio {:.4f}; {:.1f} s",
                               d.size(), positives, best, best_full, quarter, ratio, secs));
}

// ---------------------------------------------------------------------------
// 6. Pseudo-label vs human-label prediction

double paradigm_ratio(pipeline::Task task, const learners::ClassifierSpec& prediction, bool smote, std::string& note) {
  const auto ident = default_dataset(task, pipeline::Stage::identification);
  const auto split = selftrain::split_seed(ident.y, 0.25, derive_seed(66, {stable_hash(to_string(task))}));
  std::vector<learners::Example> L, U;
  std::vector<int> Ly;
  std::vector<std::string> Lid, Uid;
  for (auto i : split.labeled) {
    L.push_back(ident.X[i]);
    Ly.push_back(ident.y[i]);
    Lid.push_back(ident.ids[i]);
  }
  for (auto i : split.unlabeled) {
    U.push_back(ident.X[i]);
    Uid.push_back(ident.ids[i]);
  }
  selftrain::SelfTrainConfig st;
  st.base = reduced(learners::Kind::random_forest, 67);
  const auto r = selftrain::self_train(st, L, Ly, U, ident.classes(), Lid, Uid);
  std::map<std::string, int> by_id;
  for (const auto& e : r.ledger) by_id[e.instance_id] = e.label;

  const auto d = default_dataset(task, pipeline::Stage::prediction);
  std::vector<int> pseudo;
  for (const auto& id : d.ids) pseudo.push_back(by_id.at(id));
  experiments::ParadigmConfig pc;
  pc.spec = prediction;
  pc.smote = smote;
  pc.seed = 68;
  const auto cmp = experiments::compare_paradigms(pc, d, pseudo);
  const double ratio = experiments::ratio_of(cmp, "f1_weighted");
  note += fmt::format("{}: {} instances, f1w human {:.4f} pseudo {:.4f} ratio {:.4f}; ", to_string(task), d.size(),
                      cmp.human.pooled.f1_weighted, cmp.pseudo.pooled.f1_weighted, ratio);
  return ratio;
}

Outcome paradigm_reproduction() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  std::string note;
  const double opp = paradigm_ratio(pipeline::Task::opportunity, reduced(learners::Kind::random_forest, 61), false, note);
  const double sig = paradigm_ratio(pipeline::Task::signal, reduced(learners::Kind::adaboost, 62), true, note);
  for (double r : {opp, sig}) c.require(r >= 0.85 && r <= 1.05, fmt::format("ratio {:.4f} outside [0.85, 1.05]", r));
  const double secs = seconds_since(t0);
  c.require(secs < 300.0, fmt::format("took {:.1f} s", secs));
  return finish(c, fmt::format("{}{:.1f} s", note, secs));
}

// ---------------------------------------------------------------------------
// 7. Analytic gradients against central differences

template <typename Net, typename Inputs>
double max_relative_error(const Net& net, const Inputs& X, const std::vector<int>& y, Rng& rng) {
  auto theta = net.initialize(rng);
  for (double& v : theta) v += rng.normal(0, 0.05);
  std::vector<std::size_t> batch(y.size());
  std::iota(batch.begin(), batch.end(), 0);
  std::vector<double> grad, scratch;
  net.loss_and_grad(theta, X, y, batch, grad);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); i += 1 + theta.size() / 40) {
    auto plus = theta, minus = theta;
    plus[i] += h;
    minus[i] -= h;
    const double numeric =
        (net.loss_and_grad(plus, X, y, batch, scratch) - net.loss_and_grad(minus, X, y, batch, scratch)) / (2 * h);
    worst = std::max(worst, std::abs(grad[i] - numeric) / std::max({std::abs(grad[i]), std::abs(numeric), 1e-4}));
  }
  return worst;
}

Outcome gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  Rng rng(7);
  double worst_mlp = 0, worst_resnet = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t classes = 2 + rng.index(3), dim = 2 + rng.index(6);
    const auto b = testkit::make_blobs(1 + rng.index(3), classes, dim, 1.0, rng.next());
    std::vector<int> hidden{static_cast<int>(2 + rng.index(6))};
    if (rng.bernoulli(0.5)) hidden.push_back(static_cast<int>(2 + rng.index(5)));
    worst_mlp = std::max(worst_mlp, max_relative_error(learners::MlpNetwork(dim, hidden, classes),
                                                       learners::vectors_of(b.X), b.y, rng));

    const std::size_t channels = 1 + rng.index(3), frames = 5 + rng.index(6);
    const auto s = testkit::make_series_blobs(1 + rng.index(2), classes, channels, frames, 1.0, rng.next());
    learners::ResNetParams p;
    p.blocks = 1 + static_cast<int>(rng.index(2));
    p.filters = 2 + static_cast<int>(rng.index(3));
    p.kernels = {static_cast<int>(2 + rng.index(3)), static_cast<int>(1 + rng.index(3))};
    std::vector<const features::Series*> X;
    for (const auto& e : s.X) X.push_back(e.series.get());
    worst_resnet = std::max(worst_resnet, max_relative_error(learners::ResNetNetwork(channels, p, classes), X, s.y, rng));
  }
  c.require(worst_mlp < 1e-3, fmt::format("mlp relative error {:.3g}", worst_mlp));
  c.require(worst_resnet < 1e-3, fmt::format("resnet_ts relative error {:.3g}", worst_resnet));
  const double secs = seconds_since(t0);
  c.require(secs < 30.0, fmt::format("took {:.1f} s", secs));
  return finish(c, fmt::format("20 instances each; max relative error mlp {:.2g}, resnet_ts {:.2g}; {:.1f} s", worst_mlp,
                               worst_resnet, secs));
}

// ---------------------------------------------------------------------------
// 8. SMOTE on synthetic feature vectors

Outcome smote_balance() {
  Checker c;
  synth::SynthConfig cfg;
  cfg.conversations = 3;
  cfg.duration_s = 200;
  cfg.seed = 8;
  const auto corpus = synth::generate(cfg);
  const auto& schema = features::FeatureSchema::standard();
  std::vector<const features::FeatureStream*> streams;
  for (const auto& [k, s] : corpus.streams) streams.push_back(s.get());
  Rng rng(8);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  for (auto [label, n] : std::vector<std::pair<int, int>>{{0, 1593}, {1, 326}, {2, 835}})
    for (int i = 0; i < n; ++i) {
      const auto& s = *streams[rng.index(streams.size())];
      const double on = rng.uniform(s.span().onset_s, s.span().offset_s - 2.0);
      X.push_back(features::aggregate(features::cut_identification_window(s, {on, on + rng.uniform(0.5, 1.9)}), schema));
      y.push_back(label);
    }
  const learners::SmoteParams params;
  const auto r = learners::smote(X, y, params, 88);
  std::map<int, std::size_t> counts;
  for (int v : r.y) ++counts[v];
  c.require(counts == std::map<int, std::size_t>{{0, 1593}, {1, 1593}, {2, 1593}}, "class counts not balanced");
  for (std::size_t i = 0; i < X.size(); ++i) c.require(r.X[i] == X[i] && r.y[i] == y[i], "original rows changed");
  c.require(r.origins.size() + X.size() == r.X.size(), "origins do not cover the synthetic rows");
  auto dist2 = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
  };
  double worst = 0;
  for (std::size_t s = 0; s < r.origins.size(); ++s) {
    const auto& o = r.origins[s];
    const auto& row = r.X[X.size() + s];
    const int cls = r.y[X.size() + s];
    c.require(y[o.base] == cls && y[o.neighbor] == cls && o.base != o.neighbor, "neighbor from another class");
    c.require(o.lambda >= 0.0 && o.lambda <= 1.0, "lambda outside [0, 1]");
    std::vector<double> others;
    for (std::size_t j = 0; j < X.size(); ++j)
      if (y[j] == cls && j != o.base) others.push_back(dist2(X[o.base], X[j]));
    std::nth_element(others.begin(), others.begin() + static_cast<long>(params.k - 1), others.end());
    c.require(dist2(X[o.base], X[o.neighbor]) <= others[static_cast<std::size_t>(params.k - 1)],
              "neighbor is not among the k nearest of its class");
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double want = X[o.base][j] + o.lambda * (X[o.neighbor][j] - X[o.base][j]);
      worst = std::max(worst, std::abs(row[j] - want));
    }
  }
  c.require(worst <= 1e-9, fmt::format("convex combination error {:.3g}", worst));
  return finish(c, fmt::format("1593/326/835 -> 1593/1593/1593 on {}-dim aggregates; max deviation {:.2g}",
                               X.front().size(), worst));
}

// ---------------------------------------------------------------------------
// 9. Statistics against enumeration

Outcome statistics() {
  Checker c;
  Rng rng(9);
  std::size_t ks_cases = 0, w_cases = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<double> a(1 + rng.index(8)), b(1 + rng.index(8));
    for (auto& v : a) v = static_cast<double>(rng.index(6));
    for (auto& v : b) v = static_cast<double>(rng.index(6)) + (rng.bernoulli(0.3) ? 0.5 : 0.0);
    const auto r = stats::ks_two_sample(a, b);
    const auto [num, den] = oracle::ks_statistic(a, b);
    c.require(r.d_numerator * den == num * r.d_denominator, fmt::format("KS D differs on case {}", trial));
    const double ne = static_cast<double>(a.size() * b.size()) / static_cast<double>(a.size() + b.size());
    c.require(std::abs(r.p - oracle::kolmogorov_tail(std::sqrt(ne) * r.d)) <= 1e-6, "KS p differs");
    ++ks_cases;

    std::vector<double> u(1 + rng.index(8)), v(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = static_cast<double>(rng.index(7));
      v[i] = static_cast<double>(rng.index(7));
    }
    const auto w = stats::wilcoxon_signed_rank(u, v);
    const auto o = oracle::wilcoxon(u, v);
    c.require(w.degenerate == o.degenerate, "Wilcoxon degenerate flag differs");
    if (!o.degenerate) {
      c.require(w.w == o.w && w.p == o.p && w.exact, fmt::format("Wilcoxon differs on case {}", trial));
      ++w_cases;
    }
  }
  const auto d = stats::ks_two_sample({1, 2, 3}, {2, 3, 4});
  c.require(d.d_numerator * 3 == d.d_denominator && d.d == 1.0 / 3.0, "D = 1/3 example");
  const auto w = stats::wilcoxon_signed_rank({2, 1, 5}, {1, 3, 2});
  c.require(w.w == 2.0 && w.p == 0.75, "W = 2, p = 0.75 example");
  return finish(c, fmt::format("{} KS and {} Wilcoxon cases with n <= 8; D = {}/{}, W = {}, p = {}", ks_cases, w_cases,
                               d.d_numerator, d.d_denominator, w.w, w.p));
}

// ---------------------------------------------------------------------------
// 10. Persona sampler frequencies

Outcome persona_sampler() {
  using K = SignalKind;
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  const std::vector<std::pair<SignalSet, double>> visual_uni{{{K::Nod}, .83}, {{K::HeadShake}, .08}, {{K::MouthSmile}, .09}};
  const std::vector<std::pair<SignalSet, double>> visual_multi{{{K::Nod, K::MouthSmile}, .60},
                                                               {{K::HeadShake, K::MouthSmile}, .40}};
  const std::vector<std::pair<SignalSet, double>> verbal_multi{{{K::Nod, K::Utterance}, .80},
                                                               {{K::MouthSmile, K::Utterance}, .13},
                                                               {{K::HeadShake, K::Utterance}, .05},
                                                               {{K::HeadShake, K::Utterance, K::MouthSmile}, .01},
                                                               {{K::Nod, K::Utterance, K::MouthSmile}, .01}};
  std::string note;
  double worst = 0;
  for (const auto& [profile, p_multi] : std::vector<std::pair<persona::PersonaProfile, double>>{
           {persona::PersonaProfile::extrovert(), 0.51}, {persona::PersonaProfile::introvert(), 0.35}}) {
    for (auto cat : {persona::SignalCategory::visual, persona::SignalCategory::verbal}) {
      Rng rng(derive_seed(10, {stable_hash(profile.label), static_cast<std::uint64_t>(cat)}));
      const int n = 100000;
      int multi = 0;
      std::map<std::uint8_t, int> uni_counts, multi_counts;
      for (int i = 0; i < n; ++i) {
        const auto r = persona::sample_response(profile, cat, rng);
        multi += r.multimodal;
        ++(r.multimodal ? multi_counts : uni_counts)[r.signals.bits()];
      }
      const double branch = multi / double(n);
      worst = std::max(worst, std::abs(branch - p_multi));
      c.require(std::abs(branch - p_multi) <= 0.01,
                fmt::format("{} {} multimodal share {:.4f}", profile.label, to_string(cat), branch));
      c.require(std::abs((n - multi) / double(n) - (1 - p_multi)) <= 0.01, "unimodal share");
      auto check = [&](const std::vector<std::pair<SignalSet, double>>& table, std::map<std::uint8_t, int>& counts,
                       int total) {
        for (const auto& [set, p] : table) {
          const double f = counts[set.bits()] / double(total);
          worst = std::max(worst, std::abs(f - p));
          c.require(std::abs(f - p) <= 0.01, fmt::format("{} {} frequency {:.4f} vs {}", profile.label,
                                                         set.to_string(), f, p));
        }
      };
      if (cat == persona::SignalCategory::visual) {
        check(visual_uni, uni_counts, n - multi);
        check(visual_multi, multi_counts, multi);
      } else {
        check(verbal_multi, multi_counts, multi);
        c.require(uni_counts.size() == 1 && uni_counts.count(SignalSet{K::Utterance}.bits()), "verbal unimodal");
      }
    }
    note += fmt::format("{} {:.2f}/{:.2f}; ", profile.label, p_multi, 1 - p_multi);
  }
  const double secs = seconds_since(t0);
  c.require(secs < 10.0, fmt::format("took {:.1f} s", secs));
  return finish(c, fmt::format("{}max deviation {:.4f}; {:.2f} s", note, worst, secs));
}

// ---------------------------------------------------------------------------
// 11. Metrics against a direct tally

Outcome metrics() {
  Checker c;
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.index(4));
    std::vector<int> t(1 + rng.index(100)), p(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<int>(rng.index(static_cast<std::size_t>(k)));
      p[i] = rng.bernoulli(0.6) ? t[i] : static_cast<int>(rng.index(static_cast<std::size_t>(k)));
    }
    const auto r = evaluation::compute_metrics(t, p, static_cast<std::size_t>(k));
    const auto o = oracle::tally(t, p, k);
    bool same = r.accuracy == o.accuracy && r.precision_weighted == o.precision_w && r.recall_weighted == o.recall_w &&
                r.f1_weighted == o.f1_w;
    for (int j = 0; j < k; ++j) {
      const auto& pc = r.per_class[static_cast<std::size_t>(j)];
      const auto jj = static_cast<std::size_t>(j);
      same &= pc.precision == o.precision[jj] && pc.recall == o.recall[jj] && pc.f1 == o.f1[jj];
    }
    c.require(same, fmt::format("vector {} differs from the tally", trial));
  }
  const evaluation::Matrix a{{0.8, 0.2}, {0.4, 0.6}};
  const evaluation::Matrix b{{0.6, 0.4}, {0.2, 0.8}};
  const auto w = evaluation::worst_case_confusion({a, b});
  c.require(std::abs(w[0][0] - 0.6) < 1e-12 && std::abs(w[0][1] - 0.4) < 1e-12 && std::abs(w[1][0] - 0.4) < 1e-12 &&
                std::abs(w[1][1] - 0.6) < 1e-12,
            "worst-case hand example");
  return finish(c, fmt::format("1000 label vectors exact; worst case [[{}, {}], [{}, {}]]", w[0][0], w[0][1], w[1][0],
                               w[1][1]));
}

// ---------------------------------------------------------------------------
// 12. CLI chain determinism across worker counts

int bcpipe(const std::string& args, const fs::path& log) {
  const auto cmd = fmt::format("\"{}\" {} >> \"{}\" 2>&1", BCPIPE_PATH, args, log.string());
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = testkit::slurp(e.path());
  return out;
}

Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker c;
  testkit::TempDir dir("acceptance_chain");
  const json cfg = {
      {"seed", 12},
      {"paths", {{"corpus", (dir / "corpus").string()}, {"output", (dir / "out").string()}}},
      {"synth", {{"conversations", 6}, {"duration_s", 150.0}}},
      {"identification", {{"classifier", {{"kind", "random_forest"}, {"params", {{"trees", 10}}}}}}},
      {"prediction",
       {{"opportunity", {{"kind", "random_forest"}, {"params", {{"trees", 10}}}}},
        {"signal", {{"kind", "adaboost"}, {"params", {{"rounds", 20}}}}}}},
      {"sweep",
       {{"classifiers", {{{"kind", "knn"}}, {{"kind", "random_forest"}, {"params", {{"trees", 10}}}}}},
        {"grid", {0.25, 1.0}},
        {"simulations", 1},
        {"folds", 3}}},
      {"groups", 4}};
  const auto config = dir / "pipeline.json";
  std::ofstream(config) << cfg.dump(2);
  {
    std::ofstream a(dir / "ratings_a.csv"), b(dir / "ratings_b.csv");
    a << "rating\n4\n5\n3\n4\n5\n2\n";
    b << "rating\n3\n4\n3\n2\n4\n3\n";
  }
  const std::vector<std::string> steps{
      "synth-gen",
      "merge",
      "sample-neg",
      "featurize",
      "identify --task opportunity",
      "identify --task signal",
      "sweep --task opportunity",
      "predict-train --task opportunity --paradigm human",
      "predict-train --task opportunity --paradigm pseudo",
      "predict-train --task signal --paradigm pseudo",
      "evaluate --task opportunity",
      "evaluate --task signal",
      fmt::format("stats --ratings \"{}\" \"{}\"", (dir / "ratings_a.csv").string(), (dir / "ratings_b.csv").string()),
      "stats",
      "persona-sample --profile extrovert",
      "persona-sample --profile introvert"};
  std::map<std::string, std::string> runs[2];
  const int workers[2] = {1, 8};
  for (int w = 0; w < 2; ++w) {
    fs::remove_all(dir / "corpus");
    fs::remove_all(dir / "out");
    for (const auto& step : steps) {
      const int code = bcpipe(fmt::format("--config \"{}\" --workers {} {}", config.string(), workers[w], step),
                              dir / "log.txt");
      c.require(code == 0, fmt::format("'{}' with {} workers exited {}: {}", step, workers[w], code,
                                       testkit::slurp(dir / "log.txt").substr(0, 400)));
      if (code != 0) return finish(c, "");
    }
    runs[w] = snapshot(dir / "out");
    for (auto& [k, v] : snapshot(dir / "corpus")) runs[w]["corpus/" + k] = v;
  }
  std::size_t differing = 0;
  for (const auto& [name, body] : runs[0]) {
    auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != body) {
      ++differing;
      c.require(false, fmt::format("{} differs", name));
    }
  }
  c.require(runs[0].size() == runs[1].size(), "file sets differ");
  const double secs = seconds_since(t0);
  return finish(c, fmt::format("{} steps, {} files byte-identical with 1 and 8 workers; {:.1f} s", steps.size(),
                               runs[0].size(), secs));
}

}  // namespace

/// Runs every criterion, or only the numbers given on the command line.
int main(int argc, char** argv) {
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"consensus clustering matches exhaustive oracle", consensus_oracle},
      {"Fleiss kappa perfect and hand-derived cases", fleiss},
      {"negative sampler constraints over 10,000 samples", negative_sampler},
      {"self-training at x = 100% equals supervised baseline", degenerate_equivalence},
      {"accuracy at 25% seed labels within 95% of 100%", elbow_reproduction},
      {"pseudo-label to human-label weighted F1 ratio", paradigm_reproduction},
      {"mlp and resnet_ts gradient checks", gradient_checks},
      {"SMOTE balance and convexity", smote_balance},
      {"KS and Wilcoxon against enumeration", statistics},
      {"persona sampler frequencies", persona_sampler},
      {"metrics against brute-force tally", metrics},
      {"synth-gen to evaluate determinism across workers", determinism},
  };
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    ++ran;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    failed += !o.pass;
    std::cout << fmt::format("{} criterion {}: {} ({})", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail)
              << std::endl;
  }
  std::cout << fmt::format("{} of {} criteria passed", ran - failed, ran)
            << std::endl;
  return failed == 0 ? 0 : 1;
}
