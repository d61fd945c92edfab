// bcpipe: command-line driver for the backchannel pipeline.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "backchannel/annotations.hpp"
#include "backchannel/config.hpp"
#include "backchannel/csv.hpp"
#include "backchannel/evaluation.hpp"
#include "backchannel/experiments.hpp"
#include "backchannel/features.hpp"
#include "backchannel/learners.hpp"
#include "backchannel/persona.hpp"
#include "backchannel/pipeline.hpp"
#include "backchannel/sampling.hpp"
#include "backchannel/selftrain.hpp"
#include "backchannel/stats.hpp"
#include "backchannel/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace bc;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string corpus, out;
  int workers = 1;
  bool force = false;

  // synth-gen
  std::optional<int> conversations;
  std::optional<double> duration, detectability, rate;
  // identify / sweep / predict-train / evaluate
  std::string task = "opportunity";
  std::optional<double> x;
  std::string grid, classifiers;
  std::optional<int> simulations, folds;
  std::string paradigm = "human";
  std::string smote;  // on | off | empty (config default)
  // stats
  std::vector<std::string> ratings;
  // persona-sample
  std::string log, profile = "extrovert";
};

struct Context {
  config::PipelineConfig cfg;
  std::string hash;
  int workers = 1;
  bool force = false;

  std::string header() const { return fmt::format("config_hash={} seed={}", hash, cfg.seed); }
  fs::path out(const std::string& name) const { return cfg.paths.out() / name; }

  csv::Writer writer(const fs::path& path) const {
    csv::Writer w(path);
    w.comment(header());
    return w;
  }

  void write_text(const fs::path& path, const std::string& body) const {
    csv::Writer w(path);
    w.comment(header());
    std::string text = w.text() + body;
    write_raw(path, text);
  }

  void write_json(const fs::path& path, json j) const {
    j["config_hash"] = hash;
    j["seed"] = cfg.seed;
    write_raw(path, j.dump(2) + "\n");
  }

  static void write_raw(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(fmt::format("cannot write '{}'", path.string()));
    f << text;
  }
};

Context make_context(const Options& o) {
  Context ctx;
  if (!o.config_path.empty()) {
    ctx.cfg = config::load(o.config_path);
  } else {
    if (!o.seed) throw ConfigError("a seed is required: pass --config FILE or --seed N");
    json j = {{"seed", *o.seed}};
    ctx.cfg = config::from_json(j);
  }
  if (o.seed) ctx.cfg.seed = *o.seed;
  if (!o.corpus.empty()) ctx.cfg.paths.corpus = o.corpus;
  if (!o.out.empty()) ctx.cfg.paths.output = o.out;
  if (o.conversations) ctx.cfg.synth.conversations = *o.conversations;
  if (o.duration) ctx.cfg.synth.duration_s = *o.duration;
  if (o.detectability) ctx.cfg.synth.detectability = *o.detectability;
  if (o.rate) ctx.cfg.synth.rate_per_min = *o.rate;
  if (o.x) ctx.cfg.seed_fraction = *o.x;
  if (o.simulations) ctx.cfg.simulations = *o.simulations;
  if (o.folds) ctx.cfg.folds = *o.folds;
  if (!o.grid.empty()) {
    ctx.cfg.sweep_grid.clear();
    for (const auto& t : csv::split(o.grid)) ctx.cfg.sweep_grid.push_back(csv::to_double(t, "--grid"));
  }
  if (!o.classifiers.empty()) {
    ctx.cfg.sweep_classifiers.clear();
    for (const auto& t : csv::split(o.classifiers))
      ctx.cfg.sweep_classifiers.push_back(learners::ClassifierSpec::of(learners::parse_kind(t)));
  }
  if (!o.smote.empty()) {
    if (o.smote != "on" && o.smote != "off") throw ConfigError("--smote expects on|off");
    ctx.cfg.smote_opportunity = ctx.cfg.smote_signal = o.smote == "on";
  }
  ctx.cfg.synth.seed = ctx.cfg.seed;
  ctx.cfg.validate();
  ctx.hash = config::config_hash(ctx.cfg);
  if (o.workers < 1) throw ConfigError("--workers must be >= 1");
  ctx.workers = o.workers;
  ctx.force = o.force;
  return ctx;
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw DataError(fmt::format("missing input '{}'", p.string()));
}

csv::Table read_table(const fs::path& p) {
  require_file(p);
  return csv::read(p);
}

std::uint64_t stage_seed(const Context& ctx, std::string_view stage, std::string_view task = {}) {
  return derive_seed(ctx.cfg.seed, {stable_hash(stage), stable_hash(task)});
}

std::vector<synth::ConversationInfo> conversations(const Context& ctx) {
  return synth::read_conversations(read_table(ctx.cfg.paths.conversation_file()));
}

json metrics_json(const evaluation::MetricsReport& r) {
  json per = json::object();
  for (std::size_t c = 0; c < r.per_class.size(); ++c)
    per[r.class_names[c]] = {{"precision", r.per_class[c].precision},
                             {"recall", r.per_class[c].recall},
                             {"f1", r.per_class[c].f1},
                             {"support", r.per_class[c].support}};
  json j = {{"accuracy", r.accuracy},
            {"precision_weighted", r.precision_weighted},
            {"recall_weighted", r.recall_weighted},
            {"f1_weighted", r.f1_weighted},
            {"per_class", per},
            {"confusion", r.confusion},
            {"warnings", r.warnings}};
  if (r.positive_class) {
    j["positive_class"] = r.class_names[static_cast<std::size_t>(*r.positive_class)];
    j["positive"] = {{"precision", r.positive().precision}, {"recall", r.positive().recall}, {"f1", r.positive().f1}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands

void run_synth(const Context& ctx) {
  const auto corpus = synth::generate(ctx.cfg.synth, features::FeatureSchema::standard(), ctx.workers);
  fs::create_directories(ctx.cfg.paths.corpus);
  synth::write_corpus(corpus, ctx.cfg.paths.corpus, ctx.header(), features::FeatureSchema::standard(), ctx.workers);
  std::size_t visual = 0, verbal = 0, both = 0, none = 0;
  for (const auto& e : corpus.ground_truth) {
    const auto c = persona::categorize(e.signals);
    if (!c) ++none;
    else if (*c == persona::SignalCategory::visual) ++visual;
    else if (*c == persona::SignalCategory::verbal) ++verbal;
    else ++both;
  }
  ctx.write_json(fs::path(ctx.cfg.paths.corpus) / "synth_report.json",
                 {{"conversations", corpus.conversations.size()},
                  {"events", corpus.ground_truth.size()},
                  {"annotations", corpus.annotations.size()},
                  {"categories", {{"visual", visual}, {"verbal", verbal}, {"both", both}, {"none", none}}}});
  fmt::print("synth-gen: {} conversations, {} events, {} coder annotations -> {}\n", corpus.conversations.size(),
             corpus.ground_truth.size(), corpus.annotations.size(), ctx.cfg.paths.corpus);
}

void run_merge(const Context& ctx) {
  const auto coder = annotations::read_annotations(ctx.cfg.paths.annotation_file());
  const auto convs = conversations(ctx);
  const auto merged = annotations::merge(coder);
  {
    auto w = ctx.writer(ctx.out("consensus.csv"));
    annotations::write_consensus(w, merged.instances);
    w.commit();
  }
  std::vector<std::string> coders;
  for (const auto& a : coder) coders.push_back(a.coder_id);
  std::sort(coders.begin(), coders.end());
  coders.erase(std::unique(coders.begin(), coders.end()), coders.end());

  // Presence per 1 s bin over every listener's conversation, pooled.
  auto pooled_table = [&](std::optional<SignalKind> only) {
    annotations::AgreementTable all;
    all.raters = static_cast<int>(coders.size());
    all.categories = 2;
    std::map<std::pair<std::string, std::string>, std::vector<annotations::CoderAnnotation>> by;
    for (const auto& a : coder) by[{a.conversation_id, a.subject_id}].push_back(a);
    for (const auto& c : convs)
      for (const auto& s : {c.subject_a, c.subject_b}) {
        const auto t = annotations::build_agreement_table(by[{c.id, s}], coders, {0.0, c.duration_s}, 1.0, only);
        all.counts.insert(all.counts.end(), t.counts.begin(), t.counts.end());
      }
    return all;
  };
  auto kappa_text = [](std::optional<double> k) { return k ? fmt::format("{:.6f}", *k) : std::string("undefined"); };
  auto kappa_json = [](std::optional<double> k) { return k ? json(*k) : json(nullptr); };
  std::string text = fmt::format("annotations {}\ncoders {}\nconsensus_instances {}\nclusters {}\nsingle_coder_clusters {}\n"
                                 "dropped_empty_signals {}\n",
                                 coder.size(), coders.size(), merged.instances.size(), merged.diagnostics.clusters,
                                 merged.diagnostics.single_coder_clusters, merged.diagnostics.dropped_empty_signals);
  json j = {{"annotations", coder.size()},
            {"coders", coders},
            {"consensus_instances", merged.instances.size()},
            {"clusters", merged.diagnostics.clusters},
            {"single_coder_clusters", merged.diagnostics.single_coder_clusters},
            {"dropped_empty_signals", merged.diagnostics.dropped_empty_signals}};
  const auto overall = annotations::fleiss_kappa(pooled_table(std::nullopt));
  text += fmt::format("kappa_presence_1s {}\n", kappa_text(overall));
  j["kappa_presence_1s"] = kappa_json(overall);
  for (SignalKind s : kAllSignals) {
    const auto k = annotations::fleiss_kappa(pooled_table(s));
    text += fmt::format("kappa_{} {}\n", to_string(s), kappa_text(k));
    j["kappa_per_signal"][std::string(to_string(s))] = kappa_json(k);
  }
  ctx.write_text(ctx.out("kappa.txt"), text);
  ctx.write_json(ctx.out("kappa.json"), j);
  fmt::print("merge: {} consensus instances, presence kappa {}\n", merged.instances.size(), kappa_text(overall));
}

void run_sample_neg(const Context& ctx) {
  const auto consensus = annotations::read_consensus(read_table(ctx.out("consensus.csv")));
  const auto vad = sampling::read_vad(read_table(ctx.cfg.paths.vad_file()));
  const auto convs = conversations(ctx);
  const auto negatives = pipeline::sample_all_negatives(convs, vad, consensus, stage_seed(ctx, "negatives"));
  const auto instances = pipeline::build_instances(convs, consensus, negatives);
  {
    auto w = ctx.writer(ctx.out("negatives.csv"));
    sampling::write_negatives(w, negatives);
    w.commit();
  }
  {
    auto w = ctx.writer(ctx.out("instances.csv"));
    pipeline::write_instances(w, instances);
    w.commit();
  }
  fmt::print("sample-neg: {} positives, {} negatives\n", consensus.size(), negatives.size());
}

pipeline::StreamMap load_streams(const Context& ctx, const std::vector<synth::ConversationInfo>& convs) {
  return pipeline::load_streams(ctx.cfg.paths.features(), convs, features::FeatureSchema::standard(), ctx.workers);
}

pipeline::DatasetOptions dataset_options(const Context& ctx, pipeline::Stage stage, pipeline::Task task, bool series) {
  pipeline::DatasetOptions o;
  o.stage = stage;
  o.task = task;
  o.feature_set = stage == pipeline::Stage::identification ? ctx.cfg.identification_features : ctx.cfg.prediction_features;
  o.keep_series = series;
  o.workers = ctx.workers;
  return o;
}

void run_featurize(const Context& ctx) {
  const auto instances = pipeline::read_instances(read_table(ctx.out("instances.csv")));
  const auto convs = conversations(ctx);
  const auto streams = load_streams(ctx, convs);
  const auto schema = features::FeatureSchema::standard();
  auto dropped = ctx.writer(ctx.out("dropped.csv"));
  dropped.row({"stage", "task", "instance_id", "reason"});
  json j = json::object();
  for (auto stage : {pipeline::Stage::identification, pipeline::Stage::prediction})
    for (auto task : {pipeline::Task::opportunity, pipeline::Task::signal}) {
      const auto d = pipeline::build_dataset(instances, streams, schema, dataset_options(ctx, stage, task, false));
      auto w = ctx.writer(ctx.out("datasets") / pipeline::dataset_file_name(stage, task));
      pipeline::write_dataset(w, d, schema);
      w.commit();
      for (const auto& x : d.dropped)
        dropped.row({std::string(to_string(stage)), std::string(to_string(task)), x.instance_id, x.reason});
      std::vector<std::size_t> counts(d.classes(), 0);
      for (int y : d.y) ++counts[static_cast<std::size_t>(y)];
      json cls = json::object();
      for (std::size_t c = 0; c < d.classes(); ++c) cls[d.class_names[c]] = counts[c];
      j[fmt::format("{}_{}", to_string(stage), to_string(task))] = {
          {"instances", d.size()}, {"dropped", d.dropped.size()}, {"classes", cls}};
      fmt::print("featurize: {} {}: {} instances, {} dropped\n", to_string(stage), to_string(task), d.size(),
                 d.dropped.size());
    }
  dropped.commit();
  ctx.write_json(ctx.out("featurize.json"), j);
}

/// Reads a cached dataset, or rebuilds it with windows when the learner needs them.
pipeline::Dataset load_dataset(const Context& ctx, pipeline::Stage stage, pipeline::Task task, bool series) {
  if (!series) {
    const auto table = read_table(ctx.out("datasets") / pipeline::dataset_file_name(stage, task));
    return pipeline::read_dataset(table, features::FeatureSchema::standard());
  }
  const auto instances = pipeline::read_instances(read_table(ctx.out("instances.csv")));
  const auto convs = conversations(ctx);
  return pipeline::build_dataset(instances, load_streams(ctx, convs), features::FeatureSchema::standard(),
                                 dataset_options(ctx, stage, task, true));
}

std::string ledger_name(pipeline::Task t) { return fmt::format("identify_{}_ledger.csv", to_string(t)); }

void write_model(const Context& ctx, const fs::path& path, const learners::FittedModel& m) {
  Context::write_raw(path, fmt::format("#{}\n{}", ctx.header(), m.serialize()));
}

void run_identify(const Context& ctx, pipeline::Task task) {
  const auto& spec = ctx.cfg.identification;
  const auto d = load_dataset(ctx, pipeline::Stage::identification, task, spec.uses_series());
  const auto split = selftrain::split_seed(d.y, ctx.cfg.seed_fraction, stage_seed(ctx, "identify-split", to_string(task)));
  std::vector<learners::Example> L, U;
  std::vector<int> Ly;
  std::vector<std::string> Lid, Uid;
  for (std::size_t i : split.labeled) {
    L.push_back(d.X[i]);
    Ly.push_back(d.y[i]);
    Lid.push_back(d.ids[i]);
  }
  for (std::size_t i : split.unlabeled) {
    U.push_back(d.X[i]);
    Uid.push_back(d.ids[i]);
  }
  selftrain::SelfTrainConfig st;
  st.base = spec;
  st.base.seed = stage_seed(ctx, "identify-model", to_string(task));
  st.threshold = ctx.cfg.threshold;
  st.max_iterations = ctx.cfg.max_iterations;
  st.seed_fraction = ctx.cfg.seed_fraction;
  const auto r = selftrain::self_train(st, L, Ly, U, d.classes(), Lid, Uid, ctx.workers);
  {
    auto w = ctx.writer(ctx.out(ledger_name(task)));
    selftrain::write_ledger(w, r.ledger, d.class_names);
    w.commit();
  }
  write_model(ctx, ctx.out(fmt::format("models/identify_{}.model", to_string(task))), r.model);
  std::size_t hidden_agree = 0;
  for (std::size_t k = 0; k < split.unlabeled.size(); ++k)
    hidden_agree += r.ledger[L.size() + k].label == d.y[split.unlabeled[k]];
  const double agreement = U.empty() ? 1.0 : static_cast<double>(hidden_agree) / static_cast<double>(U.size());
  const double fallback = d.size() ? static_cast<double>(r.fallback_count) / static_cast<double>(d.size()) : 0.0;
  const std::string text = fmt::format(
      "task {}\nclassifier {}\nseed_fraction {:.6f}\ninstances {}\nlabeled {}\nunlabeled {}\niterations {}\n"
      "pseudo_labeled {}\nfallback_labeled {}\nfallback_fraction {:.6f}\nunlabeled_agreement {:.6f}\n",
      to_string(task), spec.name(), ctx.cfg.seed_fraction, d.size(), L.size(), U.size(), r.iterations, r.pseudo_count,
      r.fallback_count, fallback, agreement);
  ctx.write_text(ctx.out(fmt::format("identify_{}.txt", to_string(task))), text);
  ctx.write_json(ctx.out(fmt::format("identify_{}.json", to_string(task))),
                 {{"task", to_string(task)},
                  {"classifier", learners::to_json(spec)},
                  {"seed_fraction", ctx.cfg.seed_fraction},
                  {"instances", d.size()},
                  {"labeled", L.size()},
                  {"unlabeled", U.size()},
                  {"iterations", r.iterations},
                  {"pseudo_labeled", r.pseudo_count},
                  {"fallback_labeled", r.fallback_count},
                  {"fallback_fraction", fallback},
                  {"unlabeled_agreement", agreement}});
  fmt::print("identify {}: {} iterations, {} pseudo, {} fallback, agreement on unlabeled {:.4f}\n", to_string(task),
             r.iterations, r.pseudo_count, r.fallback_count, agreement);
}

void run_sweep(const Context& ctx, pipeline::Task task) {
  const auto sc = ctx.cfg.sweep_config(ctx.workers);
  const bool series = std::any_of(sc.specs.begin(), sc.specs.end(), [](const auto& s) { return s.uses_series(); });
  const auto d = load_dataset(ctx, pipeline::Stage::identification, task, series);
  const auto r = experiments::sensitivity_sweep(sc, d);
  {
    auto w = ctx.writer(ctx.out(fmt::format("sweep_{}.csv", to_string(task))));
    experiments::write_sweep(w, r);
    w.commit();
  }
  ctx.write_text(ctx.out(fmt::format("sweep_{}_elbow.txt", to_string(task))), experiments::format_elbows(r));
  json cells = json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"classifier", c.classifier},
                     {"x", c.x},
                     {"mean_accuracy", c.mean_accuracy},
                     {"std_accuracy", c.std_accuracy},
                     {"mean_f1_weighted", c.mean_f1_weighted},
                     {"ledger_agreement", c.mean_ledger_agreement},
                     {"fallback_fraction", c.mean_fallback_fraction},
                     {"runs", c.runs}});
  ctx.write_json(ctx.out(fmt::format("sweep_{}.json", to_string(task))),
                 {{"task", to_string(task)}, {"cells", cells}, {"elbow", r.elbow}});
  fmt::print("{}", experiments::format_elbows(r));
}

const learners::ClassifierSpec& prediction_spec(const Context& ctx, pipeline::Task task) {
  return task == pipeline::Task::opportunity ? ctx.cfg.prediction_opportunity : ctx.cfg.prediction_signal;
}

bool prediction_smote(const Context& ctx, pipeline::Task task) {
  return task == pipeline::Task::opportunity ? ctx.cfg.smote_opportunity : ctx.cfg.smote_signal;
}

/// Labels of the dataset's instances taken from the identification ledger.
std::vector<int> ledger_labels(const csv::Table& ledger_table, const pipeline::Dataset& d) {
  const auto ledger = selftrain::read_ledger(ledger_table, d.class_names);
  std::map<std::string, int> by_id;
  for (const auto& e : ledger) by_id[e.instance_id] = e.label;
  std::vector<int> out;
  for (const auto& id : d.ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError(fmt::format("ledger has no entry for instance {}", id));
    out.push_back(it->second);
  }
  return out;
}

void check_hashes(const Context& ctx, const std::vector<std::pair<std::string, std::string>>& inputs) {
  for (const auto& [name, h] : inputs) {
    if (h == ctx.hash) continue;
    if (ctx.force) {
      fmt::print(stderr, "warning: {} carries config hash '{}' (current {}); continuing because of --force\n", name, h,
                 ctx.hash);
      continue;
    }
    throw DataError(fmt::format("{} was produced with config hash '{}' but the current config hashes to {}; rerun the "
                                "upstream stages or pass --force",
                                name, h, ctx.hash));
  }
}

void run_predict_train(const Context& ctx, pipeline::Task task, experiments::Paradigm paradigm) {
  const auto& spec = prediction_spec(ctx, task);
  const bool smote = prediction_smote(ctx, task);
  if (smote && spec.uses_series()) throw ConfigError("SMOTE cannot be combined with resnet_ts");
  const auto d = load_dataset(ctx, pipeline::Stage::prediction, task, spec.uses_series());
  std::vector<int> labels = d.y;
  if (paradigm == experiments::Paradigm::pseudo) labels = ledger_labels(read_table(ctx.out(ledger_name(task))), d);
  std::vector<learners::Example> X = d.X;
  const auto seed = stage_seed(ctx, "predict", to_string(task));
  if (smote) {
    learners::SmoteParams p;
    p.k = ctx.cfg.smote_k;
    p.allow_duplication = true;
    auto res = learners::smote(learners::vectors_of(X), labels, p, derive_seed(seed, {0x736d6f74ULL}));
    X.clear();
    for (auto& row : res.X) X.push_back({std::move(row), nullptr});
    labels = std::move(res.y);
  }
  const auto model = learners::fit(spec, X, labels, d.classes(), seed);
  const auto name = fmt::format("predict_{}_{}", to_string(task), to_string(paradigm));
  write_model(ctx, ctx.out(fmt::format("models/{}.model", name)), model);
  std::vector<std::size_t> counts(d.classes(), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  std::string text = fmt::format("task {}\nparadigm {}\nclassifier {}\nsmote {}\ntraining_rows {}\n", to_string(task),
                                 to_string(paradigm), spec.name(), smote ? "on" : "off", X.size());
  json cls = json::object();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    text += fmt::format("class {} {}\n", d.class_names[c], counts[c]);
    cls[d.class_names[c]] = counts[c];
  }
  ctx.write_text(ctx.out(name + ".txt"), text);
  ctx.write_json(ctx.out(name + ".json"), {{"task", to_string(task)},
                                           {"paradigm", to_string(paradigm)},
                                           {"classifier", learners::to_json(spec)},
                                           {"smote", smote},
                                           {"training_rows", X.size()},
                                           {"classes", cls}});
  fmt::print("predict-train {} {}: {} rows\n", to_string(task), to_string(paradigm), X.size());
}

void run_evaluate(const Context& ctx, pipeline::Task task) {
  const auto& spec = prediction_spec(ctx, task);
  const auto data_path = ctx.out("datasets") / pipeline::dataset_file_name(pipeline::Stage::prediction, task);
  const auto data_table = read_table(data_path);
  const auto ledger_table = read_table(ctx.out(ledger_name(task)));
  check_hashes(ctx, {{data_path.string(), data_table.comment_value("config_hash")},
                     {ledger_table.source.string(), ledger_table.comment_value("config_hash")}});
  const auto d = spec.uses_series() ? load_dataset(ctx, pipeline::Stage::prediction, task, true)
                                    : pipeline::read_dataset(data_table, features::FeatureSchema::standard());
  const auto pseudo = ledger_labels(ledger_table, d);
  experiments::ParadigmConfig pc;
  pc.spec = spec;
  pc.groups = ctx.cfg.groups;
  pc.smote = prediction_smote(ctx, task);
  pc.smote_params.k = ctx.cfg.smote_k;
  pc.smote_params.allow_duplication = true;
  pc.seed = stage_seed(ctx, "evaluate", to_string(task));
  pc.workers = ctx.workers;
  const auto cmp = experiments::compare_paradigms(pc, d, pseudo);
  std::size_t pseudo_agree = 0;
  for (std::size_t i = 0; i < d.size(); ++i) pseudo_agree += pseudo[i] == d.y[i];
  std::string text = fmt::format("task {}\nclassifier {}\nsmote {}\ngroups {}\ninstances {}\npseudo_label_agreement {:.6f}\n",
                                 to_string(task), spec.name(), pc.smote ? "on" : "off", pc.groups, d.size(),
                                 static_cast<double>(pseudo_agree) / static_cast<double>(d.size()));
  text += experiments::format_comparison(cmp);
  ctx.write_text(ctx.out(fmt::format("evaluate_{}.txt", to_string(task))), text);
  json ratios = json::object();
  for (const auto& [k, v] : cmp.ratios) ratios[k] = std::isfinite(v) ? json(v) : json(nullptr);
  json groups = json::object();
  for (const auto& [s, g] : cmp.assignment) groups[s] = g;
  ctx.write_json(ctx.out(fmt::format("evaluate_{}.json", to_string(task))),
                 {{"task", to_string(task)},
                  {"classifier", learners::to_json(spec)},
                  {"smote", pc.smote},
                  {"groups", groups},
                  {"human", {{"pooled", metrics_json(cmp.human.pooled)}, {"worst_case_confusion", cmp.human.worst_case}}},
                  {"pseudo", {{"pooled", metrics_json(cmp.pseudo.pooled)}, {"worst_case_confusion", cmp.pseudo.worst_case}}},
                  {"ratios", ratios}});

  if (task == pipeline::Task::signal) {
    // Log of the pseudo-paradigm model's category predictions, for persona-sample.
    const auto instances = pipeline::read_instances(read_table(ctx.out("instances.csv")));
    std::map<std::string, const pipeline::Instance*> by_id;
    for (const auto& i : instances) by_id[i.id] = &i;
    const auto folds = evaluation::group_kfold(d.subjects, cmp.assignment);
    std::vector<int> predicted(d.size(), -1);
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (folds[g].empty()) continue;
      const auto train = evaluation::complement(d.size(), folds[g]);
      const auto pred = experiments::fit_and_predict(pc, d, pseudo, train, folds[g], derive_seed(pc.seed, {g}));
      for (std::size_t k = 0; k < folds[g].size(); ++k) predicted[folds[g][k]] = pred[k];
    }
    auto w = ctx.writer(ctx.out("prediction_log_signal.csv"));
    w.row({"instance_id", "conversation_id", "listener_id", "t_s", "category"});
    for (std::size_t i = 0; i < d.size(); ++i) {
      auto it = by_id.find(d.ids[i]);
      if (it == by_id.end()) throw DataError(fmt::format("instance {} missing from instances.csv", d.ids[i]));
      w.row({d.ids[i], it->second->conversation_id, it->second->listener_id, csv::seconds(it->second->interval.onset_s),
             d.class_names[static_cast<std::size_t>(predicted[i])]});
    }
    w.commit();
  }
  fmt::print("evaluate {}: f1_weighted human {:.4f} pseudo {:.4f} ratio {:.4f}\n", to_string(task),
             cmp.human.pooled.f1_weighted, cmp.pseudo.pooled.f1_weighted, experiments::ratio_of(cmp, "f1_weighted"));
}

std::vector<double> rating_column(const fs::path& path) {
  const auto t = read_table(path);
  const auto c = t.has_column("rating") ? t.column("rating") : std::size_t{0};
  std::vector<double> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) out.push_back(csv::to_double(t.rows[r][c], t.where(r)));
  return out;
}

void run_stats(const Context& ctx, const std::vector<std::string>& ratings) {
  if (!ratings.empty()) {
    if (ratings.size() != 2) throw ConfigError("--ratings expects two files");
    const auto a = rating_column(ratings[0]), b = rating_column(ratings[1]);
    const auto w = stats::wilcoxon_signed_rank(a, b);
    const std::string text = fmt::format("pairs {}\nnonzero_differences {}\nW {:.6f}\np {:.6f}\nmethod {}\ndegenerate {}\n",
                                         a.size(), w.n, w.w, w.p, w.exact ? "exact" : "normal", w.degenerate);
    ctx.write_text(ctx.out("stats_wilcoxon.txt"), text);
    ctx.write_json(ctx.out("stats_wilcoxon.json"), {{"pairs", a.size()},
                                                    {"nonzero_differences", w.n},
                                                    {"W", w.w},
                                                    {"p", w.p},
                                                    {"exact", w.exact},
                                                    {"degenerate", w.degenerate}});
    fmt::print("wilcoxon: W={} p={:.6f}\n", w.w, w.p);
    return;
  }
  const auto consensus = annotations::read_consensus(read_table(ctx.out("consensus.csv")));
  std::vector<std::pair<std::string, SignalSet>> items;
  for (const auto& c : consensus) items.emplace_back(c.subject_id, c.signals);
  const auto taus = persona::tau_per_subject(items);
  std::map<std::string, double> scores;
  for (const auto& t : synth::read_traits(read_table(ctx.cfg.paths.extraversion_file()))) scores[t.subject_id] = t.extraversion;
  const auto test = persona::extraversion_ks(taus, scores, ctx.cfg.extraversion_threshold);
  std::string text = fmt::format("subjects {}\nexcluded_undefined_tau {}\nsplit_threshold {:.6f}\nintroverts {}\n"
                                 "extroverts {}\nks_D {:.6f}\nks_p {:.6f}\n",
                                 taus.size(), test.excluded.size(), test.threshold, test.introverts.size(),
                                 test.extroverts.size(), test.ks.d, test.ks.p);
  json per = json::array();
  text += "subject multimodal unimodal tau\n";
  for (const auto& t : taus) {
    text += fmt::format("{} {} {} {}\n", t.subject_id, t.multimodal, t.unimodal,
                        t.tau ? fmt::format("{:.6f}", *t.tau) : std::string("undefined"));
    per.push_back({{"subject", t.subject_id},
                   {"multimodal", t.multimodal},
                   {"unimodal", t.unimodal},
                   {"tau", t.tau ? json(*t.tau) : json(nullptr)}});
  }
  ctx.write_text(ctx.out("stats_personality.txt"), text);
  ctx.write_json(ctx.out("stats_personality.json"), {{"split_threshold", test.threshold},
                                                     {"introverts", test.introverts},
                                                     {"extroverts", test.extroverts},
                                                     {"excluded", test.excluded},
                                                     {"ks_D", test.ks.d},
                                                     {"ks_p", test.ks.p},
                                                     {"tau", per}});
  fmt::print("stats: K-S D={:.4f} p={:.4f} over {} introverts / {} extroverts\n", test.ks.d, test.ks.p,
             test.introverts.size(), test.extroverts.size());
}

void run_persona_sample(const Context& ctx, const std::string& log_path, const std::string& profile_name) {
  const persona::PersonaProfile profile = (profile_name == "extrovert" || profile_name == "introvert")
                                              ? ctx.cfg.profile(profile_name)
                                              : persona::load_profile(profile_name);
  const auto t = read_table(log_path.empty() ? ctx.out("prediction_log_signal.csv") : fs::path(log_path));
  const auto c_t = t.column("t_s"), c_cat = t.column("category");
  Rng rng(stage_seed(ctx, "persona", profile.label));
  std::vector<persona::LoggedResponse> log;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double ts = csv::to_double(t.rows[r][c_t], t.where(r));
    log.push_back({ts, persona::sample_response(profile, persona::parse_category(t.rows[r][c_cat]), rng)});
  }
  auto w = ctx.writer(ctx.out(fmt::format("responses_{}.csv", profile.label)));
  persona::write_response_log(w, log);
  w.commit();
  fmt::print("persona-sample: {} responses with profile {}\n", log.size(), profile.label);
}

int fail(ErrorKind kind, const std::string& message) {
  std::cerr << json{{"error", to_string(kind)}, {"message", message}}.dump() << "\n";
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::invariant: return 4;
  }
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bcpipe: backchannel identification and prediction pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "pipeline config (JSON)");
  app.add_option("--seed", o.seed, "master seed (overrides the config)");
  app.add_option("--corpus", o.corpus, "corpus directory (overrides paths.corpus)");
  app.add_option("--out", o.out, "output directory (overrides paths.output)");
  app.add_option("--workers", o.workers, "worker threads; outputs do not depend on it");

  auto* synth_cmd = app.add_subcommand("synth-gen", "generate a synthetic corpus");
  synth_cmd->add_option("--conversations", o.conversations);
  synth_cmd->add_option("--duration", o.duration, "seconds per conversation");
  synth_cmd->add_option("--detectability", o.detectability);
  synth_cmd->add_option("--rate", o.rate, "backchannels per listening minute");
  app.add_subcommand("merge", "consensus instances and agreement report");
  app.add_subcommand("sample-neg", "negative sampling and instance list");
  app.add_subcommand("featurize", "window and aggregate caches");
  auto* identify_cmd = app.add_subcommand("identify", "self-trained identification model and ledger");
  identify_cmd->add_option("--task", o.task, "opportunity|signal");
  identify_cmd->add_option("--x", o.x, "seed fraction");
  auto* sweep_cmd = app.add_subcommand("sweep", "seed-fraction sensitivity sweep");
  sweep_cmd->add_option("--task", o.task, "opportunity|signal");
  sweep_cmd->add_option("--grid", o.grid, "comma-separated seed fractions");
  sweep_cmd->add_option("--classifiers", o.classifiers, "comma-separated classifier kinds");
  sweep_cmd->add_option("--simulations", o.simulations);
  sweep_cmd->add_option("--folds", o.folds);
  auto* predict_cmd = app.add_subcommand("predict-train", "train a prediction model");
  predict_cmd->add_option("--task", o.task, "opportunity|signal");
  predict_cmd->add_option("--paradigm", o.paradigm, "human|pseudo");
  predict_cmd->add_option("--smote", o.smote, "on|off");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "leave-one-group-out paradigm comparison");
  evaluate_cmd->add_option("--task", o.task, "opportunity|signal");
  evaluate_cmd->add_option("--smote", o.smote, "on|off");
  evaluate_cmd->add_flag("--force", o.force, "accept inputs with a different config hash");
  auto* stats_cmd = app.add_subcommand("stats", "personality and paired-rating statistics");
  stats_cmd->add_option("--ratings", o.ratings, "two paired rating files")->expected(2);
  auto* persona_cmd = app.add_subcommand("persona-sample", "sample listener responses for a prediction log");
  persona_cmd->add_option("--log", o.log, "prediction log (t_s,category)");
  persona_cmd->add_option("--profile", o.profile, "extrovert|introvert|profile.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(ErrorKind::config, e.what());
  }

  try {
    const Context ctx = make_context(o);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth-gen") run_synth(ctx);
    else if (cmd == "merge") run_merge(ctx);
    else if (cmd == "sample-neg") run_sample_neg(ctx);
    else if (cmd == "featurize") run_featurize(ctx);
    else if (cmd == "identify") run_identify(ctx, pipeline::parse_task(o.task));
    else if (cmd == "sweep") run_sweep(ctx, pipeline::parse_task(o.task));
    else if (cmd == "predict-train") run_predict_train(ctx, pipeline::parse_task(o.task), experiments::parse_paradigm(o.paradigm));
    else if (cmd == "evaluate") run_evaluate(ctx, pipeline::parse_task(o.task));
    else if (cmd == "stats") run_stats(ctx, o.ratings);
    else if (cmd == "persona-sample") run_persona_sample(ctx, o.log, o.profile);
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(ErrorKind::data, e.what());
  } catch (const std::exception& e) {
    return fail(ErrorKind::invariant, e.what());
  }
  return 0;
}
