#pragma once

// Pipeline configuration: one JSON file, strict keys, defaults for
// everything except the master seed.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "backchannel/core.hpp"
#include "backchannel/experiments.hpp"
#include "backchannel/features.hpp"
#include "backchannel/learners.hpp"
#include "backchannel/persona.hpp"
#include "backchannel/synth.hpp"

namespace bc::config {

using json = nlohmann::json;
using learners::ClassifierSpec;
using learners::Kind;

struct Paths {
  std::string corpus = "corpus";
  std::string features_dir;   // default <corpus>/features
  std::string annotations;    // default <corpus>/annotations.csv
  std::string vad;            // default <corpus>/vad.csv
  std::string conversations;  // default <corpus>/conversations.csv
  std::string extraversion;   // default <corpus>/extraversion.csv
  std::string output = "out";

  std::filesystem::path features() const { return or_default(features_dir, "features"); }
  std::filesystem::path annotation_file() const { return or_default(annotations, "annotations.csv"); }
  std::filesystem::path vad_file() const { return or_default(vad, "vad.csv"); }
  std::filesystem::path conversation_file() const { return or_default(conversations, "conversations.csv"); }
  std::filesystem::path extraversion_file() const { return or_default(extraversion, "extraversion.csv"); }
  std::filesystem::path out() const { return output; }

 private:
  std::filesystem::path or_default(const std::string& v, const char* name) const {
    return v.empty() ? std::filesystem::path(corpus) / name : std::filesystem::path(v);
  }
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  Paths paths;
  synth::SynthConfig synth;
  double frame_rate_hz = features::kCanonicalRateHz;
  features::FeatureSet identification_features = features::FeatureSet::multimodal;
  features::FeatureSet prediction_features = features::FeatureSet::multimodal;
  double threshold = 0.90;
  int max_iterations = 50;
  double seed_fraction = 0.25;
  ClassifierSpec identification = ClassifierSpec::of(Kind::random_forest);
  ClassifierSpec prediction_opportunity = ClassifierSpec::of(Kind::random_forest);
  ClassifierSpec prediction_signal = ClassifierSpec::of(Kind::adaboost);
  bool smote_opportunity = false;
  bool smote_signal = true;
  int smote_k = 5;
  std::vector<ClassifierSpec> sweep_classifiers = {ClassifierSpec::of(Kind::knn), ClassifierSpec::of(Kind::random_forest),
                                                   ClassifierSpec::of(Kind::adaboost), ClassifierSpec::of(Kind::mlp)};
  std::vector<double> sweep_grid = experiments::default_grid();
  int simulations = 10;
  int folds = 5;
  int groups = 6;
  std::string extrovert_profile;  // JSON profile path; built-in tables when empty
  std::string introvert_profile;
  std::vector<persona::TokenWeight> utterance_tokens;  // overrides the profiles' token tables when set
  std::optional<double> extraversion_threshold;        // median split when unset

  void validate() const {
    synth.validate();
    if (!(frame_rate_hz > 0)) throw ConfigError("frame_rate_hz must be positive");
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError(fmt::format("threshold {} outside (0, 1]", threshold));
    if (!(seed_fraction > 0.0 && seed_fraction <= 1.0))
      throw ConfigError(fmt::format("seed_fraction {} outside (0, 1]", seed_fraction));
    if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
    identification.validate();
    prediction_opportunity.validate();
    prediction_signal.validate();
    if (smote_k < 1) throw ConfigError("smote k must be >= 1");
    if (groups < 2) throw ConfigError("groups must be >= 2");
    experiments::SweepConfig sc;
    sc.specs = sweep_classifiers;
    sc.grid = sweep_grid;
    sc.simulations = simulations;
    sc.folds = folds;
    sc.validate();
    if (!utterance_tokens.empty()) {
      double s = 0.0;
      for (const auto& t : utterance_tokens) {
        if (t.token.empty() || t.p < 0) throw ConfigError("utterance tokens need a name and a non-negative weight");
        s += t.p;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ConfigError(fmt::format("utterance token weights sum to {}", s));
    }
  }

  persona::PersonaProfile profile(const std::string& label) const {
    persona::PersonaProfile p;
    const std::string& path = label == "extrovert" ? extrovert_profile : introvert_profile;
    if (label != "extrovert" && label != "introvert")
      throw ConfigError(fmt::format("unknown persona '{}' (expected introvert|extrovert)", label));
    if (!path.empty())
      p = persona::load_profile(path);
    else
      p = label == "extrovert" ? persona::PersonaProfile::extrovert() : persona::PersonaProfile::introvert();
    if (!utterance_tokens.empty()) p.utterance_tokens = utterance_tokens;
    p.validate();
    return p;
  }

  experiments::SweepConfig sweep_config(int workers) const {
    experiments::SweepConfig sc;
    sc.specs = sweep_classifiers;
    sc.grid = sweep_grid;
    sc.simulations = simulations;
    sc.folds = folds;
    sc.threshold = threshold;
    sc.max_iterations = max_iterations;
    sc.seed = derive_seed(seed, {stable_hash("sweep")});
    sc.workers = workers;
    return sc;
  }
};

inline json to_json(const PipelineConfig& c) {
  json specs = json::array();
  for (const auto& s : c.sweep_classifiers) specs.push_back(learners::to_json(s));
  json tokens = json::object();
  for (const auto& t : c.utterance_tokens) tokens[t.token] = t.p;
  json j = {
      {"seed", c.seed},
      {"paths",
       {{"corpus", c.paths.corpus},
        {"features_dir", c.paths.features_dir},
        {"annotations", c.paths.annotations},
        {"vad", c.paths.vad},
        {"conversations", c.paths.conversations},
        {"extraversion", c.paths.extraversion},
        {"output", c.paths.output}}},
      {"synth",
       {{"conversations", c.synth.conversations},
        {"duration_s", c.synth.duration_s},
        {"rate_per_min", c.synth.rate_per_min},
        {"miss", c.synth.noise.miss},
        {"jitter_s", c.synth.noise.jitter_s},
        {"confusion", c.synth.noise.confusion},
        {"coders", c.synth.coders},
        {"extrovert_fraction", c.synth.extrovert_fraction},
        {"detectability", c.synth.detectability}}},
      {"features",
       {{"frame_rate_hz", c.frame_rate_hz},
        {"identification_set", features::to_string(c.identification_features)},
        {"prediction_set", features::to_string(c.prediction_features)}}},
      {"selftrain",
       {{"threshold", c.threshold}, {"max_iterations", c.max_iterations}, {"seed_fraction", c.seed_fraction}}},
      {"identification", {{"classifier", learners::to_json(c.identification)}}},
      {"prediction",
       {{"opportunity", learners::to_json(c.prediction_opportunity)},
        {"signal", learners::to_json(c.prediction_signal)},
        {"smote_opportunity", c.smote_opportunity},
        {"smote_signal", c.smote_signal},
        {"smote_k", c.smote_k}}},
      {"sweep", {{"classifiers", specs}, {"grid", c.sweep_grid}, {"simulations", c.simulations}, {"folds", c.folds}}},
      {"groups", c.groups},
      {"persona",
       {{"extrovert_profile", c.extrovert_profile},
        {"introvert_profile", c.introvert_profile},
        {"utterance_tokens", tokens}}},
  };
  if (c.extraversion_threshold) j["persona"]["extraversion_threshold"] = *c.extraversion_threshold;
  return j;
}

/// Unknown keys are errors; the seed is required.
inline PipelineConfig from_json(const json& j) {
  using learners::detail::ObjectReader;
  PipelineConfig c;
  ObjectReader top(j, "config");
  if (!j.is_object() || !j.contains("seed")) throw ConfigError("config: 'seed' is required");
  top.get("seed", c.seed);
  json section;
  auto sub = [&](const char* key) {
    section = json::object();
    top.get(key, section);
    return ObjectReader(section, key);
  };
  {
    auto r = sub("paths");
    r.get("corpus", c.paths.corpus);
    r.get("features_dir", c.paths.features_dir);
    r.get("annotations", c.paths.annotations);
    r.get("vad", c.paths.vad);
    r.get("conversations", c.paths.conversations);
    r.get("extraversion", c.paths.extraversion);
    r.get("output", c.paths.output);
    r.finish();
  }
  {
    auto r = sub("synth");
    r.get("conversations", c.synth.conversations);
    r.get("duration_s", c.synth.duration_s);
    r.get("rate_per_min", c.synth.rate_per_min);
    r.get("miss", c.synth.noise.miss);
    r.get("jitter_s", c.synth.noise.jitter_s);
    r.get("confusion", c.synth.noise.confusion);
    r.get("coders", c.synth.coders);
    r.get("extrovert_fraction", c.synth.extrovert_fraction);
    r.get("detectability", c.synth.detectability);
    r.finish();
  }
  {
    auto r = sub("features");
    r.get("frame_rate_hz", c.frame_rate_hz);
    std::string ident(features::to_string(c.identification_features)), pred(features::to_string(c.prediction_features));
    r.get("identification_set", ident);
    r.get("prediction_set", pred);
    r.finish();
    c.identification_features = features::parse_feature_set(ident);
    c.prediction_features = features::parse_feature_set(pred);
  }
  {
    auto r = sub("selftrain");
    r.get("threshold", c.threshold);
    r.get("max_iterations", c.max_iterations);
    r.get("seed_fraction", c.seed_fraction);
    r.finish();
  }
  {
    auto r = sub("identification");
    json spec;
    r.get("classifier", spec);
    r.finish();
    if (!spec.is_null()) c.identification = learners::spec_from_json(spec);
  }
  {
    auto r = sub("prediction");
    json opp, sig;
    r.get("opportunity", opp);
    r.get("signal", sig);
    r.get("smote_opportunity", c.smote_opportunity);
    r.get("smote_signal", c.smote_signal);
    r.get("smote_k", c.smote_k);
    r.finish();
    if (!opp.is_null()) c.prediction_opportunity = learners::spec_from_json(opp);
    if (!sig.is_null()) c.prediction_signal = learners::spec_from_json(sig);
  }
  {
    auto r = sub("sweep");
    json specs;
    r.get("classifiers", specs);
    r.get("grid", c.sweep_grid);
    r.get("simulations", c.simulations);
    r.get("folds", c.folds);
    r.finish();
    if (!specs.is_null()) {
      if (!specs.is_array()) throw ConfigError("sweep.classifiers: expected an array");
      c.sweep_classifiers.clear();
      for (const auto& s : specs) c.sweep_classifiers.push_back(learners::spec_from_json(s));
    }
  }
  top.get("groups", c.groups);
  {
    auto r = sub("persona");
    json tokens = json::object();
    std::optional<double> threshold;
    r.get("extrovert_profile", c.extrovert_profile);
    r.get("introvert_profile", c.introvert_profile);
    r.get("utterance_tokens", tokens);
    if (section.contains("extraversion_threshold")) {
      double t = 0.0;
      r.get("extraversion_threshold", t);
      threshold = t;
    }
    r.finish();
    c.extraversion_threshold = threshold;
    if (!tokens.is_object()) throw ConfigError("persona.utterance_tokens: expected an object of token weights");
    for (auto it = tokens.begin(); it != tokens.end(); ++it) {
      if (!it.value().is_number()) throw ConfigError(fmt::format("persona.utterance_tokens.{}: expected a number", it.key()));
      c.utterance_tokens.push_back({it.key(), it.value().get<double>()});
    }
  }
  top.finish();
  c.synth.seed = c.seed;
  c.validate();
  return c;
}

inline PipelineConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

/// Hash of the canonical (sorted-key) JSON rendering of the effective config.
inline std::string config_hash(const PipelineConfig& c) {
  return fmt::format("{:016x}", stable_hash(to_json(c).dump()));
}

}  // namespace bc::config
