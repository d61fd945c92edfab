#pragma once

// Uniform classifier interface: spec -> fit -> FittedModel -> predict.

#include <array>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "backchannel/learners/adaboost.hpp"
#include "backchannel/learners/forest.hpp"
#include "backchannel/learners/knn.hpp"
#include "backchannel/learners/label_spreading.hpp"
#include "backchannel/learners/mlp.hpp"
#include "backchannel/learners/model.hpp"
#include "backchannel/learners/resnet.hpp"
#include "backchannel/learners/smote.hpp"
#include "backchannel/parallel.hpp"

namespace bc::learners {

using json = nlohmann::json;

enum class Kind { knn, random_forest, adaboost, mlp, resnet_ts, label_spreading };

inline constexpr std::array<Kind, 6> kAllKinds = {Kind::knn, Kind::random_forest, Kind::adaboost,
                                                  Kind::mlp, Kind::resnet_ts, Kind::label_spreading};

inline std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::knn: return "knn";
    case Kind::random_forest: return "random_forest";
    case Kind::adaboost: return "adaboost";
    case Kind::mlp: return "mlp";
    case Kind::resnet_ts: return "resnet_ts";
    case Kind::label_spreading: return "label_spreading";
  }
  return "?";
}

inline Kind parse_kind(std::string_view s) {
  for (Kind k : kAllKinds)
    if (to_string(k) == s) return k;
  throw ConfigError(fmt::format("unknown classifier kind '{}'", s));
}

struct ClassifierSpec {
  Kind kind = Kind::random_forest;
  KnnParams knn;
  ForestParams forest;
  AdaBoostParams adaboost;
  MlpParams mlp;
  ResNetParams resnet;
  SpreadingParams spreading;
  std::uint64_t seed = 0;

  /// Display name; `name` overrides the kind when set.
  std::string label;
  std::string name() const { return label.empty() ? std::string(to_string(kind)) : label; }

  bool uses_series() const { return kind == Kind::resnet_ts; }
  bool accepts_unlabeled() const { return kind == Kind::label_spreading; }

  void validate() const {
    if (label.find_first_of(" \t\n\r,") != std::string::npos)
      throw ConfigError(fmt::format("classifier name '{}' must not contain whitespace or commas", label));
    switch (kind) {
      case Kind::knn:
        if (knn.k < 1) throw ConfigError("knn: k must be >= 1");
        break;
      case Kind::random_forest:
        if (forest.trees < 1) throw ConfigError("random_forest: trees must be >= 1");
        if (forest.max_depth < 0 || forest.min_samples_split < 2 || forest.max_features < 0)
          throw ConfigError("random_forest: invalid depth/split/feature settings");
        break;
      case Kind::adaboost:
        if (adaboost.rounds < 1) throw ConfigError("adaboost: rounds must be >= 1");
        break;
      case Kind::mlp:
        if (mlp.hidden.empty()) throw ConfigError("mlp: at least one hidden layer is required");
        for (int h : mlp.hidden)
          if (h < 1) throw ConfigError("mlp: layer sizes must be >= 1");
        if (mlp.epochs < 1 || mlp.batch_size < 1 || !(mlp.learning_rate > 0) || mlp.momentum < 0 || mlp.momentum >= 1)
          throw ConfigError("mlp: invalid optimizer settings");
        break;
      case Kind::resnet_ts:
        if (resnet.blocks < 1 || resnet.filters < 1 || resnet.kernels.empty())
          throw ConfigError("resnet_ts: blocks and filters must be >= 1");
        for (int k : resnet.kernels)
          if (k < 1) throw ConfigError("resnet_ts: kernel sizes must be >= 1");
        if (resnet.epochs < 1 || resnet.batch_size < 1 || !(resnet.learning_rate > 0))
          throw ConfigError("resnet_ts: invalid optimizer settings");
        break;
      case Kind::label_spreading:
        if (spreading.k < 1) throw ConfigError("label_spreading: k must be >= 1");
        if (!(spreading.alpha > 0 && spreading.alpha < 1)) throw ConfigError("label_spreading: alpha must lie in (0, 1)");
        if (spreading.max_iterations < 1 || !(spreading.tolerance > 0))
          throw ConfigError("label_spreading: invalid convergence settings");
        break;
    }
  }

  static ClassifierSpec of(Kind k, std::uint64_t seed = 0) {
    ClassifierSpec s;
    s.kind = k;
    s.seed = seed;
    return s;
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

/// Reads optional keys from an object and rejects anything unexpected.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j.is_object()) throw ConfigError(fmt::format("{}: expected an object", context_));
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}.{}: {}", context_, key, e.what()));
    }
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(fmt::format("{}: unknown key '{}'", context_, it.key()));
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json params_to_json(const ClassifierSpec& s) {
  switch (s.kind) {
    case Kind::knn: return {{"k", s.knn.k}};
    case Kind::random_forest:
      return {{"trees", s.forest.trees}, {"max_depth", s.forest.max_depth},
              {"min_samples_split", s.forest.min_samples_split}, {"max_features", s.forest.max_features},
              {"bootstrap", s.forest.bootstrap}};
    case Kind::adaboost: return {{"rounds", s.adaboost.rounds}};
    case Kind::mlp:
      return {{"hidden", s.mlp.hidden}, {"learning_rate", s.mlp.learning_rate}, {"momentum", s.mlp.momentum},
              {"epochs", s.mlp.epochs}, {"batch_size", s.mlp.batch_size}};
    case Kind::resnet_ts:
      return {{"blocks", s.resnet.blocks}, {"filters", s.resnet.filters}, {"kernels", s.resnet.kernels},
              {"epochs", s.resnet.epochs}, {"batch_size", s.resnet.batch_size},
              {"learning_rate", s.resnet.learning_rate}};
    case Kind::label_spreading:
      return {{"k", s.spreading.k}, {"alpha", s.spreading.alpha}, {"tolerance", s.spreading.tolerance},
              {"max_iterations", s.spreading.max_iterations}};
  }
  return json::object();
}

inline json to_json(const ClassifierSpec& s) {
  json j = {{"kind", to_string(s.kind)}, {"params", params_to_json(s)}, {"seed", s.seed}};
  if (!s.label.empty()) j["name"] = s.label;
  return j;
}

inline ClassifierSpec spec_from_json(const json& j) {
  detail::ObjectReader r(j, "classifier");
  std::string kind;
  r.get("kind", kind);
  if (kind.empty()) throw ConfigError("classifier: 'kind' is required");
  ClassifierSpec s = ClassifierSpec::of(parse_kind(kind));
  r.get("seed", s.seed);
  r.get("name", s.label);
  json params = json::object();
  r.get("params", params);
  r.finish();
  detail::ObjectReader p(params, fmt::format("classifier {}.params", kind));
  switch (s.kind) {
    case Kind::knn: p.get("k", s.knn.k); break;
    case Kind::random_forest:
      p.get("trees", s.forest.trees);
      p.get("max_depth", s.forest.max_depth);
      p.get("min_samples_split", s.forest.min_samples_split);
      p.get("max_features", s.forest.max_features);
      p.get("bootstrap", s.forest.bootstrap);
      break;
    case Kind::adaboost: p.get("rounds", s.adaboost.rounds); break;
    case Kind::mlp:
      p.get("hidden", s.mlp.hidden);
      p.get("learning_rate", s.mlp.learning_rate);
      p.get("momentum", s.mlp.momentum);
      p.get("epochs", s.mlp.epochs);
      p.get("batch_size", s.mlp.batch_size);
      break;
    case Kind::resnet_ts:
      p.get("blocks", s.resnet.blocks);
      p.get("filters", s.resnet.filters);
      p.get("kernels", s.resnet.kernels);
      p.get("epochs", s.resnet.epochs);
      p.get("batch_size", s.resnet.batch_size);
      p.get("learning_rate", s.resnet.learning_rate);
      break;
    case Kind::label_spreading:
      p.get("k", s.spreading.k);
      p.get("alpha", s.spreading.alpha);
      p.get("tolerance", s.spreading.tolerance);
      p.get("max_iterations", s.spreading.max_iterations);
      break;
  }
  p.finish();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Fitted models

struct TrainingMeta {
  std::uint64_t seed = 0;
  std::size_t train_size = 0;
  std::size_t unlabeled = 0;
};

class FittedModel {
 public:
  FittedModel() = default;
  FittedModel(ClassifierSpec spec, std::size_t classes, TrainingMeta meta, std::shared_ptr<const Model> impl)
      : spec_(std::move(spec)), classes_(classes), meta_(meta), impl_(std::move(impl)) {}

  const ClassifierSpec& spec() const { return spec_; }
  std::size_t num_classes() const { return classes_; }
  const TrainingMeta& meta() const { return meta_; }
  const Model& impl() const { return *impl_; }

  ProbPrediction predict(const Example& x) const {
    auto p = impl_->predict_proba(x);
    if (p.size() != classes_) throw InvariantError("model returned a probability vector of the wrong length");
    return ProbPrediction::from(std::move(p));
  }

  /// Predictions in input order; parallel over examples, identical for any
  /// worker count.
  std::vector<ProbPrediction> predict_all(const std::vector<Example>& X, int workers = 1) const {
    std::vector<ProbPrediction> out(X.size());
    parallel_for(X.size(), workers, [&](std::size_t i) { out[i] = predict(X[i]); });
    return out;
  }

  std::string serialize() const {
    ArchiveWriter w;
    w.tag("bcmodel 1");
    w.tag(fmt::format("spec {}", to_json(spec_).dump()));
    w.put_int("classes", static_cast<long long>(classes_));
    w.tag(fmt::format("seed {}", meta_.seed));
    w.put_int("train_size", static_cast<long long>(meta_.train_size));
    w.put_int("unlabeled", static_cast<long long>(meta_.unlabeled));
    impl_->save(w);
    w.tag("end");
    return w.str();
  }

  static FittedModel deserialize(const std::string& text) {
    ArchiveReader r(text);
    r.expect("bcmodel");
    if (r.token() != "1") throw DataError("unsupported model archive version");
    r.expect("spec");
    ClassifierSpec spec;
    try {
      spec = spec_from_json(json::parse(r.token()));
    } catch (const json::exception& e) {
      throw DataError(fmt::format("model archive: bad spec: {}", e.what()));
    } catch (const ConfigError& e) {
      throw DataError(fmt::format("model archive: {}", e.what()));
    }
    const auto classes = static_cast<std::size_t>(r.get_int("classes"));
    TrainingMeta meta;
    r.expect("seed");
    meta.seed = std::stoull(r.token());
    meta.train_size = static_cast<std::size_t>(r.get_int("train_size"));
    meta.unlabeled = static_cast<std::size_t>(r.get_int("unlabeled"));
    std::shared_ptr<const Model> impl;
    switch (spec.kind) {
      case Kind::knn: impl = KnnModel::load(r, classes); break;
      case Kind::random_forest: impl = ForestModel::load(r, classes); break;
      case Kind::adaboost: impl = AdaBoostModel::load(r, classes); break;
      case Kind::mlp: impl = MlpModel::load(r, classes); break;
      case Kind::resnet_ts: impl = ResNetModel::load(r, classes); break;
      case Kind::label_spreading: impl = SpreadingModel::load(r, classes); break;
    }
    r.expect("end");
    return FittedModel(std::move(spec), classes, meta, std::move(impl));
  }

 private:
  ClassifierSpec spec_;
  std::size_t classes_ = 0;
  TrainingMeta meta_;
  std::shared_ptr<const Model> impl_;
};

/// Fits `spec` on labels in [0, classes). Only label_spreading accepts
/// kUnlabeled entries; `seed_override` replaces spec.seed when given.
inline FittedModel fit(const ClassifierSpec& spec, const std::vector<Example>& X, const std::vector<int>& y,
                       std::size_t classes, std::optional<std::uint64_t> seed_override = std::nullopt) {
  spec.validate();
  const std::uint64_t seed = seed_override.value_or(spec.seed);
  TrainingMeta meta{seed, X.size(), static_cast<std::size_t>(std::count(y.begin(), y.end(), kUnlabeled))};
  std::shared_ptr<const Model> impl;
  switch (spec.kind) {
    case Kind::knn: impl = KnnModel::fit(spec.knn, X, y, classes); break;
    case Kind::random_forest: impl = ForestModel::fit(spec.forest, X, y, classes, seed); break;
    case Kind::adaboost: impl = AdaBoostModel::fit(spec.adaboost, X, y, classes); break;
    case Kind::mlp: impl = MlpModel::fit(spec.mlp, X, y, classes, seed); break;
    case Kind::resnet_ts: impl = ResNetModel::fit(spec.resnet, X, y, classes, seed); break;
    case Kind::label_spreading: impl = SpreadingModel::fit(spec.spreading, X, y, classes); break;
  }
  ClassifierSpec stored = spec;
  stored.seed = seed;
  return FittedModel(std::move(stored), classes, meta, std::move(impl));
}

}  // namespace bc::learners
