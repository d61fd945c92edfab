#pragma once

// Instances (consensus positives plus sampled negatives) and the four
// labeled datasets built from them: opportunity/signal x identification
// (listener windows) / prediction (speaker context).

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "backchannel/annotations.hpp"
#include "backchannel/core.hpp"
#include "backchannel/csv.hpp"
#include "backchannel/features.hpp"
#include "backchannel/learners.hpp"
#include "backchannel/parallel.hpp"
#include "backchannel/persona.hpp"
#include "backchannel/sampling.hpp"
#include "backchannel/synth.hpp"

namespace bc::pipeline {

using synth::ConversationInfo;
using synth::StreamKey;
using StreamMap = std::map<StreamKey, std::shared_ptr<const features::FeatureStream>>;

enum class Task { opportunity, signal };
enum class Stage { identification, prediction };

inline std::string_view to_string(Task t) { return t == Task::opportunity ? "opportunity" : "signal"; }
inline std::string_view to_string(Stage s) { return s == Stage::identification ? "identification" : "prediction"; }

inline Task parse_task(std::string_view s) {
  if (s == "opportunity") return Task::opportunity;
  if (s == "signal") return Task::signal;
  throw ConfigError(fmt::format("unknown task '{}' (expected opportunity|signal)", s));
}

inline Stage parse_stage(std::string_view s) {
  if (s == "identification") return Stage::identification;
  if (s == "prediction") return Stage::prediction;
  throw ConfigError(fmt::format("unknown stage '{}' (expected identification|prediction)", s));
}

inline std::vector<std::string> class_names(Task t) {
  if (t == Task::opportunity) return {"no_backchannel", "backchannel"};
  return {"visual", "verbal", "both"};
}

inline std::optional<int> positive_class(Task t) {
  return t == Task::opportunity ? std::optional<int>(1) : std::nullopt;
}

struct Instance {
  std::string id;
  std::string conversation_id;
  std::string listener_id;
  std::string speaker_id;
  TimeInterval interval;
  bool positive = false;
  SignalSet signals;
  std::optional<persona::SignalCategory> category;
};

inline std::string instance_id(const std::string& conversation_id, const std::string& subject_id, double onset) {
  return fmt::format("{}_{}_{:.6f}", conversation_id, subject_id, onset);
}

inline const ConversationInfo& find_conversation(const std::vector<ConversationInfo>& convs, const std::string& id) {
  for (const auto& c : convs)
    if (c.id == id) return c;
  throw DataError(fmt::format("conversation '{}' is not listed", id));
}

/// Negatives for every listener of every conversation. Each listener gets its
/// own stream derived from the conversation seed.
inline std::vector<sampling::NegativeInstance> sample_all_negatives(
    const std::vector<ConversationInfo>& convs, const std::vector<sampling::VoiceActivity>& vad,
    const std::vector<annotations::ConsensusInstance>& positives, std::uint64_t seed) {
  std::vector<sampling::NegativeInstance> out;
  for (const auto& c : convs) {
    for (const auto& subject : {c.subject_a, c.subject_b}) {
      sampling::VoiceActivity listener{c.id, subject, {}};
      for (const auto& v : vad)
        if (v.conversation_id == c.id && v.subject_id == subject)
          listener.speech.insert(listener.speech.end(), v.speech.begin(), v.speech.end());
      listener.speech = sampling::normalize(listener.speech);
      std::vector<annotations::ConsensusInstance> mine;
      for (const auto& p : positives)
        if (p.conversation_id == c.id && p.subject_id == subject) mine.push_back(p);
      const auto regions = sampling::eligible_regions({0.0, c.duration_s}, listener, mine);
      const auto s = derive_seed(sampling::conversation_seed(seed, c.id), {stable_hash(subject)});
      auto negs = sampling::sample_negatives(c.id, subject, regions, s);
      out.insert(out.end(), negs.begin(), negs.end());
    }
  }
  return out;
}

/// Positives and negatives ordered by conversation, listener and onset.
inline std::vector<Instance> build_instances(const std::vector<ConversationInfo>& convs,
                                             const std::vector<annotations::ConsensusInstance>& positives,
                                             const std::vector<sampling::NegativeInstance>& negatives) {
  std::vector<Instance> out;
  for (const auto& p : positives) {
    const auto& c = find_conversation(convs, p.conversation_id);
    out.push_back({instance_id(p.conversation_id, p.subject_id, p.interval.onset_s), p.conversation_id, p.subject_id,
                   c.partner_of(p.subject_id), p.interval, true, p.signals, persona::categorize(p.signals)});
  }
  for (const auto& n : negatives) {
    const auto& c = find_conversation(convs, n.conversation_id);
    out.push_back({instance_id(n.conversation_id, n.subject_id, n.interval.onset_s), n.conversation_id, n.subject_id,
                   c.partner_of(n.subject_id), n.interval, false, {}, std::nullopt});
  }
  std::sort(out.begin(), out.end(), [](const Instance& a, const Instance& b) {
    return std::tie(a.conversation_id, a.listener_id, a.interval.onset_s) <
           std::tie(b.conversation_id, b.listener_id, b.interval.onset_s);
  });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].id == out[i - 1].id) throw DataError(fmt::format("duplicate instance id {}", out[i].id));
  return out;
}

struct Assembly {
  annotations::MergeResult merged;
  std::vector<sampling::NegativeInstance> negatives;
  std::vector<Instance> instances;
};

/// Consensus merge, negative sampling and instance assembly in one step.
inline Assembly assemble(const std::vector<ConversationInfo>& convs,
                         const std::vector<annotations::CoderAnnotation>& coder_annotations,
                         const std::vector<sampling::VoiceActivity>& vad, std::uint64_t seed) {
  Assembly a;
  a.merged = annotations::merge(coder_annotations);
  a.negatives = sample_all_negatives(convs, vad, a.merged.instances, seed);
  a.instances = build_instances(convs, a.merged.instances, a.negatives);
  return a;
}

// ---------------------------------------------------------------------------
// Datasets

struct DroppedInstance {
  std::string instance_id;
  std::string reason;
};

struct Dataset {
  Task task = Task::opportunity;
  Stage stage = Stage::identification;
  features::FeatureSet feature_set = features::FeatureSet::multimodal;
  std::vector<std::string> class_names;
  std::optional<int> positive_class;
  std::vector<std::string> ids;
  std::vector<std::string> subjects;  // listener of each instance; grouping key
  std::vector<learners::Example> X;
  std::vector<int> y;
  std::vector<DroppedInstance> dropped;

  std::size_t size() const { return ids.size(); }
  std::size_t classes() const { return class_names.size(); }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.task = task;
    d.stage = stage;
    d.feature_set = feature_set;
    d.class_names = class_names;
    d.positive_class = positive_class;
    for (std::size_t i : idx) {
      d.ids.push_back(ids.at(i));
      d.subjects.push_back(subjects[i]);
      d.X.push_back(X[i]);
      d.y.push_back(y[i]);
    }
    return d;
  }

  std::optional<std::size_t> index_of(const std::string& id) const {
    auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) return std::nullopt;
    return static_cast<std::size_t>(it - ids.begin());
  }
};

struct DatasetOptions {
  Task task = Task::opportunity;
  Stage stage = Stage::identification;
  features::FeatureSet feature_set = features::FeatureSet::multimodal;
  bool keep_series = false;  // attach windows for time-series learners
  int workers = 1;
};

inline const features::FeatureStream& stream_for(const StreamMap& streams, const std::string& conv,
                                                 const std::string& subject) {
  auto it = streams.find({conv, subject});
  if (it == streams.end() || !it->second)
    throw DataError(fmt::format("no feature stream for conversation {} subject {}", conv, subject));
  return *it->second;
}

/// Opportunity tasks use every instance (label 1 = backchannel); signal tasks
/// use categorized positives. Identification windows cover the listener's
/// instance interval; prediction windows are the speaker's 3 s context.
/// Instances that cannot be windowed are listed in `dropped`.
inline Dataset build_dataset(const std::vector<Instance>& instances, const StreamMap& streams,
                             const features::FeatureSchema& schema, const DatasetOptions& opt) {
  std::vector<const Instance*> chosen;
  for (const auto& inst : instances) {
    if (opt.task == Task::signal && !inst.category) continue;
    chosen.push_back(&inst);
  }
  struct Slot {
    std::optional<learners::Example> example;
    std::string dropped;
  };
  std::vector<Slot> slots(chosen.size());
  parallel_for(chosen.size(), opt.workers, [&](std::size_t i) {
    const Instance& inst = *chosen[i];
    features::Series frames;
    if (opt.stage == Stage::identification) {
      const auto& stream = stream_for(streams, inst.conversation_id, inst.listener_id);
      try {
        frames = features::cut_identification_window(stream, inst.interval, inst.id).frames;
      } catch (const DataError& e) {
        slots[i].dropped = e.what();
        return;
      }
    } else {
      const auto& stream = stream_for(streams, inst.conversation_id, inst.speaker_id);
      auto cut = features::cut_context_window(stream, inst.interval.onset_s, inst.id);
      if (!cut.window) {
        slots[i].dropped = cut.dropped_reason;
        return;
      }
      frames = std::move(cut.window->frames);
    }
    learners::Example e;
    e.x = features::aggregate(frames, schema, opt.feature_set);
    if (opt.keep_series)
      e.series = std::make_shared<const features::Series>(features::select_channels(frames, schema, opt.feature_set));
    slots[i].example = std::move(e);
  });

  Dataset d;
  d.task = opt.task;
  d.stage = opt.stage;
  d.feature_set = opt.feature_set;
  d.class_names = class_names(opt.task);
  d.positive_class = positive_class(opt.task);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const Instance& inst = *chosen[i];
    if (!slots[i].example) {
      d.dropped.push_back({inst.id, slots[i].dropped});
      continue;
    }
    d.ids.push_back(inst.id);
    d.subjects.push_back(inst.listener_id);
    d.X.push_back(std::move(*slots[i].example));
    d.y.push_back(opt.task == Task::opportunity ? (inst.positive ? 1 : 0) : static_cast<int>(*inst.category));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Files

/// Rows `instance_id,conversation_id,listener_id,speaker_id,onset_s,offset_s,positive,signals,category`.
inline void write_instances(csv::Writer& w, const std::vector<Instance>& instances) {
  w.row({"instance_id", "conversation_id", "listener_id", "speaker_id", "onset_s", "offset_s", "positive", "signals",
         "category"});
  for (const auto& i : instances)
    w.row({i.id, i.conversation_id, i.listener_id, i.speaker_id, csv::exact(i.interval.onset_s),
           csv::exact(i.interval.offset_s), i.positive ? "1" : "0", i.signals.to_string(),
           i.category ? std::string(persona::to_string(*i.category)) : "none"});
}

inline std::vector<Instance> read_instances(const csv::Table& t) {
  const auto c_id = t.column("instance_id"), c_conv = t.column("conversation_id"), c_l = t.column("listener_id"),
             c_s = t.column("speaker_id"), c_on = t.column("onset_s"), c_off = t.column("offset_s"),
             c_pos = t.column("positive"), c_sig = t.column("signals"), c_cat = t.column("category");
  std::vector<Instance> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto where = t.where(r);
    Instance i;
    i.id = row[c_id];
    i.conversation_id = row[c_conv];
    i.listener_id = row[c_l];
    i.speaker_id = row[c_s];
    i.interval = make_interval(csv::to_double(row[c_on], where), csv::to_double(row[c_off], where));
    if (row[c_pos] != "0" && row[c_pos] != "1") throw DataError(fmt::format("{}: positive must be 0 or 1", where));
    i.positive = row[c_pos] == "1";
    i.signals = i.positive ? SignalSet::parse(row[c_sig]) : SignalSet{};
    if (row[c_cat] != "none") i.category = persona::parse_category(row[c_cat]);
    out.push_back(std::move(i));
  }
  return out;
}

/// Aggregate cache: a `dataset ...` comment, then `instance_id,subject_id,label,<aggregate names>`.
inline void write_dataset(csv::Writer& w, const Dataset& d, const features::FeatureSchema& schema) {
  w.comment(fmt::format("dataset task={} stage={} feature_set={}", to_string(d.task), to_string(d.stage),
                        features::to_string(d.feature_set)));
  std::vector<std::string> header{"instance_id", "subject_id", "label"};
  for (auto& n : schema.aggregate_names(d.feature_set)) header.push_back(n);
  w.row(header);
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::vector<std::string> row{d.ids[i], d.subjects[i], d.class_names[static_cast<std::size_t>(d.y[i])]};
    for (double v : d.X[i].x) row.push_back(csv::exact(v));
    w.row(row);
  }
}

inline Dataset read_dataset(const csv::Table& t, const features::FeatureSchema& schema) {
  Dataset d;
  d.task = parse_task(t.comment_value("task"));
  d.stage = parse_stage(t.comment_value("stage"));
  d.feature_set = features::parse_feature_set(t.comment_value("feature_set"));
  d.class_names = class_names(d.task);
  d.positive_class = positive_class(d.task);
  const auto names = schema.aggregate_names(d.feature_set);
  if (t.header.size() != names.size() + 3) throw DataError(fmt::format("{}: dataset width does not match the schema", t.source.string()));
  for (std::size_t k = 0; k < names.size(); ++k)
    if (t.header[k + 3] != names[k])
      throw DataError(fmt::format("{}: column {} is '{}', expected '{}'", t.source.string(), k + 4, t.header[k + 3], names[k]));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto where = t.where(r);
    d.ids.push_back(row[0]);
    d.subjects.push_back(row[1]);
    auto it = std::find(d.class_names.begin(), d.class_names.end(), row[2]);
    if (it == d.class_names.end()) throw DataError(fmt::format("{}: unknown label '{}'", where, row[2]));
    d.y.push_back(static_cast<int>(it - d.class_names.begin()));
    learners::Example e;
    for (std::size_t k = 3; k < row.size(); ++k) e.x.push_back(csv::to_double(row[k], where));
    d.X.push_back(std::move(e));
  }
  return d;
}

inline std::string dataset_file_name(Stage s, Task t) {
  return fmt::format("{}_{}.csv", to_string(s), to_string(t));
}

/// Loads one stream file per conversation participant from `dir`.
inline StreamMap load_streams(const std::filesystem::path& dir, const std::vector<ConversationInfo>& convs,
                              const features::FeatureSchema& schema, int workers = 1) {
  std::vector<StreamKey> keys;
  for (const auto& c : convs) {
    keys.push_back({c.id, c.subject_a});
    keys.push_back({c.id, c.subject_b});
  }
  std::vector<std::shared_ptr<const features::FeatureStream>> loaded(keys.size());
  parallel_for(keys.size(), workers, [&](std::size_t i) {
    const auto path = dir / synth::stream_file_name(keys[i].conversation_id, keys[i].subject_id);
    loaded[i] = std::make_shared<features::FeatureStream>(
        features::ingest_stream(path, schema, keys[i].conversation_id, keys[i].subject_id));
  });
  StreamMap out;
  for (std::size_t i = 0; i < keys.size(); ++i) out[keys[i]] = loaded[i];
  return out;
}

}  // namespace bc::pipeline
