#pragma once

// Multimodal feature streams: schema, ingestion onto a canonical frame grid,
// identification/context windows, aggregate vectors and standardization.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "backchannel/core.hpp"
#include "backchannel/csv.hpp"

namespace bc::features {

inline constexpr double kCanonicalRateHz = 25.0;
inline constexpr double kContextWindowS = 3.0;
inline constexpr double kMaxGapS = 0.5;
// Slack for frame-boundary arithmetic on binary floating point.
inline constexpr double kFrameEps = 1e-9;

enum class ChannelKind { continuous, binary, categorical };
enum class Modality { visual, audio };
enum class FeatureSet { video, audio, multimodal };

inline std::string_view to_string(FeatureSet s) {
  switch (s) {
    case FeatureSet::video: return "video";
    case FeatureSet::audio: return "audio";
    case FeatureSet::multimodal: return "multimodal";
  }
  return "?";
}

inline FeatureSet parse_feature_set(std::string_view s) {
  if (s == "video") return FeatureSet::video;
  if (s == "audio") return FeatureSet::audio;
  if (s == "multimodal") return FeatureSet::multimodal;
  throw ConfigError(fmt::format("unknown feature set '{}'", s));
}

struct Channel {
  std::string name;
  ChannelKind kind = ChannelKind::continuous;
  Modality modality = Modality::visual;
  std::vector<std::string> categories;  // categorical only

  bool in(FeatureSet set) const {
    return set == FeatureSet::multimodal || (set == FeatureSet::video && modality == Modality::visual) ||
           (set == FeatureSet::audio && modality == Modality::audio);
  }
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<Channel> channels) : channels_(std::move(channels)) {
    for (std::size_t i = 0; i < channels_.size(); ++i) {
      const auto& c = channels_[i];
      if (!index_.emplace(c.name, i).second)
        throw ConfigError(fmt::format("duplicate channel '{}'", c.name));
      if (c.kind == ChannelKind::categorical && c.categories.size() < 2)
        throw ConfigError(fmt::format("categorical channel '{}' needs >= 2 categories", c.name));
    }
  }

  /// 18 FAUs, gaze, head motion, blink, pupil, smile, F0, energy, 13 MFCCs,
  /// voice activity.
  static FeatureSchema standard() {
    std::vector<Channel> ch;
    for (const char* au : {"AU01_r", "AU02_r", "AU04_r", "AU05_r", "AU06_r", "AU07_r", "AU09_r",
                           "AU10_r", "AU12_r", "AU14_r", "AU15_r", "AU17_r", "AU20_r", "AU23_r",
                           "AU25_r", "AU26_r", "AU28_r", "AU45_r"})
      ch.push_back({au, ChannelKind::continuous, Modality::visual, {}});
    ch.push_back({"gaze_vel", ChannelKind::continuous, Modality::visual, {}});
    ch.push_back({"gaze_acc", ChannelKind::continuous, Modality::visual, {}});
    ch.push_back({"gaze_state", ChannelKind::categorical, Modality::visual, {"left", "right", "blinking"}});
    for (const char* h : {"head_vel_T", "head_acc_T", "head_vel_R", "head_acc_R", "blink_rate",
                          "pupil_x", "pupil_y", "smile_ratio"})
      ch.push_back({h, ChannelKind::continuous, Modality::visual, {}});
    ch.push_back({"f0", ChannelKind::continuous, Modality::audio, {}});
    ch.push_back({"energy", ChannelKind::continuous, Modality::audio, {}});
    for (int i = 1; i <= 13; ++i)
      ch.push_back({fmt::format("mfcc_{}", i), ChannelKind::continuous, Modality::audio, {}});
    ch.push_back({"voice_activity", ChannelKind::binary, Modality::audio, {}});
    return FeatureSchema(std::move(ch));
  }

  const std::vector<Channel>& channels() const { return channels_; }
  std::size_t size() const { return channels_.size(); }
  const Channel& operator[](std::size_t i) const { return channels_[i]; }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t at(std::string_view name) const {
    auto i = find(name);
    if (!i) throw ConfigError(fmt::format("unknown channel '{}'", name));
    return *i;
  }

  /// Aggregate dimensionality: 2 per numeric channel, one occupancy per category.
  std::size_t aggregate_dim(FeatureSet set = FeatureSet::multimodal) const {
    std::size_t d = 0;
    for (const auto& c : channels_)
      if (c.in(set)) d += c.kind == ChannelKind::categorical ? c.categories.size() : 2;
    return d;
  }

  std::vector<std::string> aggregate_names(FeatureSet set = FeatureSet::multimodal) const {
    std::vector<std::string> out;
    for (const auto& c : channels_) {
      if (!c.in(set)) continue;
      if (c.kind == ChannelKind::categorical) {
        for (const auto& cat : c.categories) out.push_back(c.name + ".frac_" + cat);
      } else {
        out.push_back(c.name + ".mean");
        out.push_back(c.name + ".std");
      }
    }
    return out;
  }

  /// True for aggregate dimensions that are z-scored (means and stds);
  /// occupancy fractions are left untouched.
  std::vector<bool> standardized_dims(FeatureSet set = FeatureSet::multimodal) const {
    std::vector<bool> out;
    for (const auto& c : channels_) {
      if (!c.in(set)) continue;
      if (c.kind == ChannelKind::categorical)
        out.insert(out.end(), c.categories.size(), false);
      else
        out.insert(out.end(), 2, true);
    }
    return out;
  }

 private:
  std::vector<Channel> channels_;
  std::map<std::string, std::size_t> index_;
};

/// Row-major frames x channels matrix. Categorical channels hold the
/// category index.
struct Series {
  std::size_t frames = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t c) const { return values[t * channels + c]; }
  double& at(std::size_t t, std::size_t c) { return values[t * channels + c]; }
  const double* row(std::size_t t) const { return values.data() + t * channels; }
};

/// A stream on the canonical grid: frame i sits at (first_frame + i) / rate.
struct FeatureStream {
  std::string conversation_id;
  std::string subject_id;
  double frame_rate_hz = kCanonicalRateHz;
  long first_frame = 0;
  Series data;

  double time_of(std::size_t i) const {
    return static_cast<double>(first_frame + static_cast<long>(i)) / frame_rate_hz;
  }
  long end_frame() const { return first_frame + static_cast<long>(data.frames); }
  TimeInterval span() const {
    return {static_cast<double>(first_frame) / frame_rate_hz,
            static_cast<double>(end_frame()) / frame_rate_hz};
  }
};

enum class Role { listener, speaker };

struct FeatureWindow {
  std::string instance_id;
  Role role = Role::listener;
  TimeInterval source;
  Series frames;
};

/// Canonical frame index of the first timestamp >= t.
inline long first_frame_at_or_after(double t, double rate) {
  return static_cast<long>(std::ceil(t * rate - kFrameEps));
}

// ---------------------------------------------------------------------------
// Ingestion

/// Resamples irregular samples (strictly increasing times, one row per
/// sample, columns in schema order) onto the canonical grid. Continuous
/// channels are linearly interpolated; binary and categorical channels take
/// the nearest sample (earlier one on ties).
inline FeatureStream resample(const std::vector<double>& times, const Series& samples,
                              const FeatureSchema& schema, std::string conversation_id,
                              std::string subject_id, double rate = kCanonicalRateHz,
                              const std::vector<std::string>& row_labels = {}) {
  auto label = [&](std::size_t i) {
    return i < row_labels.size() ? row_labels[i] : fmt::format("row {}", i);
  };
  if (samples.channels != schema.size())
    throw DataError(fmt::format("expected {} channels, found {}", schema.size(), samples.channels));
  if (times.size() != samples.frames || times.empty()) throw DataError("stream has no samples");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1]))
      throw DataError(fmt::format("{}: timestamp {} is not after {}", label(i), times[i], times[i - 1]));
    if (times[i] - times[i - 1] > kMaxGapS + kFrameEps)
      throw DataError(fmt::format("{}: gap of {:.3f} s exceeds {} s", label(i), times[i] - times[i - 1], kMaxGapS));
  }

  FeatureStream s;
  s.conversation_id = std::move(conversation_id);
  s.subject_id = std::move(subject_id);
  s.frame_rate_hz = rate;
  s.first_frame = first_frame_at_or_after(times.front(), rate);
  const long last = static_cast<long>(std::floor(times.back() * rate + kFrameEps));
  const std::size_t n = last >= s.first_frame ? static_cast<std::size_t>(last - s.first_frame + 1) : 0;
  s.data.frames = n;
  s.data.channels = schema.size();
  s.data.values.assign(n * schema.size(), 0.0);

  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = s.time_of(i);
    while (seg + 1 < times.size() && times[seg + 1] <= t) ++seg;
    const std::size_t hi = std::min(seg + 1, times.size() - 1);
    double w = 0.0;
    if (hi != seg) w = std::clamp((t - times[seg]) / (times[hi] - times[seg]), 0.0, 1.0);
    const std::size_t nearest = (hi != seg && (times[hi] - t) < (t - times[seg])) ? hi : seg;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (schema[c].kind == ChannelKind::continuous)
        s.data.at(i, c) = samples.at(seg, c) + w * (samples.at(hi, c) - samples.at(seg, c));
      else
        s.data.at(i, c) = samples.at(nearest, c);
    }
  }
  return s;
}

/// Parses `time_s,<channels>`; every schema channel must be present and no
/// unknown column is allowed.
inline FeatureStream ingest_table(const csv::Table& t, const FeatureSchema& schema,
                                  std::string conversation_id, std::string subject_id,
                                  double rate = kCanonicalRateHz) {
  const auto time_col = t.column("time_s");
  std::vector<std::size_t> column_of(schema.size(), SIZE_MAX);
  for (std::size_t h = 0; h < t.header.size(); ++h) {
    if (h == time_col) continue;
    auto c = schema.find(t.header[h]);
    if (!c) throw DataError(fmt::format("{}: unknown channel '{}'", t.source.string(), t.header[h]));
    column_of[*c] = h;
  }
  for (std::size_t c = 0; c < schema.size(); ++c)
    if (column_of[c] == SIZE_MAX)
      throw DataError(fmt::format("{}: missing channel '{}'", t.source.string(), schema[c].name));

  std::vector<double> times;
  std::vector<std::string> labels;
  Series samples;
  samples.channels = schema.size();
  samples.frames = t.rows.size();
  samples.values.resize(samples.frames * samples.channels);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto where = t.where(r);
    labels.push_back(where);
    times.push_back(csv::to_double(t.rows[r][time_col], where));
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const auto& field = t.rows[r][column_of[c]];
      const auto& ch = schema[c];
      double v = 0.0;
      if (ch.kind == ChannelKind::categorical) {
        auto it = std::find(ch.categories.begin(), ch.categories.end(), field);
        if (it == ch.categories.end())
          throw DataError(fmt::format("{}: '{}' is not a category of {}", where, field, ch.name));
        v = static_cast<double>(it - ch.categories.begin());
      } else if (ch.kind == ChannelKind::binary) {
        if (field != "0" && field != "1")
          throw DataError(fmt::format("{}: binary channel {} expects 0|1, got '{}'", where, ch.name, field));
        v = field == "1" ? 1.0 : 0.0;
      } else {
        v = csv::to_double(field, where);
      }
      samples.at(r, c) = v;
    }
  }
  return resample(times, samples, schema, std::move(conversation_id), std::move(subject_id), rate, labels);
}

inline FeatureStream ingest_stream(const std::filesystem::path& path, const FeatureSchema& schema,
                                   std::string conversation_id, std::string subject_id,
                                   double rate = kCanonicalRateHz) {
  return ingest_table(csv::read(path), schema, std::move(conversation_id), std::move(subject_id), rate);
}

inline void write_stream(csv::Writer& w, const FeatureStream& s, const FeatureSchema& schema,
                         int decimals = -1) {
  std::vector<std::string> header{"time_s"};
  for (const auto& c : schema.channels()) header.push_back(c.name);
  w.row(header);
  std::vector<std::string> row(header.size());
  for (std::size_t i = 0; i < s.data.frames; ++i) {
    row[0] = fmt::format("{:.2f}", s.time_of(i));
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const double v = s.data.at(i, c);
      const auto& ch = schema[c];
      if (ch.kind == ChannelKind::categorical)
        row[c + 1] = ch.categories.at(static_cast<std::size_t>(v));
      else if (ch.kind == ChannelKind::binary)
        row[c + 1] = v != 0.0 ? "1" : "0";
      else
        row[c + 1] = decimals < 0 ? csv::exact(v) : fmt::format("{:.{}f}", v, decimals);
    }
    w.row(row);
  }
}

// ---------------------------------------------------------------------------
// Windows

inline Series copy_frames(const FeatureStream& s, long from, long to) {
  Series out;
  out.channels = s.data.channels;
  out.frames = static_cast<std::size_t>(to - from);
  const auto begin = s.data.values.begin() + (from - s.first_frame) * static_cast<long>(s.data.channels);
  out.values.assign(begin, begin + static_cast<long>(out.frames * out.channels));
  return out;
}

/// Frames with timestamps in [onset, offset).
inline FeatureWindow cut_identification_window(const FeatureStream& stream, TimeInterval interval,
                                               std::string instance_id = {}) {
  const long from = first_frame_at_or_after(interval.onset_s, stream.frame_rate_hz);
  const long to = first_frame_at_or_after(interval.offset_s, stream.frame_rate_hz);
  if (from < stream.first_frame || to > stream.end_frame())
    throw DataError(fmt::format("interval [{}, {}) lies outside stream {}/{} span [{}, {})",
                                interval.onset_s, interval.offset_s, stream.conversation_id,
                                stream.subject_id, stream.span().onset_s, stream.span().offset_s));
  if (to <= from)
    throw DataError(fmt::format("interval [{}, {}) holds no frames", interval.onset_s, interval.offset_s));
  return {std::move(instance_id), Role::listener, interval, copy_frames(stream, from, to)};
}

struct ContextCut {
  std::optional<FeatureWindow> window;
  std::string dropped_reason;
};

/// Exactly 3 s of speaker frames ending before `onset`; instances without a
/// full context are dropped, not padded.
inline ContextCut cut_context_window(const FeatureStream& speaker, double onset,
                                     std::string instance_id = {}) {
  const long frames = std::lround(kContextWindowS * speaker.frame_rate_hz);
  const long to = first_frame_at_or_after(onset, speaker.frame_rate_hz);
  const long from = to - frames;
  ContextCut cut;
  if (from < speaker.first_frame) {
    cut.dropped_reason = fmt::format("onset {:.3f} s leaves less than {} s of context", onset, kContextWindowS);
    return cut;
  }
  if (to > speaker.end_frame()) {
    cut.dropped_reason = fmt::format("onset {:.3f} s is beyond the speaker stream", onset);
    return cut;
  }
  const double rate = speaker.frame_rate_hz;
  cut.window = FeatureWindow{std::move(instance_id), Role::speaker,
                             {static_cast<double>(from) / rate, static_cast<double>(to) / rate},
                             copy_frames(speaker, from, to)};
  return cut;
}

// ---------------------------------------------------------------------------
// Aggregates

/// Per numeric channel mean and population std; per categorical channel the
/// occupancy fraction of each category. Values are summed in sorted order so
/// the result does not depend on frame order.
inline std::vector<double> aggregate(const Series& window, const FeatureSchema& schema,
                                     FeatureSet set = FeatureSet::multimodal) {
  if (window.frames == 0) throw DataError("cannot aggregate an empty window");
  if (window.channels != schema.size())
    throw DataError(fmt::format("window has {} channels, schema {}", window.channels, schema.size()));
  std::vector<double> out;
  out.reserve(schema.aggregate_dim(set));
  std::vector<double> column(window.frames);
  const auto T = static_cast<double>(window.frames);
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& ch = schema[c];
    if (!ch.in(set)) continue;
    for (std::size_t t = 0; t < window.frames; ++t) column[t] = window.at(t, c);
    if (ch.kind == ChannelKind::categorical) {
      std::vector<std::size_t> counts(ch.categories.size(), 0);
      for (double v : column) {
        const auto k = static_cast<std::size_t>(v);
        if (v < 0 || k >= counts.size() || static_cast<double>(k) != v)
          throw DataError(fmt::format("channel {} holds invalid category code {}", ch.name, v));
        ++counts[k];
      }
      for (std::size_t k : counts) out.push_back(static_cast<double>(k) / T);
      continue;
    }
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double v : column) sum += v;
    const double mean = sum / T;
    std::vector<double> sq(window.frames);
    for (std::size_t t = 0; t < window.frames; ++t) sq[t] = (column[t] - mean) * (column[t] - mean);
    std::sort(sq.begin(), sq.end());
    double ss = 0.0;
    for (double v : sq) ss += v;
    out.push_back(mean);
    out.push_back(std::sqrt(ss / T));
  }
  return out;
}

inline std::vector<double> aggregate(const FeatureWindow& window, const FeatureSchema& schema,
                                     FeatureSet set = FeatureSet::multimodal) {
  return aggregate(window.frames, schema, set);
}

/// Keeps only the channels of `set` (used to restrict model inputs for
/// time-series learners).
inline Series select_channels(const Series& s, const FeatureSchema& schema, FeatureSet set) {
  if (set == FeatureSet::multimodal) return s;
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < schema.size(); ++c)
    if (schema[c].in(set)) keep.push_back(c);
  Series out;
  out.frames = s.frames;
  out.channels = keep.size();
  out.values.reserve(out.frames * out.channels);
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t c : keep) out.values.push_back(s.at(t, c));
  return out;
}

// ---------------------------------------------------------------------------
// Standardization

inline constexpr double kDegenerateStd = 1e-12;

struct StandardScaler {
  std::vector<double> mean;
  std::vector<double> scale;  // train std, or 1 for degenerate dimensions
  std::vector<bool> active;   // false: dimension passes through untouched

  std::size_t dim() const { return mean.size(); }

  std::vector<double> apply(const std::vector<double>& x) const {
    if (x.size() != dim())
      throw DataError(fmt::format("scaler expects {} dimensions, got {}", dim(), x.size()));
    std::vector<double> out(x.size());
    for (std::size_t d = 0; d < x.size(); ++d)
      out[d] = active[d] ? (x[d] - mean[d]) / scale[d] : x[d];
    return out;
  }

  /// One line per dimension: `index mean std active`.
  std::string serialize() const {
    std::string out = fmt::format("scaler {}\n", dim());
    for (std::size_t d = 0; d < dim(); ++d)
      out += fmt::format("{} {:a} {:a} {}\n", d, mean[d], scale[d], active[d] ? 1 : 0);
    return out;
  }

  static StandardScaler deserialize(const std::string& text) {
    std::istringstream in(text);
    std::string tag;
    std::size_t n = 0;
    if (!(in >> tag >> n) || tag != "scaler") throw DataError("malformed scaler text");
    StandardScaler s;
    s.mean.resize(n);
    s.scale.resize(n);
    s.active.resize(n);
    for (std::size_t d = 0; d < n; ++d) {
      std::size_t idx;
      std::string m, sd;
      int act;
      if (!(in >> idx >> m >> sd >> act) || idx != d) throw DataError("malformed scaler line");
      s.mean[d] = std::strtod(m.c_str(), nullptr);
      s.scale[d] = std::strtod(sd.c_str(), nullptr);
      s.active[d] = act != 0;
    }
    return s;
  }
};

/// Per-dimension mean/std from `train`; dimensions with std below 1e-12 are
/// only centered. `mask` selects the dimensions to touch (all when empty).
inline StandardScaler fit_scaler(const std::vector<std::vector<double>>& train,
                                 const std::vector<bool>& mask = {}) {
  if (train.empty()) throw DataError("cannot fit a scaler on an empty set");
  const std::size_t D = train.front().size();
  StandardScaler s;
  s.mean.assign(D, 0.0);
  s.scale.assign(D, 1.0);
  s.active.assign(D, true);
  if (!mask.empty()) {
    if (mask.size() != D) throw DataError("scaler mask dimension mismatch");
    s.active = mask;
  }
  const auto N = static_cast<double>(train.size());
  for (const auto& row : train) {
    if (row.size() != D) throw DataError("ragged training vectors");
    for (std::size_t d = 0; d < D; ++d) s.mean[d] += row[d];
  }
  for (double& m : s.mean) m /= N;
  std::vector<double> var(D, 0.0);
  for (const auto& row : train)
    for (std::size_t d = 0; d < D; ++d) var[d] += (row[d] - s.mean[d]) * (row[d] - s.mean[d]);
  for (std::size_t d = 0; d < D; ++d) {
    const double sd = std::sqrt(var[d] / N);
    s.scale[d] = sd < kDegenerateStd ? 1.0 : sd;
  }
  return s;
}

struct Standardized {
  std::vector<std::vector<double>> vectors;
  StandardScaler scaler;
};

inline Standardized standardize(const std::vector<std::vector<double>>& train,
                                const std::vector<std::vector<double>>& apply_to,
                                const std::vector<bool>& mask = {}) {
  Standardized out{{}, fit_scaler(train, mask)};
  out.vectors.reserve(apply_to.size());
  for (const auto& v : apply_to) out.vectors.push_back(out.scaler.apply(v));
  return out;
}

}  // namespace bc::features
