#pragma once

// Negative (no-backchannel) instances: regions where the listener neither
// speaks nor backchannels, packed left to right with random-length windows.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "backchannel/annotations.hpp"
#include "backchannel/core.hpp"
#include "backchannel/csv.hpp"

namespace bc::sampling {

inline constexpr double kMinNegativeS = 1.06;
inline constexpr double kMaxNegativeS = 5.43;
inline constexpr int kLengthRetries = 3;

struct VoiceActivity {
  std::string conversation_id;
  std::string subject_id;
  std::vector<TimeInterval> speech;  // sorted, disjoint
};

struct NegativeInstance {
  std::string conversation_id;
  std::string subject_id;  // the listener
  TimeInterval interval;
};

/// Sorts and fuses overlapping or touching intervals.
inline std::vector<TimeInterval> normalize(std::vector<TimeInterval> intervals) {
  std::sort(intervals.begin(), intervals.end(), [](const auto& a, const auto& b) {
    return a.onset_s < b.onset_s || (a.onset_s == b.onset_s && a.offset_s < b.offset_s);
  });
  std::vector<TimeInterval> out;
  for (const auto& iv : intervals) {
    if (!out.empty() && iv.onset_s <= out.back().offset_s)
      out.back().offset_s = std::max(out.back().offset_s, iv.offset_s);
    else
      out.push_back(iv);
  }
  return out;
}

/// span minus `removed`, as maximal sorted intervals.
inline std::vector<TimeInterval> subtract(const std::vector<TimeInterval>& regions,
                                          const std::vector<TimeInterval>& removed) {
  const auto cuts = normalize(removed);
  std::vector<TimeInterval> out;
  for (const auto& region : regions) {
    double cursor = region.onset_s;
    for (const auto& cut : cuts) {
      if (cut.offset_s <= cursor) continue;
      if (cut.onset_s >= region.offset_s) break;
      if (cut.onset_s > cursor) out.push_back({cursor, cut.onset_s});
      cursor = std::max(cursor, cut.offset_s);
      if (cursor >= region.offset_s) break;
    }
    if (cursor < region.offset_s) out.push_back({cursor, region.offset_s});
  }
  return out;
}

/// Maximal intervals of `span` where the listener is neither speaking nor
/// inside a consensus backchannel. Speech is removed first, then positives.
inline std::vector<TimeInterval> eligible_regions(
    TimeInterval span, const VoiceActivity& listener_vad,
    const std::vector<annotations::ConsensusInstance>& positives) {
  auto regions = subtract({span}, listener_vad.speech);
  std::vector<TimeInterval> pos;
  pos.reserve(positives.size());
  for (const auto& p : positives) pos.push_back(p.interval);
  return subtract(regions, pos);
}

/// Greedy packing with an injectable length source (must return values in
/// [kMinNegativeS, kMaxNegativeS]). A failed fit is retried up to three times
/// before moving to the next region.
template <typename LengthSource>
std::vector<TimeInterval> pack_negatives(const std::vector<TimeInterval>& regions,
                                         LengthSource&& draw_length,
                                         std::optional<std::size_t> max_count = std::nullopt) {
  std::vector<TimeInterval> out;
  for (const auto& region : regions) {
    double cursor = region.onset_s;
    while (region.offset_s - cursor >= kMinNegativeS) {
      if (max_count && out.size() >= *max_count) return out;
      bool placed = false;
      for (int attempt = 0; attempt <= kLengthRetries; ++attempt) {
        const double length = draw_length();
        if (cursor + length <= region.offset_s) {
          out.push_back({cursor, cursor + length});
          cursor += length;
          placed = true;
          break;
        }
      }
      if (!placed) break;
    }
  }
  return out;
}

inline std::vector<TimeInterval> sample_negative_intervals(const std::vector<TimeInterval>& regions,
                                                           std::uint64_t seed,
                                                           std::optional<std::size_t> max_count = std::nullopt) {
  Rng rng(seed);
  return pack_negatives(
      regions, [&] { return rng.uniform(kMinNegativeS, kMaxNegativeS); }, max_count);
}

/// Per-conversation seed: master seed mixed with a stable hash of the id.
inline std::uint64_t conversation_seed(std::uint64_t master_seed, const std::string& conversation_id) {
  return master_seed ^ stable_hash(conversation_id);
}

inline std::vector<NegativeInstance> sample_negatives(const std::string& conversation_id,
                                                      const std::string& listener_id,
                                                      const std::vector<TimeInterval>& regions,
                                                      std::uint64_t seed,
                                                      std::optional<std::size_t> max_count = std::nullopt) {
  std::vector<NegativeInstance> out;
  for (const auto& iv : sample_negative_intervals(regions, seed, max_count))
    out.push_back({conversation_id, listener_id, iv});
  return out;
}

// ---------------------------------------------------------------------------
// Files

/// Rows `conversation_id,subject_id,onset_s,offset_s`.
inline std::vector<VoiceActivity> read_vad(const csv::Table& t) {
  const auto c_conv = t.column("conversation_id"), c_subj = t.column("subject_id"),
             c_on = t.column("onset_s"), c_off = t.column("offset_s");
  std::map<std::pair<std::string, std::string>, std::vector<TimeInterval>> grouped;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto where = t.where(r);
    const double on = csv::to_double(row[c_on], where);
    const double off = csv::to_double(row[c_off], where);
    if (!(on < off)) throw DataError(fmt::format("{}: invalid speech interval", where));
    grouped[{row[c_conv], row[c_subj]}].push_back({on, off});
  }
  std::vector<VoiceActivity> out;
  for (auto& [key, list] : grouped) out.push_back({key.first, key.second, normalize(std::move(list))});
  return out;
}

inline void write_vad(csv::Writer& w, const std::vector<VoiceActivity>& vad) {
  w.row({"conversation_id", "subject_id", "onset_s", "offset_s"});
  for (const auto& v : vad)
    for (const auto& iv : v.speech)
      w.row({v.conversation_id, v.subject_id, csv::seconds(iv.onset_s), csv::seconds(iv.offset_s)});
}

/// Rows `conversation_id,subject_id,onset_s,offset_s,label` with label
/// `negative`.
inline void write_negatives(csv::Writer& w, const std::vector<NegativeInstance>& negatives) {
  w.row({"conversation_id", "subject_id", "onset_s", "offset_s", "label"});
  for (const auto& n : negatives)
    w.row({n.conversation_id, n.subject_id, csv::seconds(n.interval.onset_s),
           csv::seconds(n.interval.offset_s), "negative"});
}

inline std::vector<NegativeInstance> read_negatives(const csv::Table& t) {
  const auto c_conv = t.column("conversation_id"), c_subj = t.column("subject_id"),
             c_on = t.column("onset_s"), c_off = t.column("offset_s");
  std::vector<NegativeInstance> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto where = t.where(r);
    out.push_back({t.rows[r][c_conv], t.rows[r][c_subj],
                   make_interval(csv::to_double(t.rows[r][c_on], where),
                                 csv::to_double(t.rows[r][c_off], where))});
  }
  return out;
}

}  // namespace bc::sampling
