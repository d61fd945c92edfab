#pragma once

// Multi-coder backchannel annotations: parsing, consensus merging and
// Fleiss' kappa.
//
// Matching rule: two annotations from different coders refer to the same
// instance when both their onsets and their offsets differ by strictly less
// than one second. Clusters grow by single linkage in ascending onset order;
// a cluster holds at most one annotation per coder, and when several
// candidates compete the one closest (|d onset| + |d offset|) to the cluster's
// running mean joins first. Losing candidates stay available for later
// clusters.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "backchannel/core.hpp"
#include "backchannel/csv.hpp"

namespace bc::annotations {

inline constexpr double kMatchToleranceS = 1.0;

struct CoderAnnotation {
  std::size_t id = 0;
  std::string coder_id;
  std::string conversation_id;
  std::string subject_id;
  TimeInterval interval;
  SignalSet signals;
};

struct ConsensusInstance {
  std::string conversation_id;
  std::string subject_id;
  TimeInterval interval;
  SignalSet signals;
  int support = 0;
  std::vector<std::size_t> member_ids;
};

using Cluster = std::vector<CoderAnnotation>;

struct MergeDiagnostics {
  std::size_t clusters = 0;
  std::size_t single_coder_clusters = 0;
  std::size_t dropped_empty_signals = 0;
};

/// N items x k categories of rating counts; every row sums to `raters`.
struct AgreementTable {
  int raters = 0;
  int categories = 0;
  std::vector<std::vector<int>> counts;
};

inline bool linked(const CoderAnnotation& a, const CoderAnnotation& b) {
  return std::abs(a.interval.onset_s - b.interval.onset_s) < kMatchToleranceS &&
         std::abs(a.interval.offset_s - b.interval.offset_s) < kMatchToleranceS;
}

/// Rejects empty signal sets and overlapping annotations from one coder for
/// one subject.
inline void validate(const std::vector<CoderAnnotation>& annotations) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::vector<const CoderAnnotation*>> by_coder;
  for (const auto& a : annotations) {
    if (a.signals.empty())
      throw DataError(fmt::format("annotation by coder '{}' at [{}, {}] has no signals", a.coder_id,
                                  a.interval.onset_s, a.interval.offset_s));
    if (!(a.interval.onset_s < a.interval.offset_s) || a.interval.onset_s < 0.0)
      throw DataError(fmt::format("annotation by coder '{}' has invalid interval [{}, {}]",
                                  a.coder_id, a.interval.onset_s, a.interval.offset_s));
    by_coder[{a.conversation_id, a.subject_id, a.coder_id}].push_back(&a);
  }
  for (auto& [key, list] : by_coder) {
    std::sort(list.begin(), list.end(), [](const auto* x, const auto* y) {
      return std::tie(x->interval.onset_s, x->interval.offset_s) <
             std::tie(y->interval.onset_s, y->interval.offset_s);
    });
    for (std::size_t i = 1; i < list.size(); ++i) {
      if (overlaps(list[i - 1]->interval, list[i]->interval))
        throw DataError(fmt::format(
            "coder '{}' has overlapping annotations [{}, {}] and [{}, {}] for subject '{}' in '{}'",
            std::get<2>(key), list[i - 1]->interval.onset_s, list[i - 1]->interval.offset_s,
            list[i]->interval.onset_s, list[i]->interval.offset_s, std::get<1>(key),
            std::get<0>(key)));
    }
  }
}

/// Canonical processing order: onset, offset, coder, id.
inline std::vector<std::size_t> canonical_order(const std::vector<CoderAnnotation>& a) {
  std::vector<std::size_t> order(a.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return std::tie(a[x].interval.onset_s, a[x].interval.offset_s, a[x].coder_id, a[x].id) <
           std::tie(a[y].interval.onset_s, a[y].interval.offset_s, a[y].coder_id, a[y].id);
  });
  return order;
}

/// Clusters the annotations of a single (conversation, subject).
inline std::vector<Cluster> cluster_annotations(const std::vector<CoderAnnotation>& annotations) {
  if (annotations.empty()) return {};
  for (const auto& a : annotations) {
    if (a.conversation_id != annotations.front().conversation_id ||
        a.subject_id != annotations.front().subject_id)
      throw DataError("cluster_annotations expects a single (conversation, subject)");
  }
  validate(annotations);

  const auto order = canonical_order(annotations);
  std::vector<std::size_t> rank(annotations.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = pos;
  std::vector<bool> assigned(annotations.size(), false);
  std::vector<Cluster> clusters;

  for (std::size_t seed_pos = 0; seed_pos < order.size(); ++seed_pos) {
    const std::size_t seed = order[seed_pos];
    if (assigned[seed]) continue;
    std::vector<std::size_t> members{seed};
    std::set<std::string> coders{annotations[seed].coder_id};
    assigned[seed] = true;
    double sum_on = annotations[seed].interval.onset_s;
    double sum_off = annotations[seed].interval.offset_s;

    while (true) {
      const double mean_on = sum_on / static_cast<double>(members.size());
      const double mean_off = sum_off / static_cast<double>(members.size());
      std::optional<std::size_t> best;
      double best_distance = 0.0;
      for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const std::size_t c = order[pos];
        if (assigned[c] || coders.count(annotations[c].coder_id)) continue;
        const bool touches = std::any_of(members.begin(), members.end(), [&](std::size_t m) {
          return linked(annotations[m], annotations[c]);
        });
        if (!touches) continue;
        const double d = std::abs(annotations[c].interval.onset_s - mean_on) +
                         std::abs(annotations[c].interval.offset_s - mean_off);
        if (!best || d < best_distance) {
          best = c;
          best_distance = d;
        }
      }
      if (!best) break;
      members.push_back(*best);
      coders.insert(annotations[*best].coder_id);
      assigned[*best] = true;
      sum_on += annotations[*best].interval.onset_s;
      sum_off += annotations[*best].interval.offset_s;
    }

    std::sort(members.begin(), members.end(),
              [&](std::size_t x, std::size_t y) { return rank[x] < rank[y]; });
    Cluster cluster;
    for (std::size_t m : members) cluster.push_back(annotations[m]);
    clusters.push_back(std::move(cluster));
  }
  return clusters;
}

/// Keeps clusters marked by >= 2 coders; a signal survives when >= 2 members
/// marked it; clusters left with no signal are dropped and counted.
inline std::vector<ConsensusInstance> consensus(const std::vector<Cluster>& clusters,
                                                MergeDiagnostics* diagnostics = nullptr) {
  std::vector<ConsensusInstance> out;
  for (const auto& cluster : clusters) {
    if (diagnostics) ++diagnostics->clusters;
    if (cluster.size() < 2) {
      if (diagnostics) ++diagnostics->single_coder_clusters;
      continue;
    }
    SignalSet voted;
    for (SignalKind s : kAllSignals) {
      int votes = 0;
      for (const auto& a : cluster) votes += a.signals.contains(s) ? 1 : 0;
      if (votes >= 2) voted.insert(s);
    }
    if (voted.empty()) {
      if (diagnostics) ++diagnostics->dropped_empty_signals;
      continue;
    }
    ConsensusInstance inst;
    inst.conversation_id = cluster.front().conversation_id;
    inst.subject_id = cluster.front().subject_id;
    double on = 0.0, off = 0.0;
    for (const auto& a : cluster) {
      on += a.interval.onset_s;
      off += a.interval.offset_s;
      inst.member_ids.push_back(a.id);
    }
    const auto n = static_cast<double>(cluster.size());
    inst.interval = {on / n, off / n};
    inst.signals = voted;
    inst.support = static_cast<int>(cluster.size());
    out.push_back(std::move(inst));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.interval.onset_s < b.interval.onset_s;
  });
  return out;
}

struct MergeResult {
  std::vector<ConsensusInstance> instances;
  std::vector<std::vector<Cluster>> clusters;  // per (conversation, subject)
  MergeDiagnostics diagnostics;
};

/// Groups by (conversation, subject), clusters, and merges. Instances are
/// ordered by conversation, subject, onset.
inline MergeResult merge(const std::vector<CoderAnnotation>& annotations) {
  std::map<std::pair<std::string, std::string>, std::vector<CoderAnnotation>> groups;
  for (const auto& a : annotations) groups[{a.conversation_id, a.subject_id}].push_back(a);
  MergeResult result;
  for (auto& [key, list] : groups) {
    auto clusters = cluster_annotations(list);
    auto merged = consensus(clusters, &result.diagnostics);
    result.instances.insert(result.instances.end(), merged.begin(), merged.end());
    result.clusters.push_back(std::move(clusters));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Agreement

/// Fleiss' kappa; nullopt means undefined (expected agreement is perfect).
inline std::optional<double> fleiss_kappa(const AgreementTable& table) {
  const int n = table.raters;
  const int k = table.categories;
  const auto N = table.counts.size();
  if (n < 2) throw DataError("fleiss_kappa needs at least 2 raters");
  if (k < 2) throw DataError("fleiss_kappa needs at least 2 categories");
  if (N == 0) throw DataError("fleiss_kappa needs at least 1 item");

  std::vector<double> category_totals(static_cast<std::size_t>(k), 0.0);
  double p_bar = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const auto& row = table.counts[i];
    if (row.size() != static_cast<std::size_t>(k))
      throw DataError(fmt::format("agreement row {} has {} categories, expected {}", i, row.size(), k));
    long sum = 0, sum_sq = 0;
    for (int j = 0; j < k; ++j) {
      const int c = row[static_cast<std::size_t>(j)];
      if (c < 0) throw DataError(fmt::format("agreement row {} has a negative count", i));
      sum += c;
      sum_sq += static_cast<long>(c) * c;
      category_totals[static_cast<std::size_t>(j)] += c;
    }
    if (sum != n)
      throw DataError(fmt::format("agreement row {} sums to {}, expected {}", i, sum, n));
    p_bar += static_cast<double>(sum_sq - n) / static_cast<double>(n * (n - 1));
  }
  p_bar /= static_cast<double>(N);
  double p_e = 0.0;
  for (double total : category_totals) {
    const double p = total / (static_cast<double>(N) * n);
    p_e += p * p;
  }
  if (p_e >= 1.0) return std::nullopt;
  return (p_bar - p_e) / (1.0 - p_e);
}

/// Discretizes [span] into grid bins; per bin each coder rates "present"
/// (column 0) when any of its annotations overlaps the bin, else "absent".
/// With `only` set, only annotations carrying that signal count.
inline AgreementTable build_agreement_table(const std::vector<CoderAnnotation>& annotations,
                                            const std::vector<std::string>& coders,
                                            TimeInterval span, double grid_step_s,
                                            std::optional<SignalKind> only = std::nullopt) {
  if (!(grid_step_s > 0.0)) throw ConfigError("grid step must be positive");
  AgreementTable table;
  table.raters = static_cast<int>(coders.size());
  table.categories = 2;
  const auto bins = static_cast<std::size_t>(std::ceil(span.duration() / grid_step_s - 1e-9));
  for (std::size_t b = 0; b < bins; ++b) {
    const TimeInterval bin{span.onset_s + static_cast<double>(b) * grid_step_s,
                           std::min(span.offset_s, span.onset_s + static_cast<double>(b + 1) * grid_step_s)};
    int present = 0;
    for (const auto& coder : coders) {
      const bool marked = std::any_of(annotations.begin(), annotations.end(), [&](const auto& a) {
        return a.coder_id == coder && overlaps(a.interval, bin) &&
               (!only || a.signals.contains(*only));
      });
      present += marked ? 1 : 0;
    }
    table.counts.push_back({present, table.raters - present});
  }
  return table;
}

/// Per-cluster presence table: each cluster is an item, coders inside the
/// cluster rate "present", the rest "absent".
inline AgreementTable cluster_agreement_table(const std::vector<Cluster>& clusters, int coder_count) {
  AgreementTable table;
  table.raters = coder_count;
  table.categories = 2;
  for (const auto& c : clusters) {
    const int present = static_cast<int>(c.size());
    if (present > coder_count) throw DataError("cluster has more members than coders");
    table.counts.push_back({present, coder_count - present});
  }
  return table;
}

// ---------------------------------------------------------------------------
// Files

/// Rows `conversation_id,subject_id,coder_id,onset_s,offset_s,signal`, one per
/// (annotation, signal). Rows sharing coder, subject and interval form one
/// annotation.
inline std::vector<CoderAnnotation> read_annotations(const csv::Table& t) {
  const auto c_conv = t.column("conversation_id"), c_subj = t.column("subject_id"),
             c_coder = t.column("coder_id"), c_on = t.column("onset_s"),
             c_off = t.column("offset_s"), c_sig = t.column("signal");
  std::vector<CoderAnnotation> out;
  std::map<std::tuple<std::string, std::string, std::string, double, double>, std::size_t> index;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto where = t.where(r);
    const double on = csv::to_double(row[c_on], where);
    const double off = csv::to_double(row[c_off], where);
    auto signal = parse_signal(row[c_sig]);
    if (!signal) throw DataError(fmt::format("{}: unknown signal '{}'", where, row[c_sig]));
    if (!(on < off) || on < 0.0)
      throw DataError(fmt::format("{}: invalid interval [{}, {}]", where, on, off));
    auto key = std::make_tuple(row[c_conv], row[c_subj], row[c_coder], on, off);
    auto it = index.find(key);
    if (it == index.end()) {
      CoderAnnotation a;
      a.id = out.size();
      a.conversation_id = row[c_conv];
      a.subject_id = row[c_subj];
      a.coder_id = row[c_coder];
      a.interval = {on, off};
      it = index.emplace(key, out.size()).first;
      out.push_back(std::move(a));
    }
    out[it->second].signals.insert(*signal);
  }
  validate(out);
  return out;
}

inline std::vector<CoderAnnotation> read_annotations(const std::filesystem::path& path) {
  return read_annotations(csv::read(path));
}

inline void write_annotations(csv::Writer& w, const std::vector<CoderAnnotation>& annotations) {
  w.row({"conversation_id", "subject_id", "coder_id", "onset_s", "offset_s", "signal"});
  for (const auto& a : annotations)
    for (SignalKind s : a.signals.kinds())
      w.row({a.conversation_id, a.subject_id, a.coder_id, csv::seconds(a.interval.onset_s),
             csv::seconds(a.interval.offset_s), std::string(to_string(s))});
}

/// Rows `conversation_id,subject_id,onset_s,offset_s,signal,support`.
inline void write_consensus(csv::Writer& w, const std::vector<ConsensusInstance>& instances) {
  w.row({"conversation_id", "subject_id", "onset_s", "offset_s", "signal", "support"});
  for (const auto& inst : instances)
    for (SignalKind s : inst.signals.kinds())
      w.row({inst.conversation_id, inst.subject_id, csv::seconds(inst.interval.onset_s),
             csv::seconds(inst.interval.offset_s), std::string(to_string(s)),
             std::to_string(inst.support)});
}

inline std::vector<ConsensusInstance> read_consensus(const csv::Table& t) {
  const auto c_conv = t.column("conversation_id"), c_subj = t.column("subject_id"),
             c_on = t.column("onset_s"), c_off = t.column("offset_s"), c_sig = t.column("signal"),
             c_sup = t.column("support");
  std::vector<ConsensusInstance> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto where = t.where(r);
    const double on = csv::to_double(row[c_on], where);
    const double off = csv::to_double(row[c_off], where);
    auto signal = parse_signal(row[c_sig]);
    if (!signal) throw DataError(fmt::format("{}: unknown signal '{}'", where, row[c_sig]));
    const bool same = !out.empty() && out.back().conversation_id == row[c_conv] &&
                      out.back().subject_id == row[c_subj] && out.back().interval.onset_s == on &&
                      out.back().interval.offset_s == off;
    if (!same) {
      ConsensusInstance inst;
      inst.conversation_id = row[c_conv];
      inst.subject_id = row[c_subj];
      inst.interval = make_interval(on, off);
      inst.support = static_cast<int>(csv::to_int(row[c_sup], where));
      out.push_back(std::move(inst));
    }
    out.back().signals.insert(*signal);
  }
  return out;
}

}  // namespace bc::annotations
