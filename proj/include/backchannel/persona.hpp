#pragma once

// Signal categories, the multimodal/unimodal ratio per subject, the
// extraversion comparison and the personality-contingent response sampler.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "backchannel/core.hpp"
#include "backchannel/csv.hpp"
#include "backchannel/stats.hpp"

namespace bc::persona {

using json = nlohmann::json;

enum class SignalCategory { visual, verbal, both };

inline constexpr std::array<SignalCategory, 3> kAllCategories = {SignalCategory::visual, SignalCategory::verbal,
                                                                 SignalCategory::both};

inline std::string_view to_string(SignalCategory c) {
  switch (c) {
    case SignalCategory::visual: return "visual";
    case SignalCategory::verbal: return "verbal";
    case SignalCategory::both: return "both";
  }
  return "?";
}

inline SignalCategory parse_category(std::string_view s) {
  for (auto c : kAllCategories)
    if (to_string(c) == s) return c;
  throw DataError(fmt::format("unknown signal category '{}'", s));
}

inline bool is_visual(SignalKind k) {
  return k == SignalKind::Nod || k == SignalKind::HeadShake || k == SignalKind::MouthSmile ||
         k == SignalKind::MouthFrown;
}

/// Eyebrow signals do not affect the category; a set holding nothing but
/// eyebrow signals has none.
inline std::optional<SignalCategory> categorize(SignalSet signals) {
  if (signals.empty()) throw DataError("cannot categorize an empty signal set");
  bool visual = false;
  for (SignalKind k : signals.kinds()) visual = visual || is_visual(k);
  const bool verbal = signals.contains(SignalKind::Utterance);
  if (visual && verbal) return SignalCategory::both;
  if (visual) return SignalCategory::visual;
  if (verbal) return SignalCategory::verbal;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Ratio of multimodal to unimodal instances

struct TauStatistic {
  std::string subject_id;
  std::size_t multimodal = 0;
  std::size_t unimodal = 0;
  std::optional<double> tau;  // unset when unimodal == 0
};

/// Instances that have no category are ignored. Output is ordered by subject.
inline std::vector<TauStatistic> tau_per_subject(const std::vector<std::pair<std::string, SignalSet>>& instances) {
  std::map<std::string, TauStatistic> by;
  for (const auto& [subject, signals] : instances) {
    if (signals.empty() || !categorize(signals)) continue;
    auto& t = by[subject];
    t.subject_id = subject;
    if (signals.size() >= 2)
      ++t.multimodal;
    else
      ++t.unimodal;
  }
  std::vector<TauStatistic> out;
  for (auto& [s, t] : by) {
    if (t.unimodal > 0) t.tau = static_cast<double>(t.multimodal) / static_cast<double>(t.unimodal);
    out.push_back(t);
  }
  return out;
}

struct ExtraversionTest {
  double threshold = 0.0;
  std::vector<std::string> introverts, extroverts;
  std::vector<std::string> excluded;  // undefined tau
  stats::KsResult ks;
};

/// Median of a sample (mean of the two middle values for even sizes).
inline double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : v[n / 2 - 1] + (v[n / 2] - v[n / 2 - 1]) / 2.0;
}

/// Splits subjects with defined tau at the median extraversion score (or at
/// `threshold`); scores at or below the split are introverts. Compares the
/// two tau samples with the two-sample K-S test.
inline ExtraversionTest extraversion_ks(const std::vector<TauStatistic>& taus,
                                        const std::map<std::string, double>& scores,
                                        std::optional<double> threshold = std::nullopt) {
  ExtraversionTest out;
  std::vector<const TauStatistic*> kept;
  std::vector<double> kept_scores;
  for (const auto& t : taus) {
    if (!t.tau) {
      out.excluded.push_back(t.subject_id);
      continue;
    }
    auto it = scores.find(t.subject_id);
    if (it == scores.end()) throw DataError(fmt::format("subject {} has no extraversion score", t.subject_id));
    kept.push_back(&t);
    kept_scores.push_back(it->second);
  }
  if (kept.empty()) throw DataError("no subject has a defined tau");
  out.threshold = threshold ? *threshold : median(kept_scores);
  std::vector<double> low, high;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept_scores[i] <= out.threshold) {
      out.introverts.push_back(kept[i]->subject_id);
      low.push_back(*kept[i]->tau);
    } else {
      out.extroverts.push_back(kept[i]->subject_id);
      high.push_back(*kept[i]->tau);
    }
  }
  if (low.empty() || high.empty())
    throw DataError(fmt::format("extraversion split at {} leaves an empty side", out.threshold));
  out.ks = stats::ks_two_sample(low, high);
  return out;
}

// ---------------------------------------------------------------------------
// Profiles and sampling

struct Combo {
  SignalSet signals;
  double p = 0.0;
};

struct TokenWeight {
  std::string token;
  double p = 0.0;
};

struct PersonaProfile {
  std::string label;
  double p_multimodal = 0.5;
  std::vector<Combo> visual_unimodal;
  std::vector<Combo> visual_multimodal;
  std::vector<Combo> verbal_multimodal;  // shared by the verbal and both categories
  std::vector<TokenWeight> utterance_tokens;

  double p_unimodal() const { return 1.0 - p_multimodal; }

  void validate() const {
    if (!(p_multimodal >= 0.0 && p_multimodal <= 1.0))
      throw DataError(fmt::format("profile {}: p_multimodal {} outside [0, 1]", label, p_multimodal));
    auto check = [&](const char* name, double sum, std::size_t n) {
      if (n == 0) throw DataError(fmt::format("profile {}: table {} is empty", label, name));
      if (std::abs(sum - 1.0) > 1e-9) throw DataError(fmt::format("profile {}: table {} sums to {}", label, name, sum));
    };
    auto sum_of = [&](const std::vector<Combo>& t, const char* name) {
      double s = 0.0;
      for (const auto& c : t) {
        if (c.p < 0.0 || c.signals.empty()) throw DataError(fmt::format("profile {}: bad entry in {}", label, name));
        s += c.p;
      }
      check(name, s, t.size());
    };
    sum_of(visual_unimodal, "visual_unimodal");
    sum_of(visual_multimodal, "visual_multimodal");
    sum_of(verbal_multimodal, "verbal_multimodal");
    double s = 0.0;
    for (const auto& t : utterance_tokens) {
      if (t.p < 0.0 || t.token.empty()) throw DataError(fmt::format("profile {}: bad utterance token", label));
      s += t.p;
    }
    check("utterance_tokens", s, utterance_tokens.size());
  }

  static std::vector<TokenWeight> uniform_tokens(const std::vector<std::string>& tokens) {
    std::vector<TokenWeight> out;
    for (const auto& t : tokens) out.push_back({t, 1.0 / static_cast<double>(tokens.size())});
    return out;
  }

  /// Shared signal tables with the given multimodal probability.
  static PersonaProfile with_multimodal(std::string label, double p_multimodal) {
    using K = SignalKind;
    PersonaProfile p;
    p.label = std::move(label);
    p.p_multimodal = p_multimodal;
    p.visual_unimodal = {{{K::Nod}, 0.83}, {{K::HeadShake}, 0.08}, {{K::MouthSmile}, 0.09}};
    p.visual_multimodal = {{{K::Nod, K::MouthSmile}, 0.60}, {{K::HeadShake, K::MouthSmile}, 0.40}};
    p.verbal_multimodal = {{{K::Nod, K::Utterance}, 0.80},
                           {{K::MouthSmile, K::Utterance}, 0.13},
                           {{K::HeadShake, K::Utterance}, 0.05},
                           {{K::HeadShake, K::Utterance, K::MouthSmile}, 0.01},
                           {{K::Nod, K::Utterance, K::MouthSmile}, 0.01}};
    p.utterance_tokens = uniform_tokens({"okay", "hmm", "haan"});
    return p;
  }

  static PersonaProfile extrovert() { return with_multimodal("extrovert", 0.51); }
  static PersonaProfile introvert() { return with_multimodal("introvert", 0.35); }
};

inline json to_json(const PersonaProfile& p) {
  auto table = [](const std::vector<Combo>& t) {
    json a = json::array();
    for (const auto& c : t) a.push_back({{"signals", c.signals.to_string()}, {"p", c.p}});
    return a;
  };
  json tokens = json::array();
  for (const auto& t : p.utterance_tokens) tokens.push_back({{"token", t.token}, {"p", t.p}});
  return {{"label", p.label},
          {"p_multimodal", p.p_multimodal},
          {"visual_unimodal", table(p.visual_unimodal)},
          {"visual_multimodal", table(p.visual_multimodal)},
          {"verbal_multimodal", table(p.verbal_multimodal)},
          {"utterance_tokens", tokens}};
}

inline PersonaProfile profile_from_json(const json& j) {
  PersonaProfile p;
  try {
    p.label = j.at("label").get<std::string>();
    p.p_multimodal = j.at("p_multimodal").get<double>();
    auto table = [&](const char* key) {
      std::vector<Combo> out;
      for (const auto& e : j.at(key)) out.push_back({SignalSet::parse(e.at("signals").get<std::string>()), e.at("p").get<double>()});
      return out;
    };
    p.visual_unimodal = table("visual_unimodal");
    p.visual_multimodal = table("visual_multimodal");
    p.verbal_multimodal = table("verbal_multimodal");
    if (j.contains("utterance_tokens"))
      for (const auto& e : j.at("utterance_tokens"))
        p.utterance_tokens.push_back({e.at("token").get<std::string>(), e.at("p").get<double>()});
    else
      p.utterance_tokens = PersonaProfile::uniform_tokens({"okay", "hmm", "haan"});
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed persona profile: {}", e.what()));
  }
  p.validate();
  return p;
}

inline PersonaProfile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open profile '{}'", path.string()));
  try {
    return profile_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

/// Index of the first cumulative weight exceeding u (the last entry absorbs
/// rounding).
template <typename Table>
std::size_t inverse_transform(const Table& table, double u) {
  double cum = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    cum += table[i].p;
    if (u < cum) return i;
  }
  return table.size() - 1;
}

struct Response {
  SignalCategory category = SignalCategory::visual;
  bool multimodal = false;
  SignalSet signals;
  std::string utterance_token;  // set whenever the signals include Utterance
};

/// One uniform per stage, drawn from `uniform()` in order: the
/// unimodal/multimodal branch (visual and verbal only), the signal table, then
/// the utterance token when one is needed.
template <typename UniformSource>
Response sample_response_with(const PersonaProfile& profile, SignalCategory category, UniformSource&& uniform) {
  Response r;
  r.category = category;
  switch (category) {
    case SignalCategory::both:
      r.multimodal = true;
      r.signals = profile.verbal_multimodal[inverse_transform(profile.verbal_multimodal, uniform())].signals;
      break;
    case SignalCategory::visual: {
      r.multimodal = uniform() < profile.p_multimodal;
      const auto& table = r.multimodal ? profile.visual_multimodal : profile.visual_unimodal;
      r.signals = table[inverse_transform(table, uniform())].signals;
      break;
    }
    case SignalCategory::verbal:
      r.multimodal = uniform() < profile.p_multimodal;
      if (r.multimodal)
        r.signals = profile.verbal_multimodal[inverse_transform(profile.verbal_multimodal, uniform())].signals;
      else
        r.signals = SignalSet{SignalKind::Utterance};
      break;
  }
  if (r.signals.contains(SignalKind::Utterance))
    r.utterance_token = profile.utterance_tokens[inverse_transform(profile.utterance_tokens, uniform())].token;
  return r;
}

inline Response sample_response(const PersonaProfile& profile, SignalCategory category, Rng& rng) {
  return sample_response_with(profile, category, [&] { return rng.uniform(); });
}

/// Rows `t_s,category,signals,utterance_token`.
struct LoggedResponse {
  double t_s = 0.0;
  Response response;
};

inline void write_response_log(csv::Writer& w, const std::vector<LoggedResponse>& log) {
  w.row({"t_s", "category", "signals", "utterance_token"});
  for (const auto& e : log)
    w.row({csv::seconds(e.t_s), std::string(to_string(e.response.category)), e.response.signals.to_string(),
           e.response.utterance_token.empty() ? "-" : e.response.utterance_token});
}

}  // namespace bc::persona
