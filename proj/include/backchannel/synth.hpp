#pragma once

// Seeded synthetic dyadic conversations: alternating speaker turns, listener
// backchannels with planted feature signatures, predictive speaker context,
// noisy coder annotations, voice activity and extraversion scores.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "backchannel/annotations.hpp"
#include "backchannel/core.hpp"
#include "backchannel/csv.hpp"
#include "backchannel/features.hpp"
#include "backchannel/parallel.hpp"
#include "backchannel/persona.hpp"
#include "backchannel/sampling.hpp"

namespace bc::synth {

struct CoderNoise {
  double miss = 0.1;
  double jitter_s = 0.15;
  double confusion = 0.05;
};

struct SynthConfig {
  int conversations = 50;
  double duration_s = 300.0;
  double rate_per_min = 10.0;  // backchannels per minute of listening
  CoderNoise noise;
  int coders = 3;
  double extrovert_fraction = 0.5;
  double detectability = 1.0;
  double visual_share = 0.58;
  double verbal_share = 0.12;
  double both_share = 0.30;
  double eyebrow_share = 0.01;  // eyebrow-only events, outside the three categories
  double turn_min_s = 8.0, turn_max_s = 25.0;
  double gap_min_s = 0.2, gap_max_s = 1.5;
  std::uint64_t seed = 7;

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(fmt::format("synth: {} = {} outside [0, 1]", name, p));
    };
    if (conversations < 1) throw ConfigError("synth: need at least one conversation");
    if (!(duration_s >= 10.0)) throw ConfigError("synth: duration must be at least 10 s");
    if (!(rate_per_min >= 0.0)) throw ConfigError("synth: rate must be non-negative");
    prob(noise.miss, "miss probability");
    prob(noise.confusion, "confusion probability");
    prob(extrovert_fraction, "extrovert fraction");
    prob(eyebrow_share, "eyebrow share");
    if (!(noise.jitter_s >= 0.0 && noise.jitter_s < 0.5)) throw ConfigError("synth: jitter std must lie in [0, 0.5)");
    if (coders < 2) throw ConfigError("synth: need at least two coders");
    if (!(detectability >= 0.0)) throw ConfigError("synth: detectability must be non-negative");
    if (!(visual_share >= 0 && verbal_share >= 0 && both_share >= 0) ||
        std::abs(visual_share + verbal_share + both_share - 1.0) > 1e-9)
      throw ConfigError("synth: category shares must be non-negative and sum to 1");
    if (!(turn_min_s > 0 && turn_max_s >= turn_min_s && gap_min_s >= 0 && gap_max_s >= gap_min_s))
      throw ConfigError("synth: invalid turn/gap ranges");
  }
};

struct ConversationInfo {
  std::string id;
  double duration_s = 0.0;
  std::string subject_a, subject_b;

  const std::string& partner_of(const std::string& s) const {
    if (s == subject_a) return subject_b;
    if (s == subject_b) return subject_a;
    throw DataError(fmt::format("subject {} is not part of conversation {}", s, id));
  }
};

struct TrueEvent {
  std::string conversation_id;
  std::string subject_id;  // listener
  TimeInterval interval;
  SignalSet signals;
};

struct SubjectTrait {
  std::string subject_id;
  double extraversion = 0.0;
  std::string persona;  // introvert | extrovert
};

struct StreamKey {
  std::string conversation_id, subject_id;
  auto operator<=>(const StreamKey&) const = default;
};

struct Corpus {
  std::vector<ConversationInfo> conversations;
  std::map<StreamKey, std::shared_ptr<const features::FeatureStream>> streams;
  std::vector<annotations::CoderAnnotation> annotations;
  std::vector<sampling::VoiceActivity> vad;
  std::vector<TrueEvent> ground_truth;
  std::vector<SubjectTrait> traits;
};

inline constexpr double kSlotMeanS = (sampling::kMinNegativeS + sampling::kMaxNegativeS) / 2.0;
inline constexpr double kEventInsetS = 0.25;
inline constexpr double kArCoefficient = 0.9;

namespace detail {

inline double half_cosine(double t, TimeInterval iv) {
  if (!iv.contains(t)) return 0.0;
  return std::sin(std::numbers::pi * (t - iv.onset_s) / iv.duration());
}

/// Adds amp * shape(t) to channel c over the frames of `iv`.
template <typename Shape>
void add_profile(features::FeatureStream& s, std::size_t c, TimeInterval iv, double amp, Shape shape) {
  const long from = std::max<long>(0, features::first_frame_at_or_after(iv.onset_s, s.frame_rate_hz));
  const long to = std::min<long>(static_cast<long>(s.data.frames),
                                 features::first_frame_at_or_after(iv.offset_s, s.frame_rate_hz));
  for (long k = from; k < to; ++k) {
    const auto i = static_cast<std::size_t>(k);
    s.data.at(i, c) += amp * shape(s.time_of(i));
  }
}

inline void set_flag(features::FeatureStream& s, std::size_t c, TimeInterval iv) {
  const long from = std::max<long>(0, features::first_frame_at_or_after(iv.onset_s, s.frame_rate_hz));
  const long to = std::min<long>(static_cast<long>(s.data.frames),
                                 features::first_frame_at_or_after(iv.offset_s, s.frame_rate_hz));
  for (long k = from; k < to; ++k) s.data.at(static_cast<std::size_t>(k), c) = 1.0;
}

inline features::FeatureStream background(const features::FeatureSchema& schema, double duration, Rng& rng) {
  features::FeatureStream s;
  s.frame_rate_hz = features::kCanonicalRateHz;
  s.first_frame = 0;
  const auto frames = static_cast<std::size_t>(std::floor(duration * s.frame_rate_hz + features::kFrameEps)) + 1;
  s.data.frames = frames;
  s.data.channels = schema.size();
  s.data.values.assign(frames * schema.size(), 0.0);
  const double innovation = std::sqrt(1.0 - kArCoefficient * kArCoefficient);
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& ch = schema[c];
    if (ch.kind == features::ChannelKind::binary) continue;
    if (ch.kind == features::ChannelKind::categorical) {
      std::size_t state = rng.index(ch.categories.size());
      for (std::size_t t = 0; t < frames; ++t) {
        if (rng.bernoulli(0.05)) state = rng.index(ch.categories.size());
        s.data.at(t, c) = static_cast<double>(state);
      }
      continue;
    }
    double x = rng.normal();
    for (std::size_t t = 0; t < frames; ++t) {
      s.data.at(t, c) = x;
      x = kArCoefficient * x + innovation * rng.normal();
    }
  }
  return s;
}

}  // namespace detail

/// Everything generated for one conversation.
struct ConversationOutput {
  ConversationInfo info;
  features::FeatureStream stream_a, stream_b;
  std::vector<annotations::CoderAnnotation> annotations;
  std::vector<sampling::VoiceActivity> vad;
  std::vector<TrueEvent> events;
};

inline std::string coder_id(int k) { return fmt::format("A{}", k + 1); }

/// Degrades the true events of one listener into one coder's annotations:
/// misses, endpoint jitter, signal confusion, then overlap repair.
inline std::vector<annotations::CoderAnnotation> code_events(const std::vector<TrueEvent>& events, int coder,
                                                             const CoderNoise& noise, double duration, Rng& rng) {
  std::vector<annotations::CoderAnnotation> out;
  for (const auto& e : events) {
    if (rng.bernoulli(noise.miss)) continue;
    double on = e.interval.onset_s + (noise.jitter_s > 0 ? rng.normal(0.0, noise.jitter_s) : 0.0);
    double off = e.interval.offset_s + (noise.jitter_s > 0 ? rng.normal(0.0, noise.jitter_s) : 0.0);
    on = std::clamp(on, 0.0, duration);
    off = std::clamp(off, 0.0, duration);
    if (off - on < 0.1) continue;
    SignalSet signals;
    for (SignalKind k : e.signals.kinds()) {
      if (rng.bernoulli(noise.confusion)) {
        SignalKind other = kAllSignals[rng.index(kAllSignals.size() - 1)];
        if (other >= k) other = kAllSignals[static_cast<std::size_t>(other) + 1];
        signals.insert(other);
      } else {
        signals.insert(k);
      }
    }
    out.push_back({0, coder_id(coder), e.conversation_id, e.subject_id, {on, off}, signals});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.interval.onset_s < b.interval.onset_s; });
  std::vector<annotations::CoderAnnotation> fixed;
  for (auto& a : out) {
    if (!fixed.empty() && a.interval.onset_s < fixed.back().interval.offset_s) {
      a.interval.onset_s = fixed.back().interval.offset_s;
      if (a.interval.offset_s - a.interval.onset_s < 0.1) continue;
    }
    fixed.push_back(a);
  }
  return fixed;
}

inline ConversationOutput generate_conversation(const SynthConfig& cfg, const features::FeatureSchema& schema,
                                                int index, const std::vector<SubjectTrait>& traits) {
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(index), 0x636f6e76ULL}));
  ConversationOutput out;
  out.info.id = fmt::format("c{:03d}", index + 1);
  out.info.duration_s = cfg.duration_s;
  out.info.subject_a = traits[static_cast<std::size_t>(2 * index)].subject_id;
  out.info.subject_b = traits[static_cast<std::size_t>(2 * index + 1)].subject_id;
  const double D = cfg.duration_s;
  const TimeInterval span{0.0, D};

  // Turns
  std::vector<TimeInterval> speech[2];
  int speaker = static_cast<int>(rng.index(2));
  double t = rng.uniform(0.0, cfg.gap_max_s);
  while (t < D) {
    const double len = rng.uniform(cfg.turn_min_s, cfg.turn_max_s);
    const double end = std::min(D, t + len);
    if (end - t > 0.5) speech[speaker].push_back({t, end});
    t = end + rng.uniform(cfg.gap_min_s, cfg.gap_max_s);
    speaker = 1 - speaker;
  }

  features::FeatureStream streams[2] = {detail::background(schema, D, rng), detail::background(schema, D, rng)};
  const std::string subjects[2] = {out.info.subject_a, out.info.subject_b};
  const auto ch = [&](const char* name) { return schema.at(name); };
  const std::size_t vad_c = ch("voice_activity");
  const double amp = 2.5 * cfg.detectability;
  for (int s = 0; s < 2; ++s) {
    streams[s].conversation_id = out.info.id;
    streams[s].subject_id = subjects[s];
    for (const auto& iv : speech[s]) {
      detail::set_flag(streams[s], vad_c, iv);
      detail::add_profile(streams[s], ch("energy"), iv, 2.0, [](double) { return 1.0; });
      detail::add_profile(streams[s], ch("f0"), iv, 1.5, [](double) { return 1.0; });
      detail::add_profile(streams[s], ch("mfcc_1"), iv, 1.0, [](double) { return 1.0; });
    }
  }

  const double q = std::min(1.0, cfg.rate_per_min * kSlotMeanS / 60.0);
  const auto visual_cut = cfg.visual_share, verbal_cut = cfg.visual_share + cfg.verbal_share;
  std::vector<TimeInterval> listener_voice[2];
  for (int l = 0; l < 2; ++l) {
    const int sp = 1 - l;
    const auto& trait = traits[static_cast<std::size_t>(2 * index + l)];
    const auto profile = trait.persona == "extrovert" ? persona::PersonaProfile::extrovert()
                                                       : persona::PersonaProfile::introvert();
    const auto regions = sampling::subtract({span}, speech[l]);
    const auto slots = sampling::pack_negatives(regions, [&] { return rng.uniform(sampling::kMinNegativeS, sampling::kMaxNegativeS); });
    for (const auto& slot : slots) {
      if (!rng.bernoulli(q)) continue;
      const TimeInterval iv{slot.onset_s + kEventInsetS, slot.offset_s - kEventInsetS};
      SignalSet signals;
      std::optional<persona::SignalCategory> category;
      if (rng.bernoulli(cfg.eyebrow_share)) {
        signals.insert(rng.bernoulli(0.7) ? SignalKind::EyebrowRaise : SignalKind::EyebrowFrown);
      } else {
        const double u = rng.uniform();
        category = u < visual_cut ? persona::SignalCategory::visual
                   : u < verbal_cut ? persona::SignalCategory::verbal
                                    : persona::SignalCategory::both;
        signals = persona::sample_response(profile, *category, rng).signals;
      }
      out.events.push_back({out.info.id, subjects[l], iv, signals});

      auto& L = streams[l];
      auto bump = [&](double tt) { return detail::half_cosine(tt, iv); };
      for (SignalKind k : signals.kinds()) {
        switch (k) {
          case SignalKind::Nod:
            detail::add_profile(L, ch("head_vel_R"), iv, amp, bump);
            detail::add_profile(L, ch("head_acc_R"), iv, amp, bump);
            detail::add_profile(L, ch("head_vel_T"), iv, 0.5 * amp, bump);
            break;
          case SignalKind::HeadShake:
            detail::add_profile(L, ch("head_vel_T"), iv, amp, bump);
            detail::add_profile(L, ch("head_acc_T"), iv, amp, bump);
            break;
          case SignalKind::MouthSmile:
            detail::add_profile(L, ch("smile_ratio"), iv, amp, bump);
            detail::add_profile(L, ch("AU06_r"), iv, amp, bump);
            detail::add_profile(L, ch("AU12_r"), iv, amp, bump);
            break;
          case SignalKind::MouthFrown:
            detail::add_profile(L, ch("AU15_r"), iv, amp, bump);
            detail::add_profile(L, ch("AU17_r"), iv, amp, bump);
            break;
          case SignalKind::EyebrowRaise:
            detail::add_profile(L, ch("AU01_r"), iv, amp, bump);
            detail::add_profile(L, ch("AU02_r"), iv, amp, bump);
            break;
          case SignalKind::EyebrowFrown:
            detail::add_profile(L, ch("AU04_r"), iv, amp, bump);
            break;
          case SignalKind::Utterance: {
            detail::add_profile(L, ch("energy"), iv, amp, bump);
            detail::add_profile(L, ch("f0"), iv, amp, bump);
            detail::add_profile(L, ch("mfcc_1"), iv, amp, bump);
            const double quarter = iv.duration() / 4.0;
            const TimeInterval voiced{iv.onset_s + quarter, iv.offset_s - quarter};
            detail::set_flag(L, vad_c, voiced);
            listener_voice[l].push_back(voiced);
            break;
          }
        }
      }

      // Speaker context over the 3 s before onset.
      auto& S = streams[sp];
      const TimeInterval last{iv.onset_s - 1.5, iv.onset_s};
      const TimeInterval context{iv.onset_s - features::kContextWindowS, iv.onset_s};
      auto ramp = [&](double tt) { return (tt - last.onset_s) / last.duration(); };
      detail::add_profile(S, ch("f0"), last, -amp, ramp);
      detail::add_profile(S, ch("energy"), last, -amp, [](double) { return 1.0; });
      auto ctx_bump = [&](double tt) { return detail::half_cosine(tt, context); };
      if (category == persona::SignalCategory::visual || category == persona::SignalCategory::both)
        detail::add_profile(S, ch("AU12_r"), context, amp, ctx_bump);
      if (category == persona::SignalCategory::verbal || category == persona::SignalCategory::both)
        detail::add_profile(S, ch("mfcc_3"), context, amp, ctx_bump);
    }
  }

  for (int s = 0; s < 2; ++s) {
    std::vector<TimeInterval> voiced = speech[s];
    voiced.insert(voiced.end(), listener_voice[s].begin(), listener_voice[s].end());
    out.vad.push_back({out.info.id, subjects[s], sampling::normalize(voiced)});
  }

  for (int l = 0; l < 2; ++l) {
    std::vector<TrueEvent> mine;
    for (const auto& e : out.events)
      if (e.subject_id == subjects[l]) mine.push_back(e);
    for (int k = 0; k < cfg.coders; ++k) {
      Rng coder_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(l),
                                           static_cast<std::uint64_t>(k), 0x636f6465ULL}));
      auto coded = code_events(mine, k, cfg.noise, D, coder_rng);
      out.annotations.insert(out.annotations.end(), coded.begin(), coded.end());
    }
  }
  std::sort(out.events.begin(), out.events.end(), [](const TrueEvent& a, const TrueEvent& b) {
    return std::tie(a.subject_id, a.interval.onset_s) < std::tie(b.subject_id, b.interval.onset_s);
  });
  out.stream_a = std::move(streams[0]);
  out.stream_b = std::move(streams[1]);
  return out;
}

inline std::vector<SubjectTrait> generate_traits(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, {0x74726169ULL}));
  std::vector<SubjectTrait> out;
  for (int i = 0; i < 2 * cfg.conversations; ++i) {
    SubjectTrait t;
    t.subject_id = fmt::format("s{:03d}", i + 1);
    const bool extro = rng.bernoulli(cfg.extrovert_fraction);
    t.persona = extro ? "extrovert" : "introvert";
    t.extraversion = extro ? rng.uniform(0.55, 1.0) : rng.uniform(0.0, 0.45);
    out.push_back(t);
  }
  return out;
}

/// Deterministic for a given config regardless of `workers`.
inline Corpus generate(const SynthConfig& cfg, const features::FeatureSchema& schema = features::FeatureSchema::standard(),
                       int workers = 1) {
  cfg.validate();
  Corpus corpus;
  corpus.traits = generate_traits(cfg);
  std::vector<ConversationOutput> parts(static_cast<std::size_t>(cfg.conversations));
  parallel_for(parts.size(), workers,
               [&](std::size_t i) { parts[i] = generate_conversation(cfg, schema, static_cast<int>(i), corpus.traits); });
  for (auto& p : parts) {
    corpus.conversations.push_back(p.info);
    corpus.streams[{p.info.id, p.info.subject_a}] = std::make_shared<features::FeatureStream>(std::move(p.stream_a));
    corpus.streams[{p.info.id, p.info.subject_b}] = std::make_shared<features::FeatureStream>(std::move(p.stream_b));
    for (auto& a : p.annotations) {
      a.id = corpus.annotations.size() + 1;
      corpus.annotations.push_back(std::move(a));
    }
    corpus.vad.insert(corpus.vad.end(), p.vad.begin(), p.vad.end());
    corpus.ground_truth.insert(corpus.ground_truth.end(), p.events.begin(), p.events.end());
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Corpus files

inline std::string stream_file_name(const std::string& conversation_id, const std::string& subject_id) {
  return fmt::format("{}__{}.csv", conversation_id, subject_id);
}

inline void write_conversations(csv::Writer& w, const std::vector<ConversationInfo>& convs) {
  w.row({"conversation_id", "duration_s", "subject_a", "subject_b"});
  for (const auto& c : convs) w.row({c.id, csv::seconds(c.duration_s), c.subject_a, c.subject_b});
}

inline std::vector<ConversationInfo> read_conversations(const csv::Table& t) {
  const auto c_id = t.column("conversation_id"), c_d = t.column("duration_s"), c_a = t.column("subject_a"),
             c_b = t.column("subject_b");
  std::vector<ConversationInfo> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    ConversationInfo c{row[c_id], csv::to_double(row[c_d], t.where(r)), row[c_a], row[c_b]};
    if (!(c.duration_s > 0)) throw DataError(fmt::format("{}: duration must be positive", t.where(r)));
    if (c.subject_a == c.subject_b) throw DataError(fmt::format("{}: a conversation needs two subjects", t.where(r)));
    out.push_back(c);
  }
  return out;
}

inline void write_traits(csv::Writer& w, const std::vector<SubjectTrait>& traits) {
  w.row({"subject_id", "extraversion", "persona"});
  for (const auto& t : traits) w.row({t.subject_id, fmt::format("{:.6f}", t.extraversion), t.persona});
}

inline std::vector<SubjectTrait> read_traits(const csv::Table& t) {
  const auto c_s = t.column("subject_id"), c_e = t.column("extraversion");
  const bool has_persona = t.has_column("persona");
  std::vector<SubjectTrait> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    out.push_back({t.rows[r][c_s], csv::to_double(t.rows[r][c_e], t.where(r)),
                   has_persona ? t.rows[r][t.column("persona")] : std::string()});
  return out;
}

inline void write_ground_truth(csv::Writer& w, const std::vector<TrueEvent>& events) {
  w.row({"conversation_id", "subject_id", "onset_s", "offset_s", "signals", "category"});
  for (const auto& e : events) {
    const auto cat = persona::categorize(e.signals);
    w.row({e.conversation_id, e.subject_id, csv::seconds(e.interval.onset_s), csv::seconds(e.interval.offset_s),
           e.signals.to_string(), cat ? std::string(persona::to_string(*cat)) : "none"});
  }
}

/// Writes features/, annotations.csv, vad.csv, conversations.csv,
/// extraversion.csv and ground_truth.csv under `dir`. Every file starts with
/// the `header` comment.
inline void write_corpus(const Corpus& c, const std::filesystem::path& dir, const std::string& header,
                         const features::FeatureSchema& schema = features::FeatureSchema::standard(), int workers = 1,
                         int decimals = 4) {
  auto start = [&](const std::filesystem::path& p) {
    csv::Writer w(p);
    w.comment(header);
    return w;
  };
  {
    auto w = start(dir / "conversations.csv");
    write_conversations(w, c.conversations);
    w.commit();
  }
  {
    auto w = start(dir / "annotations.csv");
    annotations::write_annotations(w, c.annotations);
    w.commit();
  }
  {
    auto w = start(dir / "vad.csv");
    sampling::write_vad(w, c.vad);
    w.commit();
  }
  {
    auto w = start(dir / "extraversion.csv");
    write_traits(w, c.traits);
    w.commit();
  }
  {
    auto w = start(dir / "ground_truth.csv");
    write_ground_truth(w, c.ground_truth);
    w.commit();
  }
  std::vector<const features::FeatureStream*> streams;
  for (const auto& [k, s] : c.streams) streams.push_back(s.get());
  std::filesystem::create_directories(dir / "features");
  parallel_for(streams.size(), workers, [&](std::size_t i) {
    auto w = start(dir / "features" / stream_file_name(streams[i]->conversation_id, streams[i]->subject_id));
    features::write_stream(w, *streams[i], schema, decimals);
    w.commit();
  });
}

}  // namespace bc::synth
