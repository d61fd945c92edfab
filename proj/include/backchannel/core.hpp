#pragma once

// Shared vocabulary: error categories, time intervals, backchannel signal
// kinds, deterministic random streams and seed derivation.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

namespace bc {

// ---------------------------------------------------------------------------
// Errors

enum class ErrorKind { config, data, invariant };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct InvariantError : Error {
  explicit InvariantError(const std::string& what) : Error(ErrorKind::invariant, what) {}
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::invariant: return "invariant";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Time

struct TimeInterval {
  double onset_s = 0.0;
  double offset_s = 0.0;

  double duration() const { return offset_s - onset_s; }
  bool contains(double t) const { return t >= onset_s && t < offset_s; }
  bool contains(const TimeInterval& o) const {
    return o.onset_s >= onset_s && o.offset_s <= offset_s;
  }
  friend bool operator==(const TimeInterval&, const TimeInterval&) = default;
};

/// Positive-length overlap; touching endpoints do not overlap.
inline bool overlaps(const TimeInterval& a, const TimeInterval& b) {
  return a.onset_s < b.offset_s && b.onset_s < a.offset_s;
}

inline TimeInterval make_interval(double onset_s, double offset_s) {
  if (!std::isfinite(onset_s) || !std::isfinite(offset_s))
    throw DataError(fmt::format("non-finite interval [{}, {}]", onset_s, offset_s));
  if (!(onset_s < offset_s))
    throw DataError(fmt::format("interval onset {} is not before offset {}", onset_s, offset_s));
  return {onset_s, offset_s};
}

// ---------------------------------------------------------------------------
// Signals

enum class SignalKind : std::uint8_t {
  Nod,
  HeadShake,
  MouthSmile,
  MouthFrown,
  EyebrowRaise,
  EyebrowFrown,
  Utterance,
};

inline constexpr std::array<SignalKind, 7> kAllSignals = {
    SignalKind::Nod,          SignalKind::HeadShake,    SignalKind::MouthSmile,
    SignalKind::MouthFrown,   SignalKind::EyebrowRaise, SignalKind::EyebrowFrown,
    SignalKind::Utterance,
};

inline std::string_view to_string(SignalKind s) {
  switch (s) {
    case SignalKind::Nod: return "Nod";
    case SignalKind::HeadShake: return "HeadShake";
    case SignalKind::MouthSmile: return "MouthSmile";
    case SignalKind::MouthFrown: return "MouthFrown";
    case SignalKind::EyebrowRaise: return "EyebrowRaise";
    case SignalKind::EyebrowFrown: return "EyebrowFrown";
    case SignalKind::Utterance: return "Utterance";
  }
  return "?";
}

inline std::optional<SignalKind> parse_signal(std::string_view token) {
  for (SignalKind s : kAllSignals)
    if (to_string(s) == token) return s;
  return std::nullopt;
}

/// Small ordered set of signal kinds backed by a bit mask.
class SignalSet {
 public:
  SignalSet() = default;
  SignalSet(std::initializer_list<SignalKind> kinds) {
    for (SignalKind k : kinds) insert(k);
  }

  void insert(SignalKind k) { bits_ |= bit(k); }
  void erase(SignalKind k) { bits_ &= static_cast<std::uint8_t>(~bit(k)); }
  bool contains(SignalKind k) const { return (bits_ & bit(k)) != 0; }
  bool empty() const { return bits_ == 0; }
  int size() const { return std::popcount(static_cast<unsigned>(bits_)); }
  std::uint8_t bits() const { return bits_; }

  std::vector<SignalKind> kinds() const {
    std::vector<SignalKind> out;
    for (SignalKind k : kAllSignals)
      if (contains(k)) out.push_back(k);
    return out;
  }

  /// "Nod+Utterance"; the empty set renders as "none".
  std::string to_string() const {
    if (empty()) return "none";
    std::string out;
    for (SignalKind k : kinds()) {
      if (!out.empty()) out += '+';
      out += bc::to_string(k);
    }
    return out;
  }

  static SignalSet parse(std::string_view text) {
    SignalSet set;
    if (text == "none" || text.empty()) return set;
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('+', start);
      if (end == std::string_view::npos) end = text.size();
      auto token = text.substr(start, end - start);
      auto kind = parse_signal(token);
      if (!kind) throw DataError(fmt::format("unknown signal token '{}'", token));
      set.insert(*kind);
      start = end + 1;
    }
    return set;
  }

  friend bool operator==(SignalSet, SignalSet) = default;

 private:
  static std::uint8_t bit(SignalKind k) {
    return static_cast<std::uint8_t>(1u << static_cast<unsigned>(k));
  }
  std::uint8_t bits_ = 0;
};

// ---------------------------------------------------------------------------
// Deterministic randomness

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t stable_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(base);
  for (std::uint64_t t : tags) s = splitmix64(s ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

/// mt19937_64 plus sampling helpers with fully specified algorithms, so a
/// seed reproduces the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw InvariantError("Rng::index on empty range");
    const std::uint64_t range = n;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t v;
    do v = engine_();
    while (v >= limit);
    return static_cast<std::size_t>(v % range);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Box-Muller, one value per call.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double exponential(double rate) {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(u) / rate;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

/// Index of the largest value; the lowest index wins ties.
inline int argmax(const std::vector<double>& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace bc
