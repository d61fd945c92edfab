#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "backchannel/core.hpp"
#include "backchannel/features.hpp"

namespace bc::learners {

/// Label value marking an unlabeled training example.
inline constexpr int kUnlabeled = -1;

/// One training or query item: an aggregate vector and, for time-series
/// learners, the underlying frame matrix.
struct Example {
  std::vector<double> x;
  std::shared_ptr<const features::Series> series;
};

struct ProbPrediction {
  std::vector<double> probs;
  int label = 0;
  double confidence = 0.0;

  static ProbPrediction from(std::vector<double> p) {
    ProbPrediction out;
    out.label = static_cast<int>(argmax(p));
    out.confidence = p[static_cast<std::size_t>(out.label)];
    out.probs = std::move(p);
    return out;
  }
};

/// Whitespace-separated token stream; doubles are stored as hexfloats so a
/// round trip is exact.
class ArchiveWriter {
 public:
  void tag(std::string_view t) { out_ += fmt::format("{}\n", t); }
  void put(std::string_view key, double v) { out_ += fmt::format("{} {:a}\n", key, v); }
  void put_int(std::string_view key, long long v) { out_ += fmt::format("{} {}\n", key, v); }
  void put(std::string_view key, const std::vector<double>& v) {
    out_ += fmt::format("{} {}", key, v.size());
    for (double d : v) out_ += fmt::format(" {:a}", d);
    out_ += '\n';
  }
  void put(std::string_view key, const std::vector<int>& v) {
    out_ += fmt::format("{} {}", key, v.size());
    for (int d : v) out_ += fmt::format(" {}", d);
    out_ += '\n';
  }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class ArchiveReader {
 public:
  explicit ArchiveReader(const std::string& text) : in_(text) {}

  void expect(std::string_view t) {
    std::string got = token();
    if (got != t) throw DataError(fmt::format("model archive: expected '{}', found '{}'", t, got));
  }
  double get(std::string_view key) {
    expect(key);
    return to_double(token());
  }
  long long get_int(std::string_view key) {
    expect(key);
    return std::stoll(token());
  }
  std::vector<double> get_vector(std::string_view key) {
    expect(key);
    const auto n = static_cast<std::size_t>(std::stoull(token()));
    std::vector<double> v(n);
    for (auto& d : v) d = to_double(token());
    return v;
  }
  std::vector<int> get_ints(std::string_view key) {
    expect(key);
    const auto n = static_cast<std::size_t>(std::stoull(token()));
    std::vector<int> v(n);
    for (auto& d : v) d = std::stoi(token());
    return v;
  }
  std::string token() {
    std::string t;
    if (!(in_ >> t)) throw DataError("model archive: unexpected end of data");
    return t;
  }

 private:
  static double to_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw DataError(fmt::format("model archive: bad number '{}'", s));
    return v;
  }
  std::istringstream in_;
};

class Model {
 public:
  virtual ~Model() = default;
  /// Simplex vector of length num_classes.
  virtual std::vector<double> predict_proba(const Example& x) const = 0;
  virtual void save(ArchiveWriter& out) const = 0;
};

inline void check_dimension(const Example& e, std::size_t dim) {
  if (e.x.size() != dim)
    throw DataError(fmt::format("expected a {}-dimensional vector, got {}", dim, e.x.size()));
}

inline void check_training_set(const std::vector<Example>& X, const std::vector<int>& y,
                               std::size_t num_classes, bool allow_unlabeled = false) {
  if (X.size() != y.size())
    throw DataError(fmt::format("{} examples but {} labels", X.size(), y.size()));
  if (X.empty()) throw DataError("empty training set");
  if (num_classes < 2) throw ConfigError("at least two classes are required");
  std::vector<bool> seen(num_classes, false);
  for (int label : y) {
    if (label == kUnlabeled && allow_unlabeled) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
      throw DataError(fmt::format("label {} outside [0, {})", label, num_classes));
    seen[static_cast<std::size_t>(label)] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2)
    throw DataError("training labels contain fewer than two classes");
  const std::size_t dim = X.front().x.size();
  for (const auto& e : X) check_dimension(e, dim);
}

inline std::vector<std::vector<double>> vectors_of(const std::vector<Example>& X) {
  std::vector<std::vector<double>> out;
  out.reserve(X.size());
  for (const auto& e : X) out.push_back(e.x);
  return out;
}

inline void save_scaler(ArchiveWriter& out, const features::StandardScaler& s) {
  out.put("mean", s.mean);
  out.put("scale", s.scale);
  std::vector<int> act(s.active.begin(), s.active.end());
  out.put("active", act);
}

inline features::StandardScaler load_scaler(ArchiveReader& in) {
  features::StandardScaler s;
  s.mean = in.get_vector("mean");
  s.scale = in.get_vector("scale");
  auto act = in.get_ints("active");
  s.active.assign(act.begin(), act.end());
  return s;
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

/// Numerically stable softmax.
inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = z.front();
  for (double v : z) m = std::max(m, v);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace bc::learners
