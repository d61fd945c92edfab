#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "backchannel/core.hpp"
#include "backchannel/learners.hpp"

namespace bc::testkit {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            fmt::format("bc_{}_{:x}", tag, stable_hash(tag) ^ static_cast<std::uint64_t>(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Isotropic Gaussian blobs, one per class, centers spaced `gap` apart on
/// the first axis.
struct Blobs {
  std::vector<learners::Example> X;
  std::vector<int> y;
};

inline Blobs make_blobs(std::size_t per_class, std::size_t classes, std::size_t dim, double gap, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<double> x(dim);
      for (auto& v : x) v = rng.normal();
      x[0] += gap * static_cast<double>(c);
      b.X.push_back({std::move(x), nullptr});
      b.y.push_back(static_cast<int>(c));
    }
  return b;
}

/// Random small frame matrices whose class shifts channel 0.
inline Blobs make_series_blobs(std::size_t per_class, std::size_t classes, std::size_t channels, std::size_t frames,
                               double gap, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < classes; ++c) {
      auto s = std::make_shared<features::Series>();
      s->frames = frames + rng.index(3);
      s->channels = channels;
      s->values.resize(s->frames * channels);
      for (auto& v : s->values) v = rng.normal();
      for (std::size_t t = 0; t < s->frames; ++t) s->at(t, 0) += gap * static_cast<double>(c);
      std::vector<double> agg(channels, 0.0);
      for (std::size_t t = 0; t < s->frames; ++t)
        for (std::size_t ch = 0; ch < channels; ++ch) agg[ch] += s->at(t, ch) / static_cast<double>(s->frames);
      b.X.push_back({std::move(agg), s});
      b.y.push_back(static_cast<int>(c));
    }
  return b;
}

}  // namespace bc::testkit
