#pragma once

// Comma-separated tables with '#' comment lines. Fields are never quoted;
// identifiers containing commas are rejected at write time.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "backchannel/core.hpp"

namespace bc::csv {

struct Table {
  std::filesystem::path source;
  std::vector<std::string> comments;  // without the leading '#'
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based, per row

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError(fmt::format("{}: missing column '{}'", source.string(), name));
  }

  bool has_column(std::string_view name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }

  std::string where(std::size_t row) const {
    return fmt::format("{}:{}", source.string(), line_numbers.at(row));
  }

  /// Value of "key=value" inside the first comment carrying it.
  std::string comment_value(std::string_view key) const {
    for (const auto& c : comments) {
      std::istringstream in(c);
      std::string token;
      while (in >> token) {
        auto eq = token.find('=');
        if (eq != std::string::npos && std::string_view(token).substr(0, eq) == key)
          return token.substr(eq + 1);
      }
    }
    return {};
  }
};

inline std::vector<std::string> split(std::string_view line, char delim = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t end = line.find(delim, start);
    if (end == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

inline Table parse(std::istream& in, const std::filesystem::path& source = "<stream>") {
  Table t;
  t.source = source;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      t.comments.push_back(line.substr(1));
      continue;
    }
    auto fields = split(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size())
      throw DataError(fmt::format("{}:{}: expected {} fields, found {}", source.string(), line_no,
                                  t.header.size(), fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
  }
  if (!have_header) throw DataError(fmt::format("{}: missing header row", source.string()));
  return t;
}

inline Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  return parse(in, path);
}

inline double to_double(std::string_view field, std::string_view where) {
  double v = 0.0;
  auto first = field.data();
  auto last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw DataError(fmt::format("{}: '{}' is not a finite number", where, field));
  return v;
}

inline long long to_int(std::string_view field, std::string_view where) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw DataError(fmt::format("{}: '{}' is not an integer", where, field));
  return v;
}

/// Rejects characters that would break the unquoted format.
inline const std::string& checked_field(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos)
    throw DataError(fmt::format("field '{}' contains a delimiter", s));
  return s;
}

/// Buffered writer; the file is replaced only when `commit` runs.
class Writer {
 public:
  explicit Writer(std::filesystem::path path) : path_(std::move(path)) {}

  void comment(std::string_view text) { buffer_ += fmt::format("#{}\n", text); }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) buffer_ += ',';
      buffer_ += checked_field(fields[i]);
    }
    buffer_ += '\n';
  }

  const std::string& text() const { return buffer_; }

  void commit() const {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path_.string()));
    out << buffer_;
  }

 private:
  std::filesystem::path path_;
  std::string buffer_;
};

/// Fixed 6-decimal rendering used for all timestamps.
inline std::string seconds(double t) { return fmt::format("{:.6f}", t); }

/// Shortest round-trip rendering for feature values.
inline std::string exact(double v) { return fmt::format("{}", v); }

}  // namespace bc::csv
