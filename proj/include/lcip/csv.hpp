#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lcip/common.hpp"

namespace lcip::csv {

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double to_double(std::string_view field, std::string_view what) {
  field = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::MalformedRow, std::string(what) + "='" + std::string(field) + "'");
  }
  return v;
}

inline long long to_int(std::string_view field, std::string_view what) {
  field = trim(field);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw Error(ErrorCode::MalformedRow, std::string(what) + "='" + std::string(field) + "'");
  }
  return v;
}

/// Shortest decimal that round-trips a 64-bit double (at most 17 digits).
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

/// Whole-file table with a required header row.
class Table {
 public:
  static Table read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingArtifact, path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  static Table parse(const std::string& text, std::string source = "<memory>") {
    Table t;
    t.source_ = std::move(source);
    t.text_ = std::make_unique<std::string>(text);
    std::string_view all(*t.text_);
    bool header_done = false;
    while (!all.empty()) {
      const std::size_t nl = all.find('\n');
      std::string_view line = all.substr(0, nl);
      all = nl == std::string_view::npos ? std::string_view{} : all.substr(nl + 1);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty()) continue;
      if (!header_done) {
        if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.remove_prefix(3);
        for (auto name : split(line)) t.header_.emplace_back(trim(name));
        for (std::size_t i = 0; i < t.header_.size(); ++i) t.index_[t.header_[i]] = i;
        header_done = true;
        continue;
      }
      auto fields = split(line);
      if (fields.size() != t.header_.size()) {
        throw Error(ErrorCode::MalformedRow, t.source_ + " row " + std::to_string(t.rows_.size() + 1) +
                                                 " has " + std::to_string(fields.size()) + " fields");
      }
      t.rows_.push_back(std::move(fields));
    }
    if (!header_done) throw Error(ErrorCode::MalformedRow, t.source_ + " has no header");
    return t;
  }

  std::size_t column(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw Error(ErrorCode::MissingColumn, std::string(name));
    return it->second;
  }

  bool has_column(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  std::size_t size() const { return rows_.size(); }
  std::string_view at(std::size_t row, std::size_t col) const { return trim(rows_[row][col]); }
  const std::vector<std::string>& header() const { return header_; }

 private:
  Table() = default;

  std::string source_;
  // Row views point into this buffer; heap-held so moves keep them valid.
  std::unique_ptr<std::string> text_;
  std::vector<std::string> header_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::string_view>> rows_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace lcip::csv
