#pragma once

// Plain-text `key = value` files. '#' starts a comment, blank lines are
// ignored, keys are unique.

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "impactlab/error.hpp"

namespace impactlab {

struct KeyValues {
  std::map<std::string, std::string> values;
  std::map<std::string, std::size_t> lines;
  std::vector<std::string> errors;  // syntax problems, one per offending line

  bool contains(const std::string& k) const { return values.contains(k); }
  const std::string* get(const std::string& k) const {
    auto it = values.find(k);
    return it == values.end() ? nullptr : &it->second;
  }
};

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_kv(std::string_view text) {
  KeyValues kv;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      kv.errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) {
      kv.errors.push_back("line " + std::to_string(lineno) + ": empty key");
      continue;
    }
    if (kv.values.contains(key)) {
      kv.errors.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      continue;
    }
    kv.lines[key] = lineno;
    kv.values.emplace(std::move(key), std::move(value));
  }
  return kv;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline KeyValues read_kv_file(const std::string& path) { return parse_kv(read_text_file(path)); }

/// Comma-separated list, items trimmed, empty items dropped.
inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(sep, start);
    if (end == std::string_view::npos) end = s.size();
    auto item = trim(s.substr(start, end - start));
    if (!item.empty()) out.emplace_back(item);
    start = end + 1;
  }
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  T v{};
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<bool> parse_bool(std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  return std::nullopt;
}

}  // namespace impactlab
