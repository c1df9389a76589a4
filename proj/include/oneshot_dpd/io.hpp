#pragma once

// Dataset CSV files and the sectioned key = value configuration format.
//
// Dataset CSV: header `tau,K,n,x1,...,xJ`, one row per test condition,
// '.' as the decimal point. The intercept x0 = 1 is implicit.

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "oneshot_dpd/model.hpp"

namespace oneshot_dpd {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  const std::string tmp(s);
  char* end = nullptr;
  errno = 0;
  out = std::strtod(tmp.c_str(), &end);
  return errno == 0 && end == tmp.c_str() + tmp.size() && std::isfinite(out);
}

inline bool parse_int64(std::string_view s, std::int64_t& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

inline std::string dataset_csv_header(std::size_t num_factors) {
  std::string h = "tau,K,n";
  for (std::size_t j = 1; j <= num_factors; ++j) h += ",x" + std::to_string(j);
  return h;
}

/// Parses the dataset CSV schema; errors name the offending row and column.
inline Dataset parse_dataset_csv(std::istream& in, const std::string& source = "<input>") {
  std::string line;
  std::size_t line_no = 0;
  std::size_t num_factors = 0;
  bool have_header = false;
  std::vector<TestGroup> groups;
  auto fail = [&](const std::string& msg) {
    throw ParseError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (line_no == 1 && view.size() >= 3 && static_cast<unsigned char>(view[0]) == 0xEF &&
        static_cast<unsigned char>(view[1]) == 0xBB && static_cast<unsigned char>(view[2]) == 0xBF) {
      view.remove_prefix(3);  // UTF-8 byte order mark
    }
    if (detail::trim(view).empty()) continue;
    const auto cells = detail::split(view, ',');
    if (!have_header) {
      if (cells.size() < 3 || cells[0] != "tau" || cells[1] != "K" || cells[2] != "n") {
        fail("header must start with tau,K,n");
      }
      num_factors = cells.size() - 3;
      for (std::size_t j = 1; j <= num_factors; ++j) {
        if (cells[2 + j] != "x" + std::to_string(j)) {
          fail("column " + std::to_string(3 + j) + ": expected header x" + std::to_string(j));
        }
      }
      have_header = true;
      continue;
    }
    if (cells.size() != num_factors + 3) {
      fail("expected " + std::to_string(num_factors + 3) + " columns, found " + std::to_string(cells.size()));
    }
    double tau = 0.0;
    if (!detail::parse_double(cells[0], tau) || !(tau > 0.0)) fail("column 1 (tau): expected a positive number");
    std::int64_t k = 0;
    if (!detail::parse_int64(cells[1], k) || k <= 0) fail("column 2 (K): expected a positive integer");
    std::int64_t n = 0;
    if (!detail::parse_int64(cells[2], n) || n < 0 || n > k) {
      fail("column 3 (n): expected an integer in [0, K]");
    }
    std::vector<double> stresses(num_factors);
    for (std::size_t j = 0; j < num_factors; ++j) {
      if (!detail::parse_double(cells[3 + j], stresses[j])) {
        fail("column " + std::to_string(4 + j) + " (x" + std::to_string(j + 1) + "): expected a number");
      }
    }
    groups.emplace_back(tau, k, static_cast<double>(n), std::move(stresses));
  }
  if (groups.empty()) throw ParseError(source + ": no data rows");
  return Dataset(std::move(groups));
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  return parse_dataset_csv(in, path);
}

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << dataset_csv_header(data.num_factors()) << '\n';
  out << std::setprecision(17);
  for (const auto& g : data.groups()) {
    out << g.tau() << ',' << g.devices() << ',' << g.failures();
    for (std::size_t j = 1; j < g.x().size(); ++j) out << ',' << g.x()[j];
    out << '\n';
  }
}

// ============================================================================
// Configuration files
// ============================================================================

/// INI-style file: `key = value` lines, optional `[section]` headers.
/// `#` starts a comment anywhere; `;` only at the start of a line, since
/// it also separates groups inside list values. Keys before the first
/// header live in section "".
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>") {
    KeyValueConfig cfg;
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string_view v = line;
      if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
      v = detail::trim(v);
      if (v.empty() || v.front() == ';') continue;
      if (v.front() == '[') {
        if (v.back() != ']') throw ParseError(source + ":" + std::to_string(line_no) + ": malformed section header");
        section = std::string(detail::trim(v.substr(1, v.size() - 2)));
        cfg.values_[section];
        continue;
      }
      const auto eq = v.find('=');
      if (eq == std::string_view::npos) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": expected key = value");
      }
      const std::string key(detail::trim(v.substr(0, eq)));
      if (key.empty()) throw ParseError(source + ":" + std::to_string(line_no) + ": empty key");
      cfg.values_[section][key] = std::string(detail::trim(v.substr(eq + 1)));
    }
    return cfg;
  }

  static KeyValueConfig read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    return parse(in, path);
  }

  bool has_section(const std::string& section) const { return values_.count(section) > 0; }

  bool has(const std::string& section, const std::string& key) const {
    const auto it = values_.find(section);
    return it != values_.end() && it->second.count(key) > 0;
  }

  std::string get(const std::string& section, const std::string& key, const std::string& fallback) const {
    return has(section, key) ? values_.at(section).at(key) : fallback;
  }

  double get_double(const std::string& section, const std::string& key, double fallback) const {
    if (!has(section, key)) return fallback;
    double v = 0.0;
    if (!detail::parse_double(values_.at(section).at(key), v)) throw bad_value(section, key, "a number");
    return v;
  }

  std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const {
    if (!has(section, key)) return fallback;
    std::int64_t v = 0;
    if (!detail::parse_int64(values_.at(section).at(key), v)) throw bad_value(section, key, "an integer");
    return v;
  }

  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = values_.at(section).at(key);
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw bad_value(section, key, "true or false");
  }

  /// Comma-separated numbers.
  std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                  std::vector<double> fallback) const {
    if (!has(section, key)) return fallback;
    std::vector<double> out;
    for (auto item : detail::split(values_.at(section).at(key), ',')) {
      double v = 0.0;
      if (!detail::parse_double(item, v)) throw bad_value(section, key, "a comma-separated list of numbers");
      out.push_back(v);
    }
    return out;
  }

  /// Semicolon-separated groups of comma-separated numbers, e.g. "30; 40; 50".
  std::vector<std::vector<double>> get_double_groups(const std::string& section, const std::string& key) const {
    std::vector<std::vector<double>> out;
    if (!has(section, key)) return out;
    for (auto group : detail::split(values_.at(section).at(key), ';')) {
      std::vector<double> row;
      for (auto item : detail::split(group, ',')) {
        double v = 0.0;
        if (!detail::parse_double(item, v)) throw bad_value(section, key, "groups of numbers");
        row.push_back(v);
      }
      out.push_back(std::move(row));
    }
    return out;
  }

  /// Rejects keys outside `allowed` for the given section.
  void require_known(const std::string& section, const std::set<std::string>& allowed) const {
    const auto it = values_.find(section);
    if (it == values_.end()) return;
    for (const auto& [k, v] : it->second) {
      if (allowed.count(k) == 0) {
        throw ParseError("unknown key '" + k + "'" + (section.empty() ? "" : " in section [" + section + "]"));
      }
    }
  }

  std::vector<std::string> sections() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::map<std::string, std::string>>& values() const { return values_; }

 private:
  static ParseError bad_value(const std::string& section, const std::string& key, const std::string& what) {
    return ParseError("key '" + key + "'" + (section.empty() ? "" : " in [" + section + "]") + ": expected " + what);
  }

  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace oneshot_dpd
