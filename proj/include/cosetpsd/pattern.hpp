#pragma once

#include <algorithm>
#include <charconv>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cosetpsd/error.hpp"

namespace cosetpsd {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline long long parse_integer(std::string_view text) {
  text = trim(text);
  long long value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw ConfigError("not an integer: '" + std::string(text) + "'");
  }
  return value;
}

template <typename Range>
std::string join(const Range& values, std::string_view sep = ",") {
  std::string out;
  bool first = true;
  for (const auto& v : values) {
    if (!first) out += sep;
    out += std::to_string(v);
    first = false;
  }
  return out;
}

}  // namespace detail

/// The set of active cosets of a multi-coset sampler: a period N and the
/// indices (marks) of the cosets that are sampled, stored sorted ascending.
class CosetPattern {
 public:
  CosetPattern(int period, std::vector<int> marks) : period_(period), marks_(std::move(marks)) {
    if (period_ < 1) throw ConfigError("pattern period must be positive");
    if (marks_.empty()) throw ConfigError("pattern needs at least one mark");
    std::sort(marks_.begin(), marks_.end());
    for (std::size_t k = 0; k < marks_.size(); ++k) {
      if (marks_[k] < 0 || marks_[k] >= period_) {
        throw ConfigError("mark " + std::to_string(marks_[k]) + " outside [0, " +
                          std::to_string(period_ - 1) + "]");
      }
      if (k > 0 && marks_[k] == marks_[k - 1]) {
        throw ConfigError("duplicate mark " + std::to_string(marks_[k]));
      }
    }
  }

  static CosetPattern full(int period) {
    std::vector<int> all(static_cast<std::size_t>(std::max(period, 0)));
    for (int n = 0; n < period; ++n) all[static_cast<std::size_t>(n)] = n;
    return CosetPattern(period, std::move(all));
  }

  /// Parses "0,1,4,7,9".
  static CosetPattern parse(int period, std::string_view csv) {
    std::vector<int> marks;
    for (auto part : detail::split(csv, ',')) {
      marks.push_back(static_cast<int>(detail::parse_integer(part)));
    }
    return CosetPattern(period, std::move(marks));
  }

  int period() const noexcept { return period_; }
  int size() const noexcept { return static_cast<int>(marks_.size()); }
  std::span<const int> marks() const noexcept { return marks_; }
  int operator[](int m) const { return marks_[static_cast<std::size_t>(m)]; }

  bool contains(int coset) const {
    return std::binary_search(marks_.begin(), marks_.end(), coset);
  }

  /// Position of `coset` inside marks(), or -1.
  int index_of(int coset) const {
    auto it = std::lower_bound(marks_.begin(), marks_.end(), coset);
    if (it == marks_.end() || *it != coset) return -1;
    return static_cast<int>(it - marks_.begin());
  }

  double rate() const noexcept { return static_cast<double>(size()) / period_; }

  std::string to_string() const { return detail::join(marks_); }

  /// The pattern extended by `extra` cosets in the given order (duplicates of
  /// existing marks are skipped), used to build higher compression rates.
  CosetPattern extended(std::span<const int> extra) const {
    std::vector<int> marks = marks_;
    for (int e : extra) {
      if (!contains(e) && std::find(marks.begin(), marks.end(), e) == marks.end()) {
        marks.push_back(e);
      }
    }
    return CosetPattern(period_, std::move(marks));
  }

  friend bool operator==(const CosetPattern&, const CosetPattern&) = default;

 private:
  int period_;
  std::vector<int> marks_;
};

/// Z coset patterns over one period, all with the same number of marks.
class PatternFamily {
 public:
  PatternFamily(int period, std::vector<CosetPattern> patterns)
      : period_(period), patterns_(std::move(patterns)) {
    if (patterns_.empty()) throw ConfigError("pattern family is empty");
    for (const auto& p : patterns_) {
      if (p.period() != period_) throw ConfigError("family patterns must share the period");
      if (p.size() != patterns_.front().size()) {
        throw ConfigError("family patterns must share the mark count");
      }
    }
  }

  /// Parses "0,1,2; 0,3,4; ...".
  static PatternFamily parse(int period, std::string_view text) {
    std::vector<CosetPattern> patterns;
    for (auto part : detail::split(text, ';')) {
      if (!part.empty()) patterns.push_back(CosetPattern::parse(period, part));
    }
    return PatternFamily(period, std::move(patterns));
  }

  int period() const noexcept { return period_; }
  int groups() const noexcept { return static_cast<int>(patterns_.size()); }
  int marks_per_pattern() const noexcept { return patterns_.front().size(); }
  const std::vector<CosetPattern>& patterns() const noexcept { return patterns_; }
  const CosetPattern& operator[](int z) const { return patterns_[static_cast<std::size_t>(z)]; }

  std::string to_string() const {
    std::string out;
    for (std::size_t z = 0; z < patterns_.size(); ++z) {
      if (z) out += "; ";
      out += patterns_[z].to_string();
    }
    return out;
  }

 private:
  int period_;
  std::vector<CosetPattern> patterns_;
};

}  // namespace cosetpsd
