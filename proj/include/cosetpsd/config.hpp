#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cosetpsd/error.hpp"
#include "cosetpsd/pattern.hpp"
#include "cosetpsd/ruler.hpp"
#include "cosetpsd/sensing.hpp"

namespace cosetpsd {

/// A parsed "[section]" / "key = value" text file. Sections may repeat; '#'
/// and ';' at line start begin comments.
struct IniSection {
  std::string name;
  int line = 0;
  std::vector<std::pair<std::string, std::string>> entries;

  const std::string* find(std::string_view key) const {
    for (const auto& [k, v] : entries) {
      if (k == key) return &v;
    }
    return nullptr;
  }
};

struct IniDocument {
  std::string source;
  std::vector<IniSection> sections;

  std::vector<const IniSection*> all(std::string_view name) const {
    std::vector<const IniSection*> out;
    for (const auto& s : sections) {
      if (s.name == name) out.push_back(&s);
    }
    return out;
  }

  const IniSection* first(std::string_view name) const {
    for (const auto& s : sections) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
};

inline IniDocument parse_ini(std::string_view text, std::string source = "<string>") {
  IniDocument doc;
  doc.source = std::move(source);
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const auto raw = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    const auto where = doc.source + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      doc.sections.push_back({std::string(detail::trim(line.substr(1, line.size() - 2))), line_no, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    if (doc.sections.empty()) throw ConfigError(where + ": key outside of any section");
    auto value = detail::trim(line.substr(eq + 1));
    if (const auto hash = value.find(" #"); hash != std::string_view::npos) value = detail::trim(value.substr(0, hash));
    const std::string key(detail::trim(line.substr(0, eq)));
    if (doc.sections.back().find(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    doc.sections.back().entries.emplace_back(key, std::string(value));
  }
  return doc;
}

inline IniDocument load_ini(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_ini(buf.str(), path.string());
}

namespace detail {

inline double parse_real(std::string_view text) {
  text = trim(text);
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) throw ConfigError("not a number: '" + std::string(text) + "'");
  return value;
}

inline std::vector<double> parse_reals(std::string_view text) {
  std::vector<double> out;
  for (auto part : split(text, ',')) {
    if (!part.empty()) out.push_back(parse_real(part));
  }
  return out;
}

inline std::vector<int> parse_integers(std::string_view text) {
  std::vector<int> out;
  for (auto part : split(text, ',')) {
    if (!part.empty()) out.push_back(static_cast<int>(parse_integer(part)));
  }
  return out;
}

/// Reads keys of one section, rejecting keys that were never asked for.
class SectionReader {
 public:
  SectionReader(const IniDocument& doc, const IniSection& sec) : doc_(doc), sec_(sec), used_(sec.entries.size()) {}

  const std::string* raw(std::string_view key) {
    for (std::size_t k = 0; k < sec_.entries.size(); ++k) {
      if (sec_.entries[k].first == key) {
        used_[k] = true;
        return &sec_.entries[k].second;
      }
    }
    return nullptr;
  }

  template <typename Fn>
  auto parse(std::string_view key, Fn&& fn) -> std::optional<decltype(fn(std::string_view{}))> {
    const auto* v = raw(key);
    if (!v) return std::nullopt;
    try {
      return fn(std::string_view(*v));
    } catch (const ConfigError& e) {
      throw ConfigError(where() + ": key '" + std::string(key) + "': " + e.what());
    }
  }

  std::optional<int> integer(std::string_view key) {
    return parse(key, [](std::string_view s) { return static_cast<int>(parse_integer(s)); });
  }
  std::optional<double> real(std::string_view key) { return parse(key, parse_real); }
  std::optional<std::string> text(std::string_view key) {
    return parse(key, [](std::string_view s) { return std::string(s); });
  }

  void finish() const {
    for (std::size_t k = 0; k < used_.size(); ++k) {
      if (!used_[k]) throw ConfigError(where() + ": unknown key '" + sec_.entries[k].first + "'");
    }
  }

  std::string where() const { return doc_.source + ":" + std::to_string(sec_.line) + " [" + sec_.name + "]"; }

 private:
  const IniDocument& doc_;
  const IniSection& sec_;
  std::vector<bool> used_;
};

inline SyncMode parse_sync_mode(std::string_view s) {
  if (s == "synchronized") return SyncMode::synchronized;
  if (s == "unsynchronized") return SyncMode::unsynchronized;
  throw ConfigError("sync_mode must be synchronized or unsynchronized");
}

inline BinMode parse_bin_mode(std::string_view s) {
  if (s == "correlated") return BinMode::correlated;
  if (s == "uncorrelated") return BinMode::uncorrelated;
  throw ConfigError("bin_mode must be correlated or uncorrelated");
}

inline void check_sections(const IniDocument& doc, std::initializer_list<std::string_view> allowed) {
  for (const auto& s : doc.sections) {
    bool ok = false;
    for (auto a : allowed) ok = ok || s.name == a;
    if (!ok) throw ConfigError(doc.source + ":" + std::to_string(s.line) + ": unknown section [" + s.name + "]");
  }
}

}  // namespace detail

/// Builds a scenario from a document with one [scenario] section and any
/// number of [user] sections.
inline ScenarioConfig scenario_from_ini(const IniDocument& doc) {
  detail::check_sections(doc, {"scenario", "user"});
  const auto* sec = doc.first("scenario");
  if (!sec || doc.all("scenario").size() != 1) throw ConfigError(doc.source + ": need exactly one [scenario] section");
  ScenarioConfig cfg;
  detail::SectionReader r(doc, *sec);
  cfg.period = r.integer("period").value_or(cfg.period);
  cfg.bins = r.integer("bins").value_or(cfg.bins);
  cfg.clusters = r.integer("clusters").value_or(cfg.clusters);
  cfg.tau = r.integer("tau").value_or(cfg.tau);
  cfg.per_group = r.integer("per_group").value_or(cfg.per_group);
  cfg.fir_taps = r.integer("fir_taps").value_or(cfg.fir_taps);
  cfg.noise_dbm = r.real("noise_dbm").value_or(cfg.noise_dbm);
  if (auto s = r.parse("seed", [](std::string_view v) { return detail::parse_integer(v); })) {
    cfg.seed = static_cast<std::uint64_t>(*s);
  }
  if (auto s = r.parse("sync_mode", detail::parse_sync_mode)) cfg.sync_mode = *s;
  if (auto s = r.parse("bin_mode", detail::parse_bin_mode)) cfg.bin_mode = *s;
  const int n = cfg.period;
  if (auto s = r.parse("pattern", [n](std::string_view v) { return CosetPattern::parse(n, v); })) cfg.pattern = *s;
  if (auto s = r.parse("ub_pattern", [n](std::string_view v) { return CosetPattern::parse(n, v); })) {
    cfg.ub_pattern = *s;
  }
  if (auto s = r.parse("family", [n](std::string_view v) { return PatternFamily::parse(n, v); })) cfg.family = *s;
  if (auto marks = r.integer("family_marks")) {
    if (cfg.family) throw ConfigError(r.where() + ": give either family or family_marks");
    cfg.family = design_pair_cover_family(n, *marks);
  }
  r.finish();

  for (const auto* us : doc.all("user")) {
    detail::SectionReader u(doc, *us);
    UserSpec user;
    auto band = u.parse("band", detail::parse_reals);
    auto band_pi = u.parse("band_pi", detail::parse_reals);
    if (band.has_value() == band_pi.has_value()) throw ConfigError(u.where() + ": give exactly one of band, band_pi");
    auto edges = band ? *band : *band_pi;
    if (edges.size() != 2) throw ConfigError(u.where() + ": a band needs two edges");
    // band_pi is in multiples of pi rad/sample; halving gives cycles/sample.
    const double unit = band ? 1.0 : 0.5;
    user.band_lo = edges[0] * unit;
    user.band_hi = edges[1] * unit;
    user.power_dbm = u.real("power_dbm").value_or(0.0);
    user.path_loss_db = u.parse("path_loss_db", detail::parse_reals).value_or(std::vector<double>{});
    u.finish();
    cfg.users.push_back(std::move(user));
  }
  cfg.validate();
  return cfg;
}

inline ScenarioConfig load_scenario(const std::filesystem::path& path) { return scenario_from_ini(load_ini(path)); }

}  // namespace cosetpsd
