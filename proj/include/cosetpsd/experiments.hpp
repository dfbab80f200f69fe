#pragma once

#include <algorithm>
#include <chrono>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cosetpsd/analysis.hpp"
#include "cosetpsd/config.hpp"
#include "cosetpsd/error.hpp"
#include "cosetpsd/estimator.hpp"
#include "cosetpsd/parallel.hpp"
#include "cosetpsd/ruler.hpp"
#include "cosetpsd/sensing.hpp"
#include "cosetpsd/sysmat.hpp"

namespace cosetpsd {

/// Shortest round-trip decimal form, so equal doubles always print equally.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
    if (!out_) throw IoError("cannot write " + path.string());
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) out_ << ',';
      out_ << cells[k];
    }
    out_ << '\n';
    if (!out_) throw IoError("write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

struct ExperimentManifest {
  std::string kind;  // reconstruct | nmse-sweep | roc | variance-check | bench | design
  std::filesystem::path scenario;
  std::filesystem::path output = ".";
  int runs = 1;
  std::optional<std::uint64_t> seed;
  int threads = 1;

  std::vector<int> tau;
  std::vector<double> rate;
  std::vector<double> sigma2_dbm;
  std::vector<int> extra_cosets;
  std::string patterns;  // "a,b,c; d,e,f"
  std::vector<SyncMode> sync_modes;
  int bench_reps = 5;

  std::optional<DetectorConfig> detector;

  int design_period = 0;
  int design_marks = 0;
  bool design_exhaustive = false;

  bool stochastic() const {
    return kind == "reconstruct" || kind == "nmse-sweep" || kind == "roc" || kind == "variance-check" ||
           kind == "bench";
  }

  void validate() const {
    static const std::set<std::string> kinds{"reconstruct", "nmse-sweep", "roc", "variance-check", "bench", "design"};
    if (!kinds.count(kind)) throw ConfigError("unknown experiment kind '" + kind + "'");
    if (runs < 1) throw ConfigError("runs must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (kind != "design" && scenario.empty()) throw ConfigError("experiment needs a scenario file");
    if (stochastic() && !seed) throw ConfigError("a seed is required for experiment kind '" + kind + "'");
    if (kind == "bench" && tau.empty()) throw ConfigError("bench needs a non-empty tau sweep");
    if (kind == "roc" && !detector) throw ConfigError("roc needs a [detector] section");
    if (kind == "design" && design_period < 1) throw ConfigError("design needs a positive period");
    for (int t : tau) {
      if (t < 1) throw ConfigError("tau values must be >= 1");
    }
    if (bench_reps < 1) throw ConfigError("bench_reps must be >= 1");
  }
};

namespace detail {

inline std::vector<DetectorBand> parse_bands(std::string_view text, int points) {
  std::vector<DetectorBand> out;
  for (auto part : split(text, ';')) {
    if (part.empty()) continue;
    auto edges = parse_reals(part);
    if (edges.size() != 2) throw ConfigError("a detector band needs two edges");
    out.push_back({edges[0], edges[1], points});
  }
  return out;
}

}  // namespace detail

/// Reads a manifest; relative scenario and output paths resolve against the
/// manifest's directory.
inline ExperimentManifest manifest_from_ini(const IniDocument& doc, const std::filesystem::path& base_dir) {
  detail::check_sections(doc, {"experiment", "sweep", "detector", "design"});
  ExperimentManifest m;
  const auto* exp = doc.first("experiment");
  if (!exp) throw ConfigError(doc.source + ": missing [experiment] section");
  for (const char* name : {"experiment", "sweep", "detector", "design"}) {
    if (doc.all(name).size() > 1) throw ConfigError(doc.source + ": repeated [" + std::string(name) + "] section");
  }
  {
    detail::SectionReader r(doc, *exp);
    m.kind = r.text("kind").value_or("");
    if (auto s = r.text("scenario")) m.scenario = base_dir / *s;
    if (auto s = r.text("output")) m.output = base_dir / *s;
    m.runs = r.integer("runs").value_or(m.runs);
    if (auto s = r.parse("seed", [](std::string_view v) { return detail::parse_integer(v); })) {
      m.seed = static_cast<std::uint64_t>(*s);
    }
    m.threads = r.integer("threads").value_or(m.threads);
    r.finish();
  }
  if (const auto* sw = doc.first("sweep")) {
    detail::SectionReader r(doc, *sw);
    m.tau = r.parse("tau", detail::parse_integers).value_or(std::vector<int>{});
    m.rate = r.parse("rate", detail::parse_reals).value_or(std::vector<double>{});
    m.sigma2_dbm = r.parse("sigma2_dbm", detail::parse_reals).value_or(std::vector<double>{});
    m.extra_cosets = r.parse("extra_cosets", detail::parse_integers).value_or(std::vector<int>{});
    m.patterns = r.text("patterns").value_or("");
    if (auto s = r.text("sync_mode")) {
      for (auto part : detail::split(*s, ',')) m.sync_modes.push_back(detail::parse_sync_mode(part));
    }
    m.bench_reps = r.integer("bench_reps").value_or(m.bench_reps);
    r.finish();
  }
  if (const auto* det = doc.first("detector")) {
    detail::SectionReader r(doc, *det);
    DetectorConfig d;
    d.avg_width = r.integer("avg_width").value_or(d.avg_width);
    const int active_points = r.integer("active_points").value_or(11 * d.avg_width);
    const int quiet_points = r.integer("quiet_points").value_or(33 * d.avg_width);
    d.active = r.parse("active_bands", [&](std::string_view v) { return detail::parse_bands(v, active_points); })
                   .value_or(std::vector<DetectorBand>{});
    auto quiet = r.parse("quiet_band", [&](std::string_view v) { return detail::parse_bands(v, quiet_points); });
    if (!quiet || quiet->size() != 1) throw ConfigError(r.where() + ": need exactly one quiet_band");
    d.quiet = quiet->front();
    r.finish();
    m.detector = d;
  }
  if (const auto* des = doc.first("design")) {
    detail::SectionReader r(doc, *des);
    m.design_period = r.integer("period").value_or(0);
    m.design_marks = r.integer("marks").value_or(0);
    if (auto s = r.text("exhaustive")) m.design_exhaustive = (*s == "true" || *s == "1");
    r.finish();
  }
  return m;
}

inline ExperimentManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_ini(load_ini(path), path.parent_path());
}

/// Patterns a sweep evaluates: an explicit list, or the scenario pattern grown
/// by the extra-coset order to each requested rate, or just the scenario pattern.
inline std::vector<CosetPattern> sweep_patterns(const ScenarioConfig& cfg, const ExperimentManifest& m) {
  if (!m.patterns.empty()) {
    std::vector<CosetPattern> out;
    for (auto part : detail::split(m.patterns, ';')) {
      if (!detail::trim(part).empty()) out.push_back(CosetPattern::parse(cfg.period, part));
    }
    if (out.empty()) throw ConfigError("patterns lists no pattern");
    return out;
  }
  if (!cfg.pattern) throw ConfigError("scenario has no pattern to sweep");
  const auto& base = *cfg.pattern;
  if (m.rate.empty()) return {base};
  std::vector<int> extras;
  for (int e : m.extra_cosets) {
    if (!base.contains(e) && std::find(extras.begin(), extras.end(), e) == extras.end()) extras.push_back(e);
  }
  std::vector<CosetPattern> out;
  for (double r : m.rate) {
    const int marks = static_cast<int>(std::lround(r * cfg.period));
    const int need = marks - base.size();
    if (need < 0 || need > static_cast<int>(extras.size())) {
      throw ConfigError("rate " + format_double(r) + " needs " + std::to_string(marks) +
                        " cosets, outside what the pattern and extra_cosets provide");
    }
    out.push_back(base.extended(std::span<const int>(extras.data(), static_cast<std::size_t>(need))));
  }
  return out;
}

inline std::vector<int> coset_union(const std::vector<CosetPattern>& patterns) {
  std::set<int> all;
  for (const auto& p : patterns) all.insert(p.marks().begin(), p.marks().end());
  return {all.begin(), all.end()};
}

/// Runs `run(r)` for r in [0, runs) on the worker pool and feeds the results to
/// `reduce(r, result)` strictly in run order. Batching keeps memory bounded
/// and the reduction order independent of the thread count.
template <typename RunFn, typename ReduceFn>
void monte_carlo(int runs, int threads, RunFn&& run, ReduceFn&& reduce) {
  using Result = decltype(run(0));
  constexpr int kBatch = 64;
  for (int start = 0; start < runs; start += kBatch) {
    const int count = std::min(kBatch, runs - start);
    std::vector<Result> results(static_cast<std::size_t>(count));
    parallel_for(static_cast<std::size_t>(count), threads,
                 [&](std::size_t k) { results[k] = run(start + static_cast<int>(k)); });
    for (int k = 0; k < count; ++k) reduce(start + k, std::move(results[static_cast<std::size_t>(k)]));
  }
}

// --------------------------------------------------------------------------
// reconstruct

struct ReconstructRun {
  Periodogram cap;
  Periodogram nap;
  std::optional<Periodogram> cap_ub;  // UB baseline on a correlated-bins scenario
  std::vector<std::string> warnings;
};

namespace detail {

inline Periodogram correlated_multicluster(const CosetObservationSet& obs, const PsiMatrix& psi) {
  Periodogram avg;
  for (int d = 0; d < obs.clusters; ++d) {
    auto p = estimate_correlated_bins(obs.cluster(d), psi);
    if (d == 0) {
      avg = std::move(p);
    } else {
      for (std::size_t q = 0; q < avg.values.size(); ++q) avg.values[q] += p.values[q];
      avg.max_imag_residue = std::max(avg.max_imag_residue, p.max_imag_residue);
    }
  }
  for (auto& v : avg.values) v /= obs.clusters;
  avg.clusters = obs.clusters;
  return avg;
}

}  // namespace detail

inline ReconstructRun reconstruct_once(const ScenarioConfig& cfg, std::uint64_t seed, int run) {
  ReconstructRun out;
  SynthesisOptions opts;
  opts.retain_full_rate = true;
  const auto obs = synthesize_observations(cfg, seed, static_cast<std::uint64_t>(run), opts);
  out.warnings = obs.warnings;
  out.nap = nyquist_ap_multicluster(obs);
  if (cfg.bin_mode == BinMode::uncorrelated) {
    out.cap = estimate_multicluster(obs, *cfg.pattern).averaged;
  } else {
    out.cap = detail::correlated_multicluster(obs, PsiMatrix(*cfg.family));
    if (cfg.ub_pattern) {
      // Same signals at every sensor (streams are keyed per sensor), acquired on the UB pattern.
      SynthesisOptions ub_opts;
      ub_opts.cosets = std::vector<int>(cfg.ub_pattern->marks().begin(), cfg.ub_pattern->marks().end());
      const auto ub_obs = synthesize_observations(cfg, seed, static_cast<std::uint64_t>(run), ub_opts);
      out.cap_ub = estimate_multicluster(ub_obs, *cfg.ub_pattern).averaged;
    }
  }
  return out;
}

inline std::vector<ReconstructRun> run_reconstruct(const ScenarioConfig& cfg, int runs, std::uint64_t seed,
                                                   int threads) {
  std::vector<ReconstructRun> all;
  monte_carlo(
      runs, threads, [&](int r) { return reconstruct_once(cfg, seed, r); },
      [&](int, ReconstructRun res) { all.push_back(std::move(res)); });
  return all;
}

namespace detail {

inline void append_periodogram_rows(CsvWriter& csv, const Periodogram& p, int run) {
  const std::string kind = to_string(p.kind);
  const std::string id = std::to_string(run);
  for (int q = 0; q < p.grid(); ++q) {
    csv.row({format_double(p.theta(q)), format_double(p.values[static_cast<std::size_t>(q)]), kind, id});
  }
}

inline nlohmann::json nmse_or_null(const Periodogram& est, const Periodogram& ref) {
  const bool zero = std::all_of(ref.values.begin(), ref.values.end(), [](double v) { return v == 0.0; });
  if (zero) return nullptr;
  return nmse(est, ref);
}

}  // namespace detail

inline void write_reconstruct(const ExperimentManifest& m, const ScenarioConfig& cfg,
                              const std::vector<ReconstructRun>& runs) {
  ensure_directory(m.output);
  const std::vector<std::string> header{"theta", "value", "estimator", "run_id"};
  CsvWriter cap(m.output / "cap.csv", header);
  CsvWriter nap(m.output / "nap.csv", header);
  std::optional<CsvWriter> cap_ub;
  if (!runs.empty() && runs.front().cap_ub) cap_ub.emplace(m.output / "cap_ub.csv", header);
  nlohmann::json summary;
  summary["kind"] = "reconstruct";
  summary["seed"] = *m.seed;
  summary["runs"] = runs.size();
  summary["grid"] = cfg.grid();
  summary["bin_mode"] = to_string(cfg.bin_mode);
  summary["sync_mode"] = to_string(cfg.sync_mode);
  summary["pattern"] = cfg.bin_mode == BinMode::uncorrelated ? cfg.pattern->to_string() : cfg.family->to_string();
  nlohmann::json per_run = nlohmann::json::array();
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& run = runs[r];
    detail::append_periodogram_rows(cap, run.cap, static_cast<int>(r));
    detail::append_periodogram_rows(nap, run.nap, static_cast<int>(r));
    nlohmann::json j;
    j["run_id"] = r;
    j["estimator"] = to_string(run.cap.kind);
    j["nmse"] = detail::nmse_or_null(run.cap, run.nap);
    j["negative_count"] = run.cap.negative_count();
    j["max_imag_residue"] = run.cap.max_imag_residue;
    if (run.cap_ub) {
      detail::append_periodogram_rows(*cap_ub, *run.cap_ub, static_cast<int>(r));
      j["ub_pattern"] = cfg.ub_pattern->to_string();
      j["nmse_ub"] = detail::nmse_or_null(*run.cap_ub, run.nap);
      j["negative_count_ub"] = run.cap_ub->negative_count();
    }
    per_run.push_back(j);
  }
  summary["per_run"] = per_run;
  summary["warnings"] = runs.empty() ? std::vector<std::string>{} : runs.front().warnings;
  write_json(m.output / "summary.json", summary);
}

// --------------------------------------------------------------------------
// nmse-sweep

struct NmseRow {
  int tau = 0;
  double rate = 0.0;
  std::string pattern;
  double sigma2_dbm = 0.0;
  double nmse = 0.0;  // mean over runs
};

/// NMSE of the multi-cluster CAP against the NAP of the same sensors, averaged
/// over runs, for every (sigma2, tau, pattern). Smaller sensor counts use the
/// first tau sensors of each cluster and every pattern is read from the same
/// acquisitions, so the axes are compared on common random numbers.
inline std::vector<NmseRow> run_nmse_sweep(const ScenarioConfig& cfg, const std::vector<CosetPattern>& patterns,
                                           std::vector<int> taus, std::vector<double> sigmas, int runs,
                                           std::uint64_t seed, int threads) {
  if (cfg.bin_mode != BinMode::uncorrelated) throw ConfigError("nmse-sweep supports uncorrelated-bins scenarios");
  if (patterns.empty()) throw ConfigError("nmse-sweep needs at least one pattern");
  for (const auto& p : patterns) SystemMatrix(p).require_identifiable();
  if (taus.empty()) taus = {cfg.tau};
  if (sigmas.empty()) sigmas = {cfg.noise_dbm};
  const int max_tau = *std::max_element(taus.begin(), taus.end());
  const auto cosets = coset_union(patterns);
  const std::size_t cells = sigmas.size() * taus.size() * patterns.size();

  std::vector<double> sums(cells, 0.0);
  monte_carlo(
      runs, threads,
      [&](int r) {
        std::vector<double> out;
        out.reserve(cells);
        for (double s2 : sigmas) {
          SynthesisOptions opts;
          opts.retain_full_rate = true;
          opts.cosets = cosets;
          opts.per_cluster = max_tau;
          opts.noise_dbm = s2;
          const auto obs = synthesize_observations(cfg, seed, static_cast<std::uint64_t>(r), opts);
          for (int t : taus) {
            const auto nap = nyquist_ap_multicluster(obs, t);
            for (const auto& p : patterns) out.push_back(nmse(estimate_multicluster(obs, p, t).averaged, nap));
          }
        }
        return out;
      },
      [&](int, std::vector<double> v) {
        for (std::size_t k = 0; k < cells; ++k) sums[k] += v[k];
      });

  std::vector<NmseRow> rows;
  std::size_t k = 0;
  for (double s2 : sigmas) {
    for (int t : taus) {
      for (const auto& p : patterns) {
        rows.push_back({t, p.rate(), p.to_string(), s2, sums[k++] / runs});
      }
    }
  }
  return rows;
}

inline void write_nmse_sweep(const ExperimentManifest& m, const std::vector<NmseRow>& rows) {
  ensure_directory(m.output);
  CsvWriter csv(m.output / "nmse.csv", {"tau", "rate", "sigma2", "nmse", "pattern"});
  for (const auto& r : rows) {
    csv.row({std::to_string(r.tau), format_double(r.rate), format_double(r.sigma2_dbm), format_double(r.nmse),
             "\"" + r.pattern + "\""});
  }
}

// --------------------------------------------------------------------------
// roc

struct RocSetting {
  int tau = 0;
  double sigma2_dbm = 0.0;
  SyncMode sync = SyncMode::unsynchronized;
  RocCurve curve;
};

/// ROC of the block-averaged multi-cluster CAP for every (sync mode, sigma2,
/// tau). Statistics are pooled over runs before the threshold sweep.
inline std::vector<RocSetting> run_roc(const ScenarioConfig& cfg, const DetectorConfig& det, std::vector<int> taus,
                                       std::vector<double> sigmas, std::vector<SyncMode> syncs, int runs,
                                       std::uint64_t seed, int threads) {
  if (cfg.bin_mode != BinMode::uncorrelated) throw ConfigError("roc supports uncorrelated-bins scenarios");
  if (taus.empty()) taus = {cfg.tau};
  if (sigmas.empty()) sigmas = {cfg.noise_dbm};
  if (syncs.empty()) syncs = {cfg.sync_mode};
  const auto windows = detector_windows(det, cfg.grid());
  const int max_tau = *std::max_element(taus.begin(), taus.end());
  const std::size_t cells = syncs.size() * sigmas.size() * taus.size();

  std::vector<DetectorStatistics> pooled(cells);
  monte_carlo(
      runs, threads,
      [&](int r) {
        std::vector<DetectorStatistics> out;
        out.reserve(cells);
        for (SyncMode sm : syncs) {
          ScenarioConfig c = cfg;
          c.sync_mode = sm;
          for (double s2 : sigmas) {
            SynthesisOptions opts;
            opts.per_cluster = max_tau;
            opts.noise_dbm = s2;
            const auto obs = synthesize_observations(c, seed, static_cast<std::uint64_t>(r), opts);
            for (int t : taus) {
              const auto cap = estimate_multicluster(obs, *c.pattern, t).averaged;
              out.push_back(detector_statistics(cap.values, windows, det.avg_width));
            }
          }
        }
        return out;
      },
      [&](int, std::vector<DetectorStatistics> v) {
        for (std::size_t k = 0; k < cells; ++k) {
          pooled[k].active.insert(pooled[k].active.end(), v[k].active.begin(), v[k].active.end());
          pooled[k].quiet.insert(pooled[k].quiet.end(), v[k].quiet.begin(), v[k].quiet.end());
        }
      });

  std::vector<RocSetting> out;
  std::size_t k = 0;
  for (SyncMode sm : syncs) {
    for (double s2 : sigmas) {
      for (int t : taus) {
        RocSetting s{t, s2, sm, build_roc(pooled[k].active, pooled[k].quiet)};
        s.curve.avg_width = det.avg_width;
        out.push_back(std::move(s));
        ++k;
      }
    }
  }
  return out;
}

inline void write_roc(const ExperimentManifest& m, const ScenarioConfig& cfg, const std::vector<RocSetting>& settings) {
  ensure_directory(m.output);
  CsvWriter summary(m.output / "roc_summary.csv", {"tau", "sigma2", "sync_mode", "auc", "file"});
  for (const auto& s : settings) {
    const std::string file = "roc_tau" + std::to_string(s.tau) + "_sigma" + format_double(s.sigma2_dbm) + "_" +
                             to_string(s.sync) + ".csv";
    CsvWriter csv(m.output / file, {"threshold", "pfa", "pd"});
    for (std::size_t k = 0; k < s.curve.thresholds.size(); ++k) {
      csv.row({format_double(s.curve.thresholds[k]), format_double(s.curve.pfa[k]), format_double(s.curve.pd[k])});
    }
    summary.row({std::to_string(s.tau), format_double(s.sigma2_dbm), to_string(s.sync), format_double(s.curve.auc),
                 file});
  }
  const auto w = detector_windows(*m.detector, cfg.grid());
  CsvWriter win(m.output / "windows.csv", {"role", "index", "theta"});
  for (std::size_t b = 0; b < w.active.size(); ++b) {
    for (int q : w.active[b]) {
      win.row({"active" + std::to_string(b), std::to_string(q), format_double(static_cast<double>(q) / cfg.grid())});
    }
  }
  for (int q : w.quiet) win.row({"quiet", std::to_string(q), format_double(static_cast<double>(q) / cfg.grid())});
}

// --------------------------------------------------------------------------
// variance-check

/// Running mean and central moments up to order four.
struct MomentAccumulator {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;

  void add(double x) {
    const double n1 = n;
    n += 1.0;
    const double delta = x - mean;
    const double dn = delta / n;
    const double dn2 = dn * dn;
    const double term1 = delta * dn * n1;
    mean += dn;
    m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2 - 4.0 * dn * m3;
    m3 += term1 * dn * (n - 2.0) - 3.0 * dn * m2;
    m2 += term1;
  }

  double variance() const { return n > 1.0 ? m2 / (n - 1.0) : 0.0; }
  double mean_standard_error() const { return std::sqrt(variance() / n); }

  /// Standard error of the unbiased sample variance.
  double variance_standard_error() const {
    if (n < 4.0) return std::numeric_limits<double>::infinity();
    const double s2 = variance();
    const double mu4 = m4 / n;
    const double v = (mu4 - (n - 3.0) / (n - 1.0) * s2 * s2) / n;
    return std::sqrt(std::max(v, 0.0));
  }
};

struct VarianceRow {
  std::string pattern;
  int marks = 0;
  double rate = 0.0;
  int tau = 0;
  double sigma2 = 0.0;  // linear
  double analytical_variance = 0.0;
  double analytical_nmse = 0.0;
  double empirical_nmse = 0.0;  // mean over runs of the NMSE against the flat truth
  std::vector<MomentAccumulator> bins;  // per grid point, across runs

  double empirical_variance() const {
    double acc = 0.0;
    for (const auto& b : bins) acc += b.variance();
    return acc / static_cast<double>(bins.size());
  }
};

/// Monte Carlo check of the white-noise CAP variance and NMSE against the
/// closed form, for every (tau, pattern) on common random numbers.
inline std::vector<VarianceRow> run_variance_check(const ScenarioConfig& cfg, const std::vector<CosetPattern>& patterns,
                                                   std::vector<int> taus, int runs, std::uint64_t seed, int threads) {
  if (cfg.bin_mode != BinMode::uncorrelated) throw ConfigError("variance-check needs an uncorrelated-bins scenario");
  for (const auto& u : cfg.users) {
    if (u.power_linear() != 0.0) throw ConfigError("variance-check needs a white-noise scenario (no active users)");
  }
  const double s2 = cfg.noise_variance();
  if (!(s2 > 0.0)) throw ConfigError("variance-check needs a positive noise level");
  if (taus.empty()) taus = {cfg.tau};
  const int max_tau = *std::max_element(taus.begin(), taus.end());
  const auto cosets = coset_union(patterns);
  const int grid = cfg.grid();

  std::vector<VarianceRow> rows;
  for (int t : taus) {
    for (const auto& p : patterns) {
      VarianceRow row;
      row.pattern = p.to_string();
      row.marks = p.size();
      row.rate = p.rate();
      row.tau = t;
      row.sigma2 = s2;
      const auto cf = whitenoise_variance_closed_form(p, s2, t);
      row.analytical_variance = cf.value / cfg.clusters;
      row.analytical_nmse = analytical_nmse(p, t) / cfg.clusters;
      row.bins.resize(static_cast<std::size_t>(grid));
      rows.push_back(std::move(row));
    }
  }

  const std::vector<double> truth(static_cast<std::size_t>(grid), s2);
  monte_carlo(
      runs, threads,
      [&](int r) {
        SynthesisOptions opts;
        opts.cosets = cosets;
        opts.per_cluster = max_tau;
        const auto obs = synthesize_observations(cfg, seed, static_cast<std::uint64_t>(r), opts);
        std::vector<std::vector<double>> caps;
        for (int t : taus) {
          for (const auto& p : patterns) caps.push_back(estimate_multicluster(obs, p, t).averaged.values);
        }
        return caps;
      },
      [&](int, std::vector<std::vector<double>> caps) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
          for (int q = 0; q < grid; ++q) rows[k].bins[static_cast<std::size_t>(q)].add(caps[k][static_cast<std::size_t>(q)]);
          rows[k].empirical_nmse += nmse(std::span<const double>(caps[k]), std::span<const double>(truth)) / runs;
        }
      });
  return rows;
}

inline void write_variance_check(const ExperimentManifest& m, const std::vector<VarianceRow>& rows, int grid) {
  ensure_directory(m.output);
  CsvWriter csv(m.output / "variance.csv",
                {"config", "pattern", "rate", "tau", "sigma2", "analytical_variance", "empirical_variance",
                 "analytical_nmse", "empirical_nmse", "relative_gap"});
  CsvWriter bins(m.output / "variance_bins.csv", {"config", "theta", "analytical", "empirical", "mean"});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    const double gap = std::abs(r.empirical_nmse - r.analytical_nmse) / r.analytical_nmse;
    csv.row({std::to_string(k), "\"" + r.pattern + "\"",
             format_double(r.rate),
             std::to_string(r.tau), format_double(r.sigma2), format_double(r.analytical_variance),
             format_double(r.empirical_variance()), format_double(r.analytical_nmse), format_double(r.empirical_nmse),
             format_double(gap)});
    for (int q = 0; q < grid; ++q) {
      const auto& b = r.bins[static_cast<std::size_t>(q)];
      bins.row({std::to_string(k), format_double(static_cast<double>(q) / grid), format_double(r.analytical_variance),
                format_double(b.variance()), format_double(b.mean)});
    }
  }
}

// --------------------------------------------------------------------------
// bench

struct BenchStage {
  int tau = 0;
  double synthesize_s = 0.0;
  double covariance_s = 0.0;
  double reconstruct_s = 0.0;  // LS + assembly over all grid points
};

struct BenchReport {
  std::vector<BenchStage> stages;
  int period = 0;
  int bins = 0;
  double per_theta_s = 0.0;         // reconstruction time per grid point at N
  double per_theta_double_s = 0.0;  // same at 2N with a minimal ruler for 2N
  std::vector<double> covariance_ratio_normalized;  // (t_cov ratio) / (tau ratio) for successive taus
  std::vector<double> reconstruct_ratio;            // t_rec ratio for successive taus
  double n_scaling_ratio = 0.0;
  bool covariance_linear = true;
  bool reconstruct_tau_independent = true;
  bool n_scaling_ok = true;
};

namespace detail {

// Each repetition calls fn until at least 20 ms have passed and records the
// mean per call, so millisecond stages are not dominated by scheduler noise.
template <typename Fn>
double min_time(int reps, Fn&& fn) {
  using clock = std::chrono::steady_clock;
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clock::now();
    auto t1 = t0;
    int calls = 0;
    do {
      fn();
      ++calls;
      t1 = clock::now();
    } while (t1 - t0 < std::chrono::milliseconds(20));
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count() / calls);
  }
  return best;
}

inline double reconstruct_time_per_theta(const CosetPattern& pattern, int bins, int reps, std::uint64_t seed) {
  std::mt19937_64 gen(stream_key({seed, static_cast<std::uint64_t>(pattern.period()), 7}));
  ComplexNormal cn(1.0);
  std::vector<Eigen::MatrixXcd> mats;
  for (int l = 0; l < bins; ++l) {
    Eigen::MatrixXcd a(pattern.size(), pattern.size());
    for (int i = 0; i < a.size(); ++i) a.data()[i] = cn(gen);
    mats.push_back(a * a.adjoint());
  }
  const auto stack = CovarianceStack::from_matrices(pattern, mats);
  const SystemMatrix sys(pattern);
  double sink = 0.0;
  const double t = min_time(reps, [&] { sink += assemble_cap(ls_reconstruct_rbar(stack, sys)).values[0]; });
  (void)sink;
  return t / bins;
}

}  // namespace detail

/// Wall-time of the pipeline stages for each tau (min over repetitions) and the
/// scaling checks: covariance time linear in tau, reconstruction independent of
/// tau, and per-grid-point reconstruction at 2N at most 4x that at N.
inline BenchReport run_bench(const ScenarioConfig& cfg, std::vector<int> taus, int reps, std::uint64_t seed) {
  if (taus.empty()) throw ConfigError("bench needs a non-empty tau sweep");
  if (cfg.bin_mode != BinMode::uncorrelated) throw ConfigError("bench supports uncorrelated-bins scenarios");
  std::sort(taus.begin(), taus.end());
  const auto& pattern = *cfg.pattern;
  const SystemMatrix sys(pattern);
  sys.require_identifiable();
  BenchReport rep;
  rep.period = cfg.period;
  rep.bins = cfg.bins;
  for (int t : taus) {
    BenchStage st;
    st.tau = t;
    SynthesisOptions opts;
    opts.per_cluster = t;
    CosetObservationSet obs;
    st.synthesize_s = detail::min_time(1, [&] { obs = synthesize_observations(cfg, seed, 0, opts); });
    const auto sensors = obs.cluster(0);
    std::optional<CovarianceStack> stack;
    st.covariance_s = detail::min_time(reps, [&] { stack = sample_covariance(sensors, pattern); });
    double sink = 0.0;
    st.reconstruct_s = detail::min_time(reps, [&] { sink += assemble_cap(ls_reconstruct_rbar(*stack, sys)).values[0]; });
    (void)sink;
    rep.stages.push_back(st);
  }
  for (std::size_t k = 1; k < rep.stages.size(); ++k) {
    const auto& a = rep.stages[k - 1];
    const auto& b = rep.stages[k];
    const double tau_ratio = static_cast<double>(b.tau) / a.tau;
    const double cov = (b.covariance_s / a.covariance_s) / tau_ratio;
    const double rec = b.reconstruct_s / a.reconstruct_s;
    rep.covariance_ratio_normalized.push_back(cov);
    rep.reconstruct_ratio.push_back(rec);
    rep.covariance_linear = rep.covariance_linear && cov > 0.7 && cov < 1.3;
    rep.reconstruct_tau_independent = rep.reconstruct_tau_independent && rec > 0.7 && rec < 1.3;
  }
  rep.per_theta_s = detail::reconstruct_time_per_theta(pattern, cfg.bins, reps, seed);
  const auto bigger = minimal_circular_sparse_ruler(2 * cfg.period).pattern;
  rep.per_theta_double_s = detail::reconstruct_time_per_theta(bigger, cfg.bins, reps, seed);
  rep.n_scaling_ratio = rep.per_theta_double_s / rep.per_theta_s;
  rep.n_scaling_ok = rep.n_scaling_ratio <= 4.0;
  return rep;
}

inline void write_bench(const ExperimentManifest& m, const BenchReport& rep) {
  ensure_directory(m.output);
  nlohmann::json j;
  j["period"] = rep.period;
  j["bins"] = rep.bins;
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : rep.stages) {
    stages.push_back({{"tau", s.tau},
                      {"synthesize_s", s.synthesize_s},
                      {"covariance_s", s.covariance_s},
                      {"reconstruct_s", s.reconstruct_s}});
  }
  j["stages"] = stages;
  j["reconstruct_per_theta_s"] = rep.per_theta_s;
  j["reconstruct_per_theta_2n_s"] = rep.per_theta_double_s;
  j["checks"] = {{"covariance_ratio_over_tau_ratio", rep.covariance_ratio_normalized},
                 {"reconstruct_ratio", rep.reconstruct_ratio},
                 {"n_doubling_ratio", rep.n_scaling_ratio},
                 {"covariance_linear_in_tau", rep.covariance_linear},
                 {"reconstruct_independent_of_tau", rep.reconstruct_tau_independent},
                 {"n_doubling_within_4x", rep.n_scaling_ok}};
  write_json(m.output / "bench.json", j);
}

// --------------------------------------------------------------------------
// dispatch

/// Runs one manifest end to end and writes its output files.
inline void run_manifest(const ExperimentManifest& m) {
  m.validate();
  if (m.kind == "design") {
    ensure_directory(m.output);
    std::ofstream out(m.output / "patterns.txt");
    if (!out) throw IoError("cannot write " + (m.output / "patterns.txt").string());
    if (m.design_marks > 0) {
      const auto fam = design_pair_cover_family(m.design_period, m.design_marks);
      for (const auto& p : fam.patterns()) out << p.to_string() << '\n';
    } else {
      const auto p = m.design_exhaustive ? exhaustive_minimal_ruler(m.design_period)
                                         : minimal_circular_sparse_ruler(m.design_period).pattern;
      out << p.to_string() << '\n';
    }
    return;
  }
  const auto cfg = load_scenario(m.scenario);
  const auto seed = *m.seed;
  if (m.kind == "reconstruct") {
    write_reconstruct(m, cfg, run_reconstruct(cfg, m.runs, seed, m.threads));
  } else if (m.kind == "nmse-sweep") {
    write_nmse_sweep(m, run_nmse_sweep(cfg, sweep_patterns(cfg, m), m.tau, m.sigma2_dbm, m.runs, seed, m.threads));
  } else if (m.kind == "roc") {
    write_roc(m, cfg, run_roc(cfg, *m.detector, m.tau, m.sigma2_dbm, m.sync_modes, m.runs, seed, m.threads));
  } else if (m.kind == "variance-check") {
    write_variance_check(m, run_variance_check(cfg, sweep_patterns(cfg, m), m.tau, m.runs, seed, m.threads),
                         cfg.grid());
  } else if (m.kind == "bench") {
    write_bench(m, run_bench(cfg, m.tau, m.bench_reps, seed));
  }
}

}  // namespace cosetpsd
