#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cosetpsd/error.hpp"
#include "cosetpsd/fft.hpp"
#include "cosetpsd/pattern.hpp"
#include "cosetpsd/rng.hpp"

namespace cosetpsd {

using cdouble = std::complex<double>;

enum class SyncMode { unsynchronized, synchronized };
enum class BinMode { uncorrelated, correlated };

inline std::string to_string(SyncMode m) {
  return m == SyncMode::synchronized ? "synchronized" : "unsynchronized";
}
inline std::string to_string(BinMode m) {
  return m == BinMode::correlated ? "correlated" : "uncorrelated";
}

/// Relative power in dB(m) to a linear scale with 0 dBm == 1. -inf maps to 0.
inline double db_to_linear(double db) {
  if (std::isinf(db) && db < 0) return 0.0;
  return std::pow(10.0, db / 10.0);
}

/// One user occupying [band_lo, band_hi) in normalized frequency (cycles per
/// sample; either [-0.5, 0.5) or [0, 1) conventions). power_dbm is the in-band
/// spectral level on the same scale as the noise variance.
struct UserSpec {
  double band_lo = 0.0;
  double band_hi = 0.0;
  double power_dbm = 0.0;
  std::vector<double> path_loss_db;  // one entry per cluster; empty means 0 dB

  double width() const { return band_hi - band_lo; }
  double centre() const { return 0.5 * (band_lo + band_hi); }
  double power_linear() const { return db_to_linear(power_dbm); }

  double path_loss_linear(int cluster) const {
    if (path_loss_db.empty()) return 1.0;
    if (path_loss_db.size() == 1) return db_to_linear(path_loss_db.front());
    if (cluster < 0 || cluster >= static_cast<int>(path_loss_db.size())) {
      throw ConfigError("user has no path loss for cluster " + std::to_string(cluster));
    }
    return db_to_linear(path_loss_db[static_cast<std::size_t>(cluster)]);
  }

  /// True if normalized frequency f (any real) lies in the band modulo 1.
  bool contains(double f) const {
    if (width() >= 1.0) return true;
    const double off = f - band_lo;
    return off - std::floor(off) < width();
  }
};

struct ScenarioConfig {
  int period = 18;  // N
  int bins = 170;   // L
  std::optional<CosetPattern> pattern;  // uncorrelated bins
  std::optional<PatternFamily> family;  // correlated bins
  std::optional<CosetPattern> ub_pattern;  // optional UB baseline for correlated scenarios
  std::vector<UserSpec> users;
  double noise_dbm = -std::numeric_limits<double>::infinity();
  int clusters = 1;     // D
  int tau = 1;          // sensors per cluster (UB)
  int per_group = 1;    // P sensors per group (CB); a cluster then holds Z*P sensors
  SyncMode sync_mode = SyncMode::unsynchronized;
  BinMode bin_mode = BinMode::uncorrelated;
  int fir_taps = 200;
  std::uint64_t seed = 0;

  int grid() const noexcept { return period * bins; }
  double noise_variance() const { return db_to_linear(noise_dbm); }

  int sensors_per_cluster() const {
    if (bin_mode == BinMode::correlated) return family ? family->groups() * per_group : 0;
    return tau;
  }

  void validate() const {
    if (period < 1) throw ConfigError("period must be >= 1");
    if (bins < 1) throw ConfigError("bins must be >= 1");
    if (clusters < 1) throw ConfigError("clusters must be >= 1");
    if (tau < 1) throw ConfigError("tau must be >= 1");
    if (per_group < 1) throw ConfigError("per_group must be >= 1");
    if (std::isnan(noise_dbm) || noise_dbm == std::numeric_limits<double>::infinity()) {
      throw ConfigError("noise_dbm must be finite or -inf");
    }
    if (fir_taps < 1 || fir_taps > grid()) throw ConfigError("fir_taps must lie in [1, N*L]");
    if (bin_mode == BinMode::uncorrelated) {
      if (!pattern) throw ConfigError("uncorrelated-bins scenario needs a pattern");
      if (pattern->period() != period) throw ConfigError("pattern period differs from scenario period");
    } else {
      if (!family) throw ConfigError("correlated-bins scenario needs a pattern family");
      if (family->period() != period) throw ConfigError("family period differs from scenario period");
    }
    if (ub_pattern && ub_pattern->period() != period) {
      throw ConfigError("ub_pattern period differs from scenario period");
    }
    for (const auto& u : users) {
      if (!(u.width() > 0.0)) throw ConfigError("user band must have positive width");
      if (u.width() > 1.0) throw ConfigError("user band wider than the full spectrum");
      if (std::isnan(u.power_dbm) || u.power_dbm == std::numeric_limits<double>::infinity()) {
        throw ConfigError("user power must be finite or -inf");
      }
      if (u.path_loss_db.size() > 1 && static_cast<int>(u.path_loss_db.size()) < clusters) {
        throw ConfigError("user path_loss_db lists fewer entries than clusters");
      }
    }
  }

  /// Users whose band is wider than one bin, which breaks the uncorrelated-bins
  /// assumption.
  std::vector<std::string> bin_width_warnings() const {
    std::vector<std::string> out;
    if (bin_mode != BinMode::uncorrelated) return out;
    for (std::size_t k = 0; k < users.size(); ++k) {
      if (users[k].width() > 1.0 / period + 1e-12) {
        out.push_back("user " + std::to_string(k) + " band width " + std::to_string(users[k].width()) +
                      " exceeds the bin width 1/" + std::to_string(period));
      }
    }
    return out;
  }
};

/// Frequency response, on the N*L grid, of a Hamming-windowed sinc bandpass
/// with `taps` coefficients centred on the user band, applied circularly and
/// scaled to unit peak gain. A band covering the whole spectrum passes through.
inline std::vector<cdouble> design_band_filter(const UserSpec& user, int taps, int grid) {
  if (!(user.width() > 0.0)) throw ConfigError("zero-width band");
  if (taps < 1 || taps > grid) throw ConfigError("filter taps must lie in [1, grid]");
  if (user.width() >= 1.0) return std::vector<cdouble>(static_cast<std::size_t>(grid), cdouble(1.0));

  const double fc = 0.5 * user.width();
  const double f0 = user.centre();
  const double mid = 0.5 * (taps - 1);
  constexpr double pi = std::numbers::pi;
  fft::cvec h(static_cast<std::size_t>(grid), cdouble(0.0));
  for (int k = 0; k < taps; ++k) {
    const double u = k - mid;
    const double arg = 2.0 * fc * u;
    const double sinc = std::abs(arg) < 1e-15 ? 1.0 : std::sin(pi * arg) / (pi * arg);
    const double window = taps == 1 ? 1.0 : 0.54 - 0.46 * std::cos(2.0 * pi * k / (taps - 1));
    h[static_cast<std::size_t>(k)] = 2.0 * fc * sinc * window * std::polar(1.0, 2.0 * pi * f0 * u);
  }
  auto response = fft::forward(h);
  double peak = 0.0;
  for (const auto& v : response) peak = std::max(peak, std::abs(v));
  for (auto& v : response) v /= peak;
  return response;
}

/// Spectrum (N*L-point DFT) of one user realization: white CN(0, p) noise has
/// an i.i.d. CN(0, p*N*L) DFT, which is shaped here by the band filter. Drawing
/// directly in the frequency domain saves one transform per realization.
template <typename Gen>
std::vector<cdouble> user_spectrum(double power, const std::vector<cdouble>& response, Gen& gen) {
  ComplexNormal cn(power * static_cast<double>(response.size()));
  std::vector<cdouble> out(response.size());
  for (std::size_t k = 0; k < response.size(); ++k) out[k] = cn(gen) * response[k];
  return out;
}

/// Time-domain user signal of length `grid`: filtered circular Gaussian noise
/// whose in-band spectral level is the user's linear power.
template <typename Gen>
std::vector<cdouble> generate_user_signal(const UserSpec& user, int grid, Gen& gen, int taps = 200) {
  const auto response = design_band_filter(user, taps, grid);
  const double p = user.power_linear();
  if (p == 0.0) return std::vector<cdouble>(static_cast<std::size_t>(grid), cdouble(0.0));
  return fft::inverse(user_spectrum(p, response, gen));
}

/// Per-bin DTFT of one coset: X_n(l/(N L)) for l = 0..L-1, computed as the
/// L-point DFT of the coset sequence times exp(-j 2 pi l n / (N L)).
inline std::vector<cdouble> coset_dtft(std::span<const cdouble> samples, int coset, int period, int bins) {
  if (static_cast<int>(samples.size()) != bins) {
    throw ConfigError("coset_dtft expects " + std::to_string(bins) + " samples, got " +
                      std::to_string(samples.size()));
  }
  if (coset < 0 || coset >= period) throw ConfigError("coset index out of range");
  auto out = fft::forward(fft::cvec(samples.begin(), samples.end()));
  const double grid = static_cast<double>(period) * bins;
  for (int l = 0; l < bins; ++l) {
    out[static_cast<std::size_t>(l)] *= std::polar(1.0, -2.0 * std::numbers::pi * l * coset / grid);
  }
  return out;
}

/// One sensor (or time index) t and its compressed acquisition.
struct SensorObservation {
  int t = 0;        // global index, cluster-major
  int cluster = 0;
  int local = 0;    // index within the cluster
  int group = 0;    // correlated-bins group, local mod Z
  std::vector<int> cosets;   // observed cosets, ascending
  Eigen::MatrixXcd samples;  // row m: x[l' N + cosets[m]], l' = 0..L-1
  Eigen::MatrixXcd dtft;     // column l: y(l / (N L)), one row per coset
  std::vector<cdouble> full; // all N*L samples when retained

  int row_of(int coset) const {
    for (std::size_t m = 0; m < cosets.size(); ++m) {
      if (cosets[m] == coset) return static_cast<int>(m);
    }
    return -1;
  }
};

struct CosetObservationSet {
  int period = 0;
  int bins = 0;
  int clusters = 0;
  int per_cluster = 0;
  bool full_rate = false;
  std::vector<SensorObservation> sensors;  // cluster-major, local index ascending
  std::vector<std::string> warnings;

  int grid() const noexcept { return period * bins; }

  /// The first `count` sensors of cluster d (all of them when count < 0).
  std::span<const SensorObservation> cluster(int d, int count = -1) const {
    if (d < 0 || d >= clusters) throw ConfigError("cluster index out of range");
    const int n = count < 0 ? per_cluster : count;
    if (n > per_cluster) throw ConfigError("requested more sensors than the cluster holds");
    return std::span<const SensorObservation>(sensors).subspan(static_cast<std::size_t>(d * per_cluster),
                                                               static_cast<std::size_t>(n));
  }
};

struct SynthesisOptions {
  bool retain_full_rate = false;
  /// Observe these cosets at every sensor instead of the scenario pattern (for
  /// example the union of several nested patterns).
  std::optional<std::vector<int>> cosets;
  /// Override the scenario's sensors per cluster (fewer sensors keep the same
  /// streams, so subsets are nested).
  std::optional<int> per_cluster;
  /// Override the scenario noise level; the noise stream is unchanged, so a
  /// sweep over noise levels reuses the same normalized draws.
  std::optional<double> noise_dbm;
};

namespace detail {

inline std::uint64_t sensor_key(int cluster, int local) {
  return (static_cast<std::uint64_t>(cluster) << 32) | static_cast<std::uint32_t>(local);
}

inline constexpr std::uint64_t kSharedKey = ~std::uint64_t{0};

}  // namespace detail

/// Draws one Monte Carlo run of the scenario. Every random quantity comes from
/// a stream keyed by (seed, run, sensor, user, role), so the result is the same
/// whatever order sensors are produced in and sensor subsets are nested.
inline CosetObservationSet synthesize_observations(const ScenarioConfig& cfg, std::uint64_t seed,
                                                   std::uint64_t run, const SynthesisOptions& opts = {}) {
  cfg.validate();
  const int n = cfg.period;
  const int l_bins = cfg.bins;
  const int grid = cfg.grid();
  const bool correlated = cfg.bin_mode == BinMode::correlated;
  const bool shared = cfg.sync_mode == SyncMode::synchronized;
  const double noise_var = db_to_linear(opts.noise_dbm.value_or(cfg.noise_dbm));
  const double noise_sd = std::sqrt(noise_var);

  CosetObservationSet out;
  out.period = n;
  out.bins = l_bins;
  out.clusters = cfg.clusters;
  out.per_cluster = opts.per_cluster.value_or(cfg.sensors_per_cluster());
  out.full_rate = opts.retain_full_rate;
  out.warnings = cfg.bin_width_warnings();
  if (out.per_cluster < 1) throw ConfigError("need at least one sensor per cluster");

  std::optional<CosetPattern> forced;
  if (opts.cosets) forced = CosetPattern(n, *opts.cosets);

  std::vector<std::vector<cdouble>> responses;
  responses.reserve(cfg.users.size());
  for (const auto& u : cfg.users) responses.push_back(design_band_filter(u, cfg.fir_taps, grid));

  // Synchronized sensors share one realization per user within the run.
  std::vector<std::vector<cdouble>> shared_spectra;
  std::vector<cdouble> shared_symbols;
  if (shared) {
    for (std::size_t k = 0; k < cfg.users.size(); ++k) {
      auto gen = keyed_stream(seed, run, detail::kSharedKey, k,
                              correlated ? StreamRole::symbol : StreamRole::user_signal);
      if (correlated) {
        shared_symbols.push_back(ComplexNormal(1.0)(gen));
      } else {
        shared_spectra.push_back(user_spectrum(cfg.users[k].power_linear(), responses[k], gen));
      }
    }
  }

  out.sensors.reserve(static_cast<std::size_t>(cfg.clusters * out.per_cluster));
  std::vector<cdouble> spectrum(static_cast<std::size_t>(grid));
  for (int d = 0; d < cfg.clusters; ++d) {
    for (int j = 0; j < out.per_cluster; ++j) {
      const auto key = detail::sensor_key(d, j);
      SensorObservation obs;
      obs.cluster = d;
      obs.local = j;
      obs.t = d * out.per_cluster + j;
      obs.group = correlated ? j % cfg.family->groups() : 0;

      std::fill(spectrum.begin(), spectrum.end(), cdouble(0.0));
      bool any_user = false;
      for (std::size_t k = 0; k < cfg.users.size(); ++k) {
        const auto& u = cfg.users[k];
        const double p = u.power_linear();
        if (p == 0.0) continue;
        any_user = true;
        auto fade_gen = keyed_stream(seed, run, key, k, StreamRole::fading);
        const cdouble gain = ComplexNormal(u.path_loss_linear(d))(fade_gen);
        if (correlated) {
          cdouble symbol;
          if (shared) {
            symbol = shared_symbols[k];
          } else {
            auto gen = keyed_stream(seed, run, key, k, StreamRole::symbol);
            symbol = ComplexNormal(1.0)(gen);
          }
          // One symbol on every occupied grid point, shaped by the filter magnitude.
          const cdouble amp = gain * symbol * std::sqrt(p * grid);
          for (std::size_t q = 0; q < spectrum.size(); ++q) spectrum[q] += amp * std::abs(responses[k][q]);
        } else if (shared) {
          for (std::size_t q = 0; q < spectrum.size(); ++q) spectrum[q] += gain * shared_spectra[k][q];
        } else {
          auto gen = keyed_stream(seed, run, key, k, StreamRole::user_signal);
          const auto s = user_spectrum(p, responses[k], gen);
          for (std::size_t q = 0; q < spectrum.size(); ++q) spectrum[q] += gain * s[q];
        }
      }

      std::vector<cdouble> x = any_user ? fft::inverse(spectrum)
                                        : std::vector<cdouble>(static_cast<std::size_t>(grid), cdouble(0.0));
      if (noise_var > 0.0) {
        auto gen = keyed_stream(seed, run, key, 0, StreamRole::noise);
        ComplexNormal cn(1.0);
        for (auto& v : x) v += noise_sd * cn(gen);
      }

      const CosetPattern& pat = forced ? *forced : (correlated ? (*cfg.family)[obs.group] : *cfg.pattern);
      obs.cosets.assign(pat.marks().begin(), pat.marks().end());
      const int m_count = pat.size();
      obs.samples.resize(m_count, l_bins);
      obs.dtft.resize(m_count, l_bins);
      std::vector<cdouble> seq(static_cast<std::size_t>(l_bins));
      for (int m = 0; m < m_count; ++m) {
        for (int lp = 0; lp < l_bins; ++lp) {
          seq[static_cast<std::size_t>(lp)] = x[static_cast<std::size_t>(lp * n + pat[m])];
          obs.samples(m, lp) = seq[static_cast<std::size_t>(lp)];
        }
        const auto bins_dtft = coset_dtft(seq, pat[m], n, l_bins);
        for (int l = 0; l < l_bins; ++l) obs.dtft(m, l) = bins_dtft[static_cast<std::size_t>(l)];
      }
      if (opts.retain_full_rate) obs.full = std::move(x);
      out.sensors.push_back(std::move(obs));
    }
  }
  return out;
}

}  // namespace cosetpsd
