#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "cosetpsd/sensing.hpp"
#include "cosetpsd/sysmat.hpp"

using namespace cosetpsd;

namespace {

ScenarioConfig one_user(double lo, double hi, double power_dbm, double noise_dbm, int tau) {
  ScenarioConfig cfg;
  cfg.period = 18;
  cfg.bins = 170;
  cfg.pattern = CosetPattern(18, {0, 1, 4, 7, 9});
  cfg.users.push_back({lo, hi, power_dbm, {}});
  cfg.noise_dbm = noise_dbm;
  cfg.tau = tau;
  return cfg;
}

// Plain O(n^2) DFT, X[k] = sum_t x[t] exp(-j 2 pi k t / n).
std::vector<cdouble> direct_dft(const std::vector<cdouble>& x) {
  const std::size_t n = x.size();
  std::vector<cdouble> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cdouble acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / n);
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("dB conversion", "[sensing]") {
  CHECK(db_to_linear(0.0) == 1.0);
  CHECK(db_to_linear(10.0) == Catch::Approx(10.0));
  CHECK(db_to_linear(7.0) == Catch::Approx(5.011872336));
  CHECK(db_to_linear(-std::numeric_limits<double>::infinity()) == 0.0);
}

TEST_CASE("FFT wrapper matches a direct DFT", "[sensing][oracle]") {
  std::mt19937_64 gen(5);
  ComplexNormal cn;
  for (int n : {1, 7, 18, 170, 255}) {
    std::vector<cdouble> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = cn(gen);
    const auto fast = fft::forward(x);
    const auto slow = direct_dft(x);
    for (int k = 0; k < n; ++k) CHECK(std::abs(fast[k] - slow[k]) < 1e-9);
    const auto back = fft::inverse(fast);
    for (int k = 0; k < n; ++k) CHECK(std::abs(back[k] - x[k]) < 1e-12);
  }
}

TEST_CASE("coset DTFT matches its definition", "[sensing][oracle]") {
  const int n = 6;
  const int bins = 9;
  std::mt19937_64 gen(8);
  ComplexNormal cn;
  std::vector<cdouble> seq(bins);
  for (auto& v : seq) v = cn(gen);
  for (int coset = 0; coset < n; ++coset) {
    const auto y = coset_dtft(seq, coset, n, bins);
    for (int l = 0; l < bins; ++l) {
      cdouble acc = 0.0;
      for (int lp = 0; lp < bins; ++lp) {
        acc += seq[lp] * std::polar(1.0, -2.0 * std::numbers::pi * l * (lp * n + coset) / (n * bins));
      }
      CHECK(std::abs(y[l] - acc) < 1e-12);
    }
  }
  CHECK_THROWS_AS(coset_dtft(std::vector<cdouble>(3), 0, n, bins), ConfigError);
}

TEST_CASE("band filter shape", "[sensing]") {
  const int grid = 18 * 170;
  const UserSpec u{0.1, 0.15, 0.0, {}};
  const auto h = design_band_filter(u, 200, grid);
  double peak = 0.0;
  for (const auto& v : h) peak = std::max(peak, std::abs(v));
  CHECK(peak == Catch::Approx(1.0));
  // Centre of the band passes, well outside is strongly attenuated.
  CHECK(std::abs(h[static_cast<std::size_t>(0.125 * grid)]) > 0.95);
  CHECK(std::abs(h[static_cast<std::size_t>(0.5 * grid)]) < 1e-3);
  CHECK(std::abs(h[static_cast<std::size_t>(0.9 * grid)]) < 1e-3);

  const auto full = design_band_filter(UserSpec{0.0, 1.0, 0.0, {}}, 200, grid);
  for (const auto& v : full) CHECK(v == cdouble(1.0));
  CHECK_THROWS_AS(design_band_filter(UserSpec{0.2, 0.2, 0.0, {}}, 200, grid), ConfigError);
}

TEST_CASE("user signals have the requested in-band level", "[sensing]") {
  const int grid = 18 * 170;
  const UserSpec u{0.3, 0.35, 3.0, {}};
  const auto h = design_band_filter(u, 200, grid);
  const int draws = 40;
  double acc = 0.0;
  int count = 0;
  for (int r = 0; r < draws; ++r) {
    auto gen = keyed_stream(1, r, 0, 0, StreamRole::test);
    const auto x = generate_user_signal(u, grid, gen);
    const auto spectrum = fft::forward(x);
    for (int q = static_cast<int>(0.31 * grid); q < static_cast<int>(0.34 * grid); ++q) {
      acc += std::norm(spectrum[q]) / grid;
      ++count;
    }
  }
  CHECK(acc / count == Catch::Approx(u.power_linear()).epsilon(0.1));
}

TEST_CASE("aliasing identity for synthesized sensors", "[sensing][property]") {
  auto cfg = one_user(0.1, 0.15, 5.0, 7.0, 4);
  cfg.users.push_back({0.6, 0.64, 0.0, {}});
  SynthesisOptions opts;
  opts.retain_full_rate = true;
  const auto obs = synthesize_observations(cfg, 42, 0, opts);
  const int n = cfg.period;
  const int bins = cfg.bins;
  const auto b = modulation_matrix(n);
  const auto c = selection_matrix(*cfg.pattern);
  const Eigen::MatrixXcd cb = c.cast<cdouble>() * b;
  for (const auto& s : obs.sensors) {
    const auto x_full = fft::forward(s.full);
    double worst = 0.0;
    for (int l = 0; l < bins; ++l) {
      Eigen::VectorXcd x(n);
      for (int i = 0; i < n; ++i) x(i) = x_full[static_cast<std::size_t>(l + i * bins)];
      const Eigen::VectorXcd y = cb * x;
      worst = std::max(worst, (y - s.dtft.col(l)).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("Parseval energy bookkeeping", "[sensing][property]") {
  const auto cfg = one_user(0.2, 0.25, 10.0, 0.0, 3);
  SynthesisOptions opts;
  opts.retain_full_rate = true;
  const auto obs = synthesize_observations(cfg, 9, 2, opts);
  for (const auto& s : obs.sensors) {
    double time_energy = 0.0;
    for (const auto& v : s.full) time_energy += std::norm(v);
    double freq_energy = 0.0;
    for (const auto& v : fft::forward(s.full)) freq_energy += std::norm(v);
    CHECK(time_energy == Catch::Approx(freq_energy / s.full.size()).epsilon(1e-6));
  }
}

TEST_CASE("sensor signals decorrelate without synchronization", "[sensing][property]") {
  auto cfg = one_user(0.1, 0.15, 0.0, -std::numeric_limits<double>::infinity(), 200);
  SynthesisOptions opts;
  opts.retain_full_rate = true;
  const auto rho = [](const std::vector<cdouble>& a, const std::vector<cdouble>& b) {
    cdouble cross = 0.0;
    double ea = 0.0;
    double eb = 0.0;
    for (std::size_t q = 0; q < a.size(); ++q) {
      cross += a[q] * std::conj(b[q]);
      ea += std::norm(a[q]);
      eb += std::norm(b[q]);
    }
    return std::abs(cross) / std::sqrt(ea * eb);
  };

  const auto unsync = synthesize_observations(cfg, 77, 0, opts);
  double mean_rho = 0.0;
  for (int p = 0; p < 100; ++p) mean_rho += rho(unsync.sensors[2 * p].full, unsync.sensors[2 * p + 1].full);
  mean_rho /= 100;
  CHECK(mean_rho < 0.1);

  // Synchronized sensors see the same waveform up to their own flat fading gain.
  cfg.sync_mode = SyncMode::synchronized;
  cfg.tau = 4;
  const auto sync = synthesize_observations(cfg, 77, 0, opts);
  CHECK(rho(sync.sensors[0].full, sync.sensors[1].full) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("correlated-bin users are fully coherent across frequency", "[sensing][property]") {
  ScenarioConfig cfg;
  cfg.period = 5;
  cfg.bins = 40;
  cfg.fir_taps = 60;
  cfg.bin_mode = BinMode::correlated;
  cfg.family = design_pair_cover_family(5, 3);
  cfg.per_group = 5;
  cfg.users.push_back({0.2, 0.6, 0.0, {}});
  SynthesisOptions opts;
  opts.retain_full_rate = true;
  const auto obs = synthesize_observations(cfg, 3, 0, opts);
  const int grid = cfg.grid();
  std::vector<std::vector<cdouble>> spectra;
  for (const auto& s : obs.sensors) spectra.push_back(fft::forward(s.full));
  const int q1 = static_cast<int>(0.3 * grid);
  for (int q2 : {static_cast<int>(0.35 * grid), static_cast<int>(0.5 * grid), static_cast<int>(0.55 * grid)}) {
    cdouble cross = 0.0;
    double e1 = 0.0;
    double e2 = 0.0;
    for (const auto& x : spectra) {
      cross += x[q1] * std::conj(x[q2]);
      e1 += std::norm(x[q1]);
      e2 += std::norm(x[q2]);
    }
    CHECK(std::abs(cross) / std::sqrt(e1 * e2) == Catch::Approx(1.0).epsilon(1e-12));
  }
  for (const auto& s : obs.sensors) {
    CHECK(s.group == s.local % cfg.family->groups());
    const auto& marks = (*cfg.family)[s.group].marks();
    CHECK(s.cosets == std::vector<int>(marks.begin(), marks.end()));
  }
}

TEST_CASE("synthesis is keyed, nested and deterministic", "[sensing]") {
  auto cfg = one_user(0.1, 0.15, 5.0, 7.0, 6);
  cfg.clusters = 2;
  const auto a = synthesize_observations(cfg, 11, 4);
  const auto b = synthesize_observations(cfg, 11, 4);
  REQUIRE(a.sensors.size() == 12);
  for (std::size_t k = 0; k < a.sensors.size(); ++k) CHECK(a.sensors[k].dtft == b.sensors[k].dtft);

  SynthesisOptions fewer;
  fewer.per_cluster = 3;
  const auto c = synthesize_observations(cfg, 11, 4, fewer);
  REQUIRE(c.sensors.size() == 6);
  for (int d = 0; d < 2; ++d) {
    for (int j = 0; j < 3; ++j) CHECK(c.cluster(d)[j].dtft == a.cluster(d)[j].dtft);
  }

  // A larger coset set observes the same waveform.
  SynthesisOptions wide;
  wide.cosets = std::vector<int>{0, 1, 2, 4, 7, 9};
  const auto w = synthesize_observations(cfg, 11, 4, wide);
  for (std::size_t k = 0; k < a.sensors.size(); ++k) {
    CHECK(w.sensors[k].dtft.row(w.sensors[k].row_of(7)) == a.sensors[k].dtft.row(a.sensors[k].row_of(7)));
  }

  const auto other = synthesize_observations(cfg, 11, 5);
  CHECK(other.sensors[0].dtft != a.sensors[0].dtft);
}

TEST_CASE("noise level override rescales the same draws", "[sensing]") {
  ScenarioConfig cfg;
  cfg.period = 4;
  cfg.bins = 8;
  cfg.fir_taps = 8;
  cfg.pattern = CosetPattern(4, {0, 1, 2});
  cfg.noise_dbm = 0.0;
  cfg.tau = 2;
  const auto base = synthesize_observations(cfg, 1, 0);
  SynthesisOptions loud;
  loud.noise_dbm = 20.0;
  const auto scaled = synthesize_observations(cfg, 1, 0, loud);
  for (std::size_t k = 0; k < base.sensors.size(); ++k) {
    CHECK((scaled.sensors[k].samples - 10.0 * base.sensors[k].samples).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("scenario validation", "[sensing]") {
  auto cfg = one_user(0.1, 0.15, 0.0, 0.0, 1);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.bin_width_warnings().empty());

  auto wide = cfg;
  wide.users[0].band_hi = 0.3;
  CHECK(wide.bin_width_warnings().size() == 1);

  auto bad = cfg;
  bad.tau = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.users[0].power_dbm = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.pattern.reset();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.bin_mode = BinMode::correlated;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  UserSpec u{0.9, 1.05, 0.0, {3.0}};
  CHECK(u.contains(0.95));
  CHECK(u.contains(0.02));
  CHECK_FALSE(u.contains(0.1));
  CHECK(u.path_loss_linear(5) == Catch::Approx(db_to_linear(3.0)));
}
