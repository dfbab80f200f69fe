#include <catch_amalgamated.hpp>

#include <numbers>
#include <random>

#include "cosetpsd/analysis.hpp"

using namespace cosetpsd;

namespace {

struct JointMoments {
  int tau = 0;
  int n = 0;
  Eigen::MatrixXcd second;  // (tau N) x (tau N), index t N + i
  Eigen::MatrixXcd pseudo;  // same layout, complex symmetric
};

JointMoments random_moments(int n, int tau, bool improper, std::mt19937_64& gen) {
  ComplexNormal cn;
  const int d = n * tau;
  Eigen::MatrixXcd a(d, d);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) a(r, c) = cn(gen);
  }
  JointMoments m{tau, n, a * a.adjoint() / d, Eigen::MatrixXcd::Zero(d, d)};
  if (improper) {
    Eigen::MatrixXcd b(d, d);
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) b(r, c) = cn(gen);
    }
    m.pseudo = 0.3 * (b + b.transpose()) / d;
  }
  return m;
}

GaussianMoments as_callbacks(const JointMoments& jm, bool improper) {
  GaussianMoments g;
  g.tau = jm.tau;
  const int n = jm.n;
  g.second = [jm, n](int t, int i, int t2, int b) { return jm.second(t * n + i, t2 * n + b); };
  if (improper) g.pseudo = [jm, n](int t, int i, int t2, int b) { return jm.pseudo(t * n + i, t2 * n + b); };
  return g;
}

// Literal quadruple sum over bins of the fourth-order Gaussian moment, written
// without any factorization.
Eigen::MatrixXcd brute_force_covariance(const JointMoments& jm, const CosetPattern& p) {
  const int n = p.period();
  const int m = p.size();
  const auto ph = [n](int mark, int i) { return std::polar(1.0, 2.0 * std::numbers::pi * mark * i / n); };
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(m * m, m * m);
  for (int mp = 0; mp < m; ++mp) {
    for (int mm = 0; mm < m; ++mm) {
      for (int ap = 0; ap < m; ++ap) {
        for (int aa = 0; aa < m; ++aa) {
          cdouble acc = 0.0;
          for (int t = 0; t < jm.tau; ++t) {
            for (int t2 = 0; t2 < jm.tau; ++t2) {
              for (int i = 0; i < n; ++i) {
                for (int i2 = 0; i2 < n; ++i2) {
                  for (int b = 0; b < n; ++b) {
                    for (int b2 = 0; b2 < n; ++b2) {
                      const cdouble phase = ph(p[mm], i) * std::conj(ph(p[mp], i2)) * std::conj(ph(p[aa], b)) *
                                            ph(p[ap], b2);
                      const cdouble k1 = jm.second(t * n + i, t2 * n + b) *
                                         std::conj(jm.second(t * n + i2, t2 * n + b2));
                      const cdouble k2 = jm.pseudo(t * n + i, t2 * n + b2) *
                                         std::conj(jm.pseudo(t * n + i2, t2 * n + b));
                      acc += phase * (k1 + k2);
                    }
                  }
                }
              }
            }
          }
          out(m * mp + mm, m * ap + aa) = acc / (std::pow(n, 4) * jm.tau * jm.tau);
        }
      }
    }
  }
  return out;
}

std::vector<cdouble> direct_dft(const std::vector<cdouble>& x) {
  const std::size_t n = x.size();
  std::vector<cdouble> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t t = 0; t < n; ++t) {
      out[k] += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / n);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("factorized Gaussian covariance equals the quadruple sum", "[analysis][oracle]") {
  std::mt19937_64 gen(1);
  const CosetPattern p(5, {0, 1, 3});
  for (bool improper : {false, true}) {
    const auto jm = random_moments(5, 2, improper, gen);
    const auto fast = analytical_gaussian_covariance(as_callbacks(jm, improper), p);
    const auto slow = brute_force_covariance(jm, p);
    CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-12 * slow.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("Gaussian covariance agrees with simulation", "[analysis]") {
  std::mt19937_64 gen(2);
  const int n = 4;
  const int tau = 2;
  const CosetPattern p(n, {0, 1, 2});
  const auto jm = random_moments(n, tau, false, gen);
  const auto sigma = analytical_gaussian_covariance(as_callbacks(jm, false), p);

  const Eigen::MatrixXcd chol = jm.second.llt().matrixL();
  const int draws = 40000;
  const int mm = p.size() * p.size();
  Eigen::MatrixXcd samples(mm, draws);
  ComplexNormal cn;
  for (int r = 0; r < draws; ++r) {
    Eigen::VectorXcd w(n * tau);
    for (int k = 0; k < n * tau; ++k) w(k) = cn(gen);
    const Eigen::VectorXcd x = chol * w;
    Eigen::MatrixXcd ry = Eigen::MatrixXcd::Zero(p.size(), p.size());
    for (int t = 0; t < tau; ++t) {
      Eigen::VectorXcd y(p.size());
      for (int m = 0; m < p.size(); ++m) {
        y(m) = 0.0;
        for (int i = 0; i < n; ++i) y(m) += std::polar(1.0 / n, 2.0 * std::numbers::pi * p[m] * i / n) * x(t * n + i);
      }
      ry += y * y.adjoint() / static_cast<double>(tau);
    }
    samples.col(r) = Eigen::Map<const Eigen::VectorXcd>(ry.data(), mm);
  }
  const Eigen::VectorXcd mean = samples.rowwise().mean();
  const Eigen::MatrixXcd centred = samples.colwise() - mean;
  const Eigen::MatrixXcd empirical = centred * centred.adjoint() / static_cast<double>(draws - 1);
  CHECK((empirical - sigma).norm() < 0.05 * sigma.norm());
}

TEST_CASE("white-noise moments reduce to a scaled identity", "[analysis]") {
  const CosetPattern p(18, {0, 1, 4, 7, 9});
  const double sigma2 = db_to_linear(7.0);
  const int bins = 170;
  for (int tau : {1, 20}) {
    const auto sigma = analytical_gaussian_covariance(white_noise_moments(sigma2, 18, bins, tau), p);
    const double level = static_cast<double>(bins) * bins * sigma2 * sigma2 / tau;
    const Eigen::MatrixXcd expected = level * Eigen::MatrixXcd::Identity(25, 25);
    CHECK((sigma - expected).cwiseAbs().maxCoeff() <= 1e-12 * level);
  }
}

TEST_CASE("variance propagation equals the dense Kronecker chain", "[analysis][oracle]") {
  std::mt19937_64 gen(3);
  for (const auto& p : {CosetPattern(7, {0, 1, 3}), CosetPattern(10, {0, 1, 2, 5}), CosetPattern(6, {0, 1, 2, 4})}) {
    const int n = p.period();
    const int bins = 13;
    const SystemMatrix sys(p);
    const auto jm = random_moments(n, 2, true, gen);
    const auto sigma = analytical_gaussian_covariance(as_callbacks(jm, true), p);
    const auto fast = propagate_variance(sigma, sys, bins);

    const Eigen::MatrixXd rc = sys.dense();
    const Eigen::MatrixXcd ls = (rc.transpose() * rc).inverse() * rc.transpose();
    Eigen::MatrixXcd e(n, n);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) e(i, k) = std::polar(1.0 / bins, -2.0 * std::numbers::pi * i * k / n);
    }
    const Eigen::MatrixXcd chain = e * ls;
    const Eigen::MatrixXcd full = chain * sigma * chain.adjoint();
    for (int i = 0; i < n; ++i) CHECK(fast[i] == Catch::Approx(full(i, i).real()).epsilon(1e-10));
  }
}

TEST_CASE("white-noise closed form from the general covariance", "[analysis]") {
  const double sigma2 = 2.5;
  const int bins = 170;
  for (const auto& p : {CosetPattern(18, {0, 1, 4, 7, 9}), CosetPattern(18, {0, 1, 2, 4, 7, 9, 12, 14}),
                        CosetPattern(10, {0, 1, 2, 5})}) {
    const SystemMatrix sys(p);
    for (int tau : {1, 20, 100}) {
      const auto sigma = analytical_gaussian_covariance(white_noise_moments(sigma2, p.period(), bins, tau), p);
      const auto var = propagate_variance(sigma, sys, bins);
      const auto cf = whitenoise_variance_closed_form(p, sigma2, tau);
      REQUIRE(cf.finite);
      for (double v : var) CHECK(v == Catch::Approx(cf.value).epsilon(1e-10));
    }
  }
}

TEST_CASE("analytical NMSE from lag multiplicities", "[analysis]") {
  const CosetPattern p(18, {0, 1, 4, 7, 9});
  // Count ordered mark pairs per lag by hand.
  std::vector<int> gamma(18, 0);
  for (int a : p.marks()) {
    for (int b : p.marks()) ++gamma[((a - b) % 18 + 18) % 18];
  }
  double acc = 1.0 / p.size();
  for (int k = 1; k < 18; ++k) acc += 1.0 / gamma[k];
  for (int tau : {1, 20, 100}) CHECK(analytical_nmse(p, tau) == Catch::Approx(acc / tau).epsilon(1e-14));

  const auto bad = whitenoise_variance_closed_form(CosetPattern(6, {0, 1, 2}), 1.0, 10);
  CHECK_FALSE(bad.finite);
  CHECK(std::isinf(bad.value));
  CHECK_THROWS_AS(whitenoise_variance_closed_form(p, 1.0, 0), ConfigError);
}

TEST_CASE("NAP matches a direct transform", "[analysis][oracle]") {
  ScenarioConfig cfg;
  cfg.period = 4;
  cfg.bins = 15;
  cfg.fir_taps = 20;
  cfg.pattern = CosetPattern(4, {0, 1, 2});
  cfg.noise_dbm = 1.0;
  cfg.users.push_back({0.1, 0.3, 10.0, {}});
  cfg.tau = 5;
  SynthesisOptions opts;
  opts.retain_full_rate = true;
  const auto obs = synthesize_observations(cfg, 4, 0, opts);
  const auto nap = nyquist_ap(obs.sensors);
  CHECK(nap.kind == EstimatorKind::nap);
  std::vector<double> ref(60, 0.0);
  for (const auto& s : obs.sensors) {
    const auto x = direct_dft(s.full);
    for (int q = 0; q < 60; ++q) ref[q] += std::norm(x[q]) / (60.0 * 5.0);
  }
  for (int q = 0; q < 60; ++q) {
    CHECK(nap.values[q] >= 0.0);
    CHECK(nap.values[q] == Catch::Approx(ref[q]).epsilon(1e-10));
  }
  const auto no_full = synthesize_observations(cfg, 4, 0);
  CHECK_THROWS_AS(nyquist_ap(no_full.sensors), ConfigError);
}

TEST_CASE("NMSE definition", "[analysis]") {
  const std::vector<double> ref{1.0, 2.0, 2.0};
  const std::vector<double> est{1.0, 3.0, 1.0};
  CHECK(nmse(est, ref) == Catch::Approx(2.0 / 9.0));
  CHECK(nmse(ref, ref) == 0.0);
  CHECK_THROWS_AS(nmse(est, std::vector<double>(3, 0.0)), ConfigError);
  CHECK_THROWS_AS(nmse(est, std::vector<double>(2, 1.0)), ConfigError);
}

TEST_CASE("detector windows and block statistics", "[analysis]") {
  DetectorConfig cfg;
  cfg.avg_width = 11;
  cfg.active = {{0.1, 0.14, 121}};
  cfg.quiet = {0.6, 0.7, 33};
  const int grid = 3060;
  const auto w = detector_windows(cfg, grid);
  REQUIRE(w.active.size() == 1);
  CHECK(w.active[0].size() == 121);
  CHECK(w.active[0].front() == static_cast<int>(std::lround(0.12 * grid - 60.5)));
  for (std::size_t k = 1; k < w.active[0].size(); ++k) CHECK(w.active[0][k] == w.active[0][k - 1] + 1);

  std::vector<double> values(grid);
  std::iota(values.begin(), values.end(), 0.0);
  const auto blocks = block_statistics(values, w.active[0], 11);
  REQUIRE(blocks.size() == 11);
  CHECK(blocks[0] == Catch::Approx(w.active[0][5]));

  auto overlap = cfg;
  overlap.quiet = {0.13, 0.2, 33};
  CHECK_THROWS_AS(detector_windows(overlap, grid), ConfigError);
  auto wrap = cfg;
  wrap.quiet = {0.95, 1.11, 33};
  CHECK_THROWS_AS(detector_windows(wrap, grid), ConfigError);
  auto ragged = cfg;
  ragged.quiet.points = 30;
  CHECK_THROWS_AS(detector_windows(ragged, grid), ConfigError);

  const auto around = band_window({0.99, 1.01, 11}, 1000);
  CHECK(around.front() == 995);
  CHECK(around.back() == 5);
}

TEST_CASE("ROC curve properties", "[analysis][property]") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> coarse(0, 6);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> active;
    std::vector<double> quiet;
    const double shift = 0.2 * trial;
    const bool ties = trial % 3 == 0;
    for (int k = 0; k < 80 + trial; ++k) active.push_back(ties ? coarse(gen) + 1 : nd(gen) + shift);
    for (int k = 0; k < 60; ++k) quiet.push_back(ties ? coarse(gen) : nd(gen));
    const auto roc = build_roc(active, quiet);
    CHECK(roc.pfa.front() == 1.0);
    CHECK(roc.pd.front() == 1.0);
    CHECK(roc.pfa.back() == 0.0);
    CHECK(roc.pd.back() == 0.0);
    for (std::size_t k = 1; k < roc.pfa.size(); ++k) {
      CHECK(roc.pfa[k] <= roc.pfa[k - 1]);
      CHECK(roc.pd[k] <= roc.pd[k - 1]);
      CHECK(roc.thresholds[k] > roc.thresholds[k - 1]);
    }
    // Brute-force Mann-Whitney over all pairs.
    double wins = 0.0;
    for (double a : active) {
      for (double q : quiet) wins += a > q ? 1.0 : (a == q ? 0.5 : 0.0);
    }
    CHECK(roc.auc == Catch::Approx(wins / (active.size() * quiet.size())).epsilon(1e-12));
    // Trapezoid area under the empirical curve is the same quantity.
    double area = 0.0;
    for (std::size_t k = 1; k < roc.pfa.size(); ++k) {
      area += (roc.pfa[k - 1] - roc.pfa[k]) * 0.5 * (roc.pd[k - 1] + roc.pd[k]);
    }
    CHECK(area == Catch::Approx(roc.auc).epsilon(1e-12));
  }
  CHECK_THROWS_AS(build_roc({}, {1.0}), ConfigError);
}

TEST_CASE("noise-only detection is at chance level", "[analysis]") {
  ScenarioConfig cfg;
  cfg.period = 18;
  cfg.bins = 170;
  cfg.pattern = CosetPattern(18, {0, 1, 4, 7, 9});
  cfg.noise_dbm = 11.0;
  cfg.tau = 10;
  DetectorConfig det;
  det.active = {{0.205, 0.245, 121}, {0.155, 0.195, 121}, {0.105, 0.145, 121}};
  det.quiet = {0.615, 0.735, 363};
  const auto w = detector_windows(det, cfg.grid());
  std::vector<double> active;
  std::vector<double> quiet;
  for (int run = 0; run < 1000; ++run) {
    const auto obs = synthesize_observations(cfg, 31, run);
    const auto cap = estimate_cap(obs.sensors, *cfg.pattern);
    const auto s = detector_statistics(cap.values, w, det.avg_width);
    active.insert(active.end(), s.active.begin(), s.active.end());
    quiet.insert(quiet.end(), s.quiet.begin(), s.quiet.end());
  }
  CHECK(std::abs(build_roc(active, quiet).auc - 0.5) < 0.05);
}
