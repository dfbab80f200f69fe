#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cosetpsd/error.hpp"
#include "cosetpsd/estimator.hpp"
#include "cosetpsd/fft.hpp"
#include "cosetpsd/parallel.hpp"
#include "cosetpsd/sensing.hpp"
#include "cosetpsd/sysmat.hpp"

namespace cosetpsd {

/// Nyquist-rate averaged periodogram (1/(N L tau)) sum_t |X_t|^2 from the
/// retained full-rate samples.
inline Periodogram nyquist_ap(std::span<const SensorObservation> sensors) {
  if (sensors.empty()) throw ConfigError("NAP needs at least one observation");
  const std::size_t grid = sensors.front().full.size();
  if (grid == 0) throw ConfigError("observations carry no full-rate samples");
  for (const auto& s : sensors) {
    if (s.full.size() != grid) throw ConfigError("full-rate observations differ in length");
  }
  auto sum = tree_sum<std::vector<double>>(
      0, sensors.size(),
      [&](std::size_t k) {
        const auto spectrum = fft::forward(sensors[k].full);
        std::vector<double> p(grid);
        for (std::size_t q = 0; q < grid; ++q) p[q] = std::norm(spectrum[q]);
        return p;
      },
      [](std::vector<double> a, const std::vector<double>& b) {
        for (std::size_t q = 0; q < a.size(); ++q) a[q] += b[q];
        return a;
      });
  Periodogram out;
  out.kind = EstimatorKind::nap;
  out.tau = static_cast<int>(sensors.size());
  out.values.resize(grid);
  const double scale = 1.0 / (static_cast<double>(grid) * static_cast<double>(sensors.size()));
  for (std::size_t q = 0; q < grid; ++q) out.values[q] = sum[q] * scale;
  return out;
}

/// NAP averaged over the first `tau` sensors of each cluster, cluster by cluster.
inline Periodogram nyquist_ap_multicluster(const CosetObservationSet& obs, int tau = -1) {
  Periodogram avg;
  for (int d = 0; d < obs.clusters; ++d) {
    auto p = nyquist_ap(obs.cluster(d, tau));
    if (d == 0) {
      avg = std::move(p);
    } else {
      for (std::size_t q = 0; q < avg.values.size(); ++q) avg.values[q] += p.values[q];
    }
  }
  for (auto& v : avg.values) v /= obs.clusters;
  avg.clusters = obs.clusters;
  return avg;
}

/// sum (est - ref)^2 / sum ref^2 over the grid.
inline double nmse(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size()) throw ConfigError("nmse inputs live on different grids");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t q = 0; q < estimate.size(); ++q) {
    const double e = estimate[q] - reference[q];
    num += e * e;
    den += reference[q] * reference[q];
  }
  if (den == 0.0) throw ConfigError("nmse reference is identically zero");
  return num / den;
}

inline double nmse(const Periodogram& estimate, const Periodogram& reference) {
  return nmse(std::span<const double>(estimate.values), std::span<const double>(reference.values));
}

/// Second-order statistics of the per-bin spectra X_{t,i} at one grid point:
/// second(t, i, t2, b) = E[X_{t,i} conj(X_{t2,b})] and, for improper signals,
/// pseudo(t, i, t2, b) = E[X_{t,i} X_{t2,b}]. A null pseudo means circular.
struct GaussianMoments {
  int tau = 1;
  std::function<cdouble(int, int, int, int)> second;
  std::function<cdouble(int, int, int, int)> pseudo;
};

/// Moments of i.i.d. CN(0, sigma2) noise over an N*L grid: the DFT bins are
/// uncorrelated with variance N L sigma2.
inline GaussianMoments white_noise_moments(double sigma2, int period, int bins, int tau) {
  const double v = sigma2 * period * bins;
  GaussianMoments m;
  m.tau = tau;
  m.second = [v](int t, int i, int t2, int b) { return (t == t2 && i == b) ? cdouble(v) : cdouble(0.0); };
  return m;
}

/// Covariance of the entries of the sample coset covariance for Gaussian bins,
/// row M m' + m and column M a' + a holding
/// E[(R[m,m'] - E R[m,m']) conj(R[a,a'] - E R[a,a'])]. The quadruple sum over
/// bins factors into products of F K F^H blocks with F[m,i] = exp(j 2 pi n_m i / N).
inline Eigen::MatrixXcd analytical_gaussian_covariance(const GaussianMoments& mom, const CosetPattern& pattern) {
  if (!mom.second) throw ConfigError("moments need a second-order callback");
  const int n = pattern.period();
  const int m = pattern.size();
  const int tau = mom.tau;
  Eigen::MatrixXcd f(m, n);
  for (int r = 0; r < m; ++r) {
    for (int i = 0; i < n; ++i) f(r, i) = std::polar(1.0, 2.0 * std::numbers::pi * ((pattern[r] * i) % n) / n);
  }
  Eigen::MatrixXcd sigma = Eigen::MatrixXcd::Zero(m * m, m * m);
  Eigen::MatrixXcd k(n, n);
  for (int t = 0; t < tau; ++t) {
    for (int t2 = 0; t2 < tau; ++t2) {
      for (int i = 0; i < n; ++i) {
        for (int b = 0; b < n; ++b) k(i, b) = mom.second(t, i, t2, b);
      }
      const Eigen::MatrixXcd a = f * k * f.adjoint();  // a(m, a) = sum F[m,i] K[i,b] conj(F[a,b])
      Eigen::MatrixXcd g;
      if (mom.pseudo) {
        for (int i = 0; i < n; ++i) {
          for (int b = 0; b < n; ++b) k(i, b) = mom.pseudo(t, i, t2, b);
        }
        g = f * k * f.transpose();  // g(m, a') = sum F[m,i] Q[i,b'] F[a',b']
      }
      if (a.isZero(0.0) && (!mom.pseudo || g.isZero(0.0))) continue;
      for (int mp = 0; mp < m; ++mp) {
        for (int mm = 0; mm < m; ++mm) {
          const int row = m * mp + mm;
          for (int ap = 0; ap < m; ++ap) {
            for (int aa = 0; aa < m; ++aa) {
              cdouble v = a(mm, aa) * std::conj(a(mp, ap));
              if (mom.pseudo) v += g(mm, ap) * std::conj(g(mp, aa));
              sigma(row, m * ap + aa) += v;
            }
          }
        }
      }
    }
  }
  const double scale = 1.0 / (std::pow(static_cast<double>(n), 4) * static_cast<double>(tau) * tau);
  return sigma * scale;
}

/// Per-bin CAP variance at one grid point implied by the covariance `sigma` of
/// vec(R_y): first the LS map (R_c^T R_c)^{-1} R_c^T on both sides, then the
/// bin transform. Returns N values (bin i at offset i/N).
inline std::vector<double> propagate_variance(const Eigen::MatrixXcd& sigma, const SystemMatrix& sys, int bins) {
  const int n = sys.period();
  const int mm = sys.marks() * sys.marks();
  if (sigma.rows() != mm || sigma.cols() != mm) throw ConfigError("covariance size does not match pattern");
  sys.require_identifiable();
  Eigen::MatrixXcd lag_cov = Eigen::MatrixXcd::Zero(n, n);
  for (int q = 0; q < mm; ++q) {
    for (int q2 = 0; q2 < mm; ++q2) lag_cov(sys.row_map()[q], sys.row_map()[q2]) += sigma(q, q2);
  }
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      lag_cov(a, b) /= static_cast<double>(sys.gamma()[a]) * sys.gamma()[b];
    }
  }
  std::vector<double> var(static_cast<std::size_t>(n));
  const double scale = 1.0 / (static_cast<double>(bins) * bins);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXcd e(n);
    for (int k = 0; k < n; ++k) e(k) = std::polar(1.0, -2.0 * std::numbers::pi * ((i * k) % n) / n);
    var[static_cast<std::size_t>(i)] = (e.transpose() * lag_cov * e.conjugate()).value().real() * scale;
  }
  return var;
}

struct ClosedFormVariance {
  double value = 0.0;
  bool finite = true;
};

/// CAP variance for white Gaussian noise: (sigma^4 / tau) sum_k 1/gamma_k,
/// infinite when some lag is never observed.
inline ClosedFormVariance whitenoise_variance_closed_form(const CosetPattern& pattern, double sigma2, int tau) {
  if (tau < 1) throw ConfigError("tau must be >= 1");
  const SystemMatrix sys(pattern);
  double acc = 0.0;
  for (int g : sys.gamma()) {
    if (g == 0) return {std::numeric_limits<double>::infinity(), false};
    acc += 1.0 / g;
  }
  return {sigma2 * sigma2 * acc / tau, true};
}

/// NMSE of the white-noise CAP against the true flat spectrum,
/// (1/tau)(1/M + sum over nonzero lags of 1/gamma).
inline double analytical_nmse(const CosetPattern& pattern, int tau) {
  return whitenoise_variance_closed_form(pattern, 1.0, tau).value;
}

/// Frequency ranges [lo, hi) in normalized frequency, with the number of grid
/// points evaluated in each (centred in the range).
struct DetectorBand {
  double lo = 0.0;
  double hi = 0.0;
  int points = 0;
};

struct DetectorConfig {
  int avg_width = 11;
  std::vector<DetectorBand> active;
  DetectorBand quiet;
};

/// Grid indices of `points` consecutive grid points centred on the band,
/// wrapping around [0, 1).
inline std::vector<int> band_window(const DetectorBand& band, int grid) {
  if (!(band.hi > band.lo)) throw ConfigError("detector band has non-positive width");
  const double centre = 0.5 * (band.lo + band.hi) * grid;
  const int first = static_cast<int>(std::lround(centre - 0.5 * band.points));
  std::vector<int> idx(static_cast<std::size_t>(band.points));
  for (int k = 0; k < band.points; ++k) idx[static_cast<std::size_t>(k)] = ((first + k) % grid + grid) % grid;
  return idx;
}

namespace detail {

inline bool ranges_overlap(const DetectorBand& a, const DetectorBand& b) {
  const auto wrap = [](double x) { return x - std::floor(x); };
  // Compare on the circle by testing each endpoint against the other interval.
  const auto inside = [&](double x, const DetectorBand& r) {
    const double off = wrap(x - r.lo);
    return off < r.hi - r.lo;
  };
  return inside(a.lo, b) || inside(b.lo, a);
}

}  // namespace detail

/// Indices of the active and quiet windows, checked for overlap and block
/// divisibility.
struct DetectorWindows {
  std::vector<std::vector<int>> active;
  std::vector<int> quiet;
};

inline DetectorWindows detector_windows(const DetectorConfig& cfg, int grid) {
  if (cfg.avg_width < 1) throw ConfigError("avg_width must be >= 1");
  if (cfg.active.empty()) throw ConfigError("detector needs at least one active band");
  std::vector<DetectorBand> all = cfg.active;
  all.push_back(cfg.quiet);
  for (std::size_t a = 0; a < all.size(); ++a) {
    if (all[a].points < cfg.avg_width || all[a].points % cfg.avg_width != 0) {
      throw ConfigError("band point counts must be positive multiples of avg_width");
    }
    for (std::size_t b = a + 1; b < all.size(); ++b) {
      if (detail::ranges_overlap(all[a], all[b])) throw ConfigError("detector bands overlap");
    }
  }
  DetectorWindows w;
  for (const auto& b : cfg.active) w.active.push_back(band_window(b, grid));
  w.quiet = band_window(cfg.quiet, grid);
  return w;
}

/// Block means over consecutive `width` points of each window.
inline std::vector<double> block_statistics(std::span<const double> values, const std::vector<int>& window,
                                            int width) {
  std::vector<double> out;
  for (std::size_t start = 0; start + static_cast<std::size_t>(width) <= window.size(); start += width) {
    double acc = 0.0;
    for (int k = 0; k < width; ++k) acc += values[static_cast<std::size_t>(window[start + k])];
    out.push_back(acc / width);
  }
  return out;
}

struct DetectorStatistics {
  std::vector<double> active;
  std::vector<double> quiet;
};

inline DetectorStatistics detector_statistics(std::span<const double> values, const DetectorWindows& w, int width) {
  DetectorStatistics s;
  for (const auto& win : w.active) {
    auto b = block_statistics(values, win, width);
    s.active.insert(s.active.end(), b.begin(), b.end());
  }
  s.quiet = block_statistics(values, w.quiet, width);
  return s;
}

/// Empirical ROC for the rule "statistic > threshold". Thresholds ascend from
/// -inf, giving (pfa, pd) = (1, 1), to +inf, giving (0, 0).
struct RocCurve {
  std::vector<double> thresholds;
  std::vector<double> pfa;
  std::vector<double> pd;
  double auc = 0.0;
  int avg_width = 0;
  std::size_t active_count = 0;
  std::size_t quiet_count = 0;
};

inline RocCurve build_roc(std::vector<double> active, std::vector<double> quiet) {
  if (active.empty() || quiet.empty()) throw ConfigError("ROC needs active and quiet statistics");
  std::sort(active.begin(), active.end());
  std::sort(quiet.begin(), quiet.end());
  RocCurve roc;
  roc.active_count = active.size();
  roc.quiet_count = quiet.size();
  std::vector<double> th;
  th.reserve(active.size() + quiet.size());
  std::merge(active.begin(), active.end(), quiet.begin(), quiet.end(), std::back_inserter(th));
  th.erase(std::unique(th.begin(), th.end()), th.end());

  const auto above = [](const std::vector<double>& v, double x) {
    return static_cast<double>(v.end() - std::upper_bound(v.begin(), v.end(), x)) / static_cast<double>(v.size());
  };
  roc.thresholds.push_back(-std::numeric_limits<double>::infinity());
  roc.pfa.push_back(1.0);
  roc.pd.push_back(1.0);
  for (double x : th) {
    roc.thresholds.push_back(x);
    roc.pfa.push_back(above(quiet, x));
    roc.pd.push_back(above(active, x));
  }
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.pfa.push_back(0.0);
  roc.pd.push_back(0.0);

  // Mann-Whitney: P(active > quiet) + 0.5 P(tie), by a merge over both sorted lists.
  double wins = 0.0;
  std::size_t lo = 0;
  std::size_t hi = 0;
  for (double a : active) {
    while (lo < quiet.size() && quiet[lo] < a) ++lo;
    hi = std::max(hi, lo);
    while (hi < quiet.size() && quiet[hi] == a) ++hi;
    wins += static_cast<double>(lo) + 0.5 * static_cast<double>(hi - lo);
  }
  roc.auc = wins / (static_cast<double>(active.size()) * static_cast<double>(quiet.size()));
  return roc;
}

}  // namespace cosetpsd
