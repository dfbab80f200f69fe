#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cosetpsd/error.hpp"
#include "cosetpsd/fft.hpp"
#include "cosetpsd/parallel.hpp"
#include "cosetpsd/pattern.hpp"
#include "cosetpsd/sensing.hpp"
#include "cosetpsd/sysmat.hpp"

namespace cosetpsd {

/// Per-grid-point M x M Hermitian covariances of the compressed coset spectra,
/// stored as packed lower triangles (entry (r, c), r >= c, at r(r+1)/2 + c).
class CovarianceStack {
 public:
  CovarianceStack(CosetPattern pattern, int bins, int count)
      : pattern_(std::move(pattern)), bins_(bins), count_(count),
        packed_(static_cast<std::size_t>(bins) * packed_size(pattern_.size())) {}

  /// Wraps exact (population) covariances, one M x M matrix per grid point. The
  /// lower triangle is taken as authoritative.
  static CovarianceStack from_matrices(const CosetPattern& pattern, const std::vector<Eigen::MatrixXcd>& mats,
                                       int count = 1) {
    CovarianceStack s(pattern, static_cast<int>(mats.size()), count);
    const int m = pattern.size();
    for (int l = 0; l < s.bins(); ++l) {
      const auto& r = mats[static_cast<std::size_t>(l)];
      if (r.rows() != m || r.cols() != m) throw ConfigError("covariance matrix size does not match pattern");
      for (int row = 0; row < m; ++row) {
        for (int col = 0; col <= row; ++col) s.packed_at(l, row, col) = r(row, col);
      }
    }
    return s;
  }

  static constexpr std::size_t packed_size(int m) { return static_cast<std::size_t>(m) * (m + 1) / 2; }

  const CosetPattern& pattern() const noexcept { return pattern_; }
  int bins() const noexcept { return bins_; }
  int marks() const noexcept { return pattern_.size(); }
  int count() const noexcept { return count_; }

  cdouble operator()(int l, int row, int col) const {
    return row >= col ? packed_at(l, row, col) : std::conj(packed_at(l, col, row));
  }

  Eigen::MatrixXcd matrix(int l) const {
    const int m = marks();
    Eigen::MatrixXcd r(m, m);
    for (int row = 0; row < m; ++row) {
      for (int col = 0; col < m; ++col) r(row, col) = (*this)(l, row, col);
    }
    return r;
  }

  cdouble& packed_at(int l, int row, int col) {
    return packed_[static_cast<std::size_t>(l) * packed_size(marks()) + static_cast<std::size_t>(row * (row + 1) / 2 + col)];
  }
  const cdouble& packed_at(int l, int row, int col) const {
    return packed_[static_cast<std::size_t>(l) * packed_size(marks()) + static_cast<std::size_t>(row * (row + 1) / 2 + col)];
  }

  std::vector<cdouble>& packed() noexcept { return packed_; }
  const std::vector<cdouble>& packed() const noexcept { return packed_; }

 private:
  CosetPattern pattern_;
  int bins_;
  int count_;
  std::vector<cdouble> packed_;
};

namespace detail {

/// Row of each pattern mark inside a sensor's observed cosets.
inline std::vector<int> pattern_rows(const SensorObservation& s, const CosetPattern& pattern) {
  std::vector<int> rows(static_cast<std::size_t>(pattern.size()));
  for (int m = 0; m < pattern.size(); ++m) {
    const int r = s.row_of(pattern[m]);
    if (r < 0) {
      throw ConfigError("sensor " + std::to_string(s.t) + " did not observe coset " + std::to_string(pattern[m]));
    }
    rows[static_cast<std::size_t>(m)] = r;
  }
  return rows;
}

inline std::vector<cdouble> outer_products(const SensorObservation& s, const CosetPattern& pattern, int bins) {
  const auto rows = pattern_rows(s, pattern);
  const int m = pattern.size();
  std::vector<cdouble> acc(static_cast<std::size_t>(bins) * CovarianceStack::packed_size(m));
  std::size_t k = 0;
  for (int l = 0; l < bins; ++l) {
    for (int r = 0; r < m; ++r) {
      const cdouble yr = s.dtft(rows[static_cast<std::size_t>(r)], l);
      for (int c = 0; c <= r; ++c) acc[k++] = yr * std::conj(s.dtft(rows[static_cast<std::size_t>(c)], l));
    }
  }
  return acc;
}

}  // namespace detail

/// (1/tau) sum_t y_t(theta) y_t(theta)^H at every grid point, restricted to the
/// pattern's cosets. The sum over sensors is a pairwise tree, so the rounding
/// depends only on the sensor count.
inline CovarianceStack sample_covariance(std::span<const SensorObservation* const> sensors,
                                         const CosetPattern& pattern) {
  if (sensors.empty()) throw ConfigError("sample covariance needs at least one observation (tau = 0)");
  const int bins = static_cast<int>(sensors.front()->dtft.cols());
  for (const auto* s : sensors) {
    if (s->dtft.cols() != bins) throw ConfigError("observations disagree on the number of bins");
  }
  auto sum = tree_sum<std::vector<cdouble>>(
      0, sensors.size(), [&](std::size_t k) { return detail::outer_products(*sensors[k], pattern, bins); },
      [](std::vector<cdouble> a, const std::vector<cdouble>& b) {
        for (std::size_t q = 0; q < a.size(); ++q) a[q] += b[q];
        return a;
      });
  CovarianceStack stack(pattern, bins, static_cast<int>(sensors.size()));
  const double inv = 1.0 / static_cast<double>(sensors.size());
  for (std::size_t q = 0; q < sum.size(); ++q) stack.packed()[q] = sum[q] * inv;
  return stack;
}

inline CovarianceStack sample_covariance(std::span<const SensorObservation> sensors, const CosetPattern& pattern) {
  std::vector<const SensorObservation*> ptrs;
  ptrs.reserve(sensors.size());
  for (const auto& s : sensors) ptrs.push_back(&s);
  return sample_covariance(std::span<const SensorObservation* const>(ptrs), pattern);
}

/// Least-squares estimate of the first column of the circulant coset
/// correlation matrix, one length-N column per grid point.
struct CosetCorrelationVector {
  int period = 0;
  Eigen::MatrixXcd values;  // N x L

  int bins() const noexcept { return static_cast<int>(values.cols()); }
};

/// Since R_c^T R_c = diag(gamma), the LS solution averages the gamma_k
/// covariance entries that observe each lag k.
inline CosetCorrelationVector ls_reconstruct_rbar(const CovarianceStack& stack, const SystemMatrix& sys) {
  if (!(stack.pattern() == sys.pattern())) throw ConfigError("covariance stack and system matrix use different patterns");
  sys.require_identifiable();
  const int n = sys.period();
  const int m = sys.marks();
  CosetCorrelationVector out;
  out.period = n;
  out.values = Eigen::MatrixXcd::Zero(n, stack.bins());
  for (int l = 0; l < stack.bins(); ++l) {
    for (int row = 0; row < m; ++row) {
      // Entries (row, col) and (col, row) observe lags k and N - k with conjugate values.
      out.values(sys.lag(row, row), l) += stack.packed_at(l, row, row);
      for (int col = 0; col < row; ++col) {
        const cdouble v = stack.packed_at(l, row, col);
        out.values(sys.lag(row, col), l) += v;
        out.values(sys.lag(col, row), l) += std::conj(v);
      }
    }
    for (int k = 0; k < n; ++k) out.values(k, l) /= static_cast<double>(sys.gamma()[static_cast<std::size_t>(k)]);
  }
  return out;
}

enum class EstimatorKind { cap_ub, cap_cb, nap };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::cap_ub: return "CAP-UB";
    case EstimatorKind::cap_cb: return "CAP-CB";
    case EstimatorKind::nap: return "NAP";
  }
  return "?";
}

/// Estimate of the power spectrum P_x on the full N*L grid; entry l + i L is
/// the value at l/(N L) + i/N, on the scale where white noise of variance s2
/// has level s2.
struct Periodogram {
  std::vector<double> values;
  EstimatorKind kind = EstimatorKind::cap_ub;
  std::string pattern;  // pattern or family, as text
  int tau = 0;
  int clusters = 1;
  double max_imag_residue = 0.0;  // largest |Im| / |value| dropped on assembly

  int grid() const noexcept { return static_cast<int>(values.size()); }

  int negative_count() const {
    return static_cast<int>(std::count_if(values.begin(), values.end(), [](double v) { return v < 0.0; }));
  }

  double theta(int q) const { return static_cast<double>(q) / grid(); }
};

namespace detail {

/// Writes Re(sum_k s[k] exp(-j 2 pi i k / N)) * scale into values[l + i L].
inline void assemble_column(const Eigen::VectorXcd& lag_sums, int l, int bins, double scale, Periodogram& out) {
  const int n = static_cast<int>(lag_sums.size());
  fft::cvec in(lag_sums.data(), lag_sums.data() + n);
  const auto diag = fft::forward(in);
  for (int i = 0; i < n; ++i) {
    const cdouble d = diag[static_cast<std::size_t>(i)] * scale;
    out.values[static_cast<std::size_t>(l + i * bins)] = d.real();
    const double mag = std::abs(d);
    if (mag > 0.0) out.max_imag_residue = std::max(out.max_imag_residue, std::abs(d.imag()) / mag);
  }
}

}  // namespace detail

/// CAP from the coset correlation vectors: the diagonal of N^2 B^H R_xbar B at
/// bin i equals N sum_k r[k] exp(-j 2 pi i k / N), divided by N L.
inline Periodogram assemble_cap(const CosetCorrelationVector& rbar) {
  const int n = rbar.period;
  const int bins = rbar.bins();
  Periodogram out;
  out.values.assign(static_cast<std::size_t>(n * bins), 0.0);
  const double scale = static_cast<double>(n) / (static_cast<double>(n) * bins);
  for (int l = 0; l < bins; ++l) detail::assemble_column(rbar.values.col(l), l, bins, scale, out);
  return out;
}

/// The full single-cluster pipeline: covariance, LS inversion, assembly.
inline Periodogram estimate_cap(std::span<const SensorObservation> sensors, const CosetPattern& pattern) {
  const SystemMatrix sys(pattern);
  sys.require_identifiable();
  auto p = assemble_cap(ls_reconstruct_rbar(sample_covariance(sensors, pattern), sys));
  p.kind = EstimatorKind::cap_ub;
  p.pattern = pattern.to_string();
  p.tau = static_cast<int>(sensors.size());
  return p;
}

struct MulticlusterResult {
  std::vector<Periodogram> per_cluster;
  Periodogram averaged;
};

/// Mean of the per-cluster CAPs. All clusters must use the same pattern.
inline MulticlusterResult estimate_multicluster(std::span<const std::span<const SensorObservation>> clusters,
                                                const CosetPattern& pattern) {
  if (clusters.empty()) throw ConfigError("no clusters given");
  MulticlusterResult res;
  for (const auto& c : clusters) {
    if (c.empty()) throw ConfigError("empty cluster");
    res.per_cluster.push_back(estimate_cap(c, pattern));
  }
  res.averaged = res.per_cluster.front();
  res.averaged.clusters = static_cast<int>(clusters.size());
  const double inv = 1.0 / static_cast<double>(clusters.size());
  for (std::size_t q = 0; q < res.averaged.values.size(); ++q) {
    double acc = 0.0;
    for (const auto& p : res.per_cluster) acc += p.values[q];
    res.averaged.values[q] = acc * inv;
  }
  for (const auto& p : res.per_cluster) {
    res.averaged.max_imag_residue = std::max(res.averaged.max_imag_residue, p.max_imag_residue);
  }
  return res;
}

/// Multi-cluster CAP for the first `tau` sensors of every cluster in `obs`.
inline MulticlusterResult estimate_multicluster(const CosetObservationSet& obs, const CosetPattern& pattern,
                                                int tau = -1) {
  std::vector<std::span<const SensorObservation>> spans;
  for (int d = 0; d < obs.clusters; ++d) spans.push_back(obs.cluster(d, tau));
  return estimate_multicluster(std::span<const std::span<const SensorObservation>>(spans), pattern);
}

/// LS estimate of the full N x N coset correlation matrix at every grid point
/// from per-group stacks: each entry (f, g) is the mean of the group
/// covariance entries that observe the ordered pair.
inline std::vector<Eigen::MatrixXcd> ls_reconstruct_rxbar(const std::vector<CovarianceStack>& groups,
                                                          const PsiMatrix& psi) {
  psi.require_identifiable();
  if (static_cast<int>(groups.size()) != psi.groups()) throw ConfigError("need one covariance stack per group");
  const int n = psi.period();
  const int bins = groups.front().bins();
  for (int z = 0; z < psi.groups(); ++z) {
    if (!(groups[static_cast<std::size_t>(z)].pattern() == psi.family()[z])) {
      throw ConfigError("group " + std::to_string(z) + " stack does not match the family pattern");
    }
    if (groups[static_cast<std::size_t>(z)].bins() != bins) throw ConfigError("group stacks disagree on bins");
  }
  std::vector<Eigen::MatrixXcd> out(static_cast<std::size_t>(bins), Eigen::MatrixXcd::Zero(n, n));
  for (int z = 0; z < psi.groups(); ++z) {
    const auto& stack = groups[static_cast<std::size_t>(z)];
    const auto& pat = stack.pattern();
    for (int l = 0; l < bins; ++l) {
      auto& r = out[static_cast<std::size_t>(l)];
      for (int a = 0; a < pat.size(); ++a) {
        for (int b = 0; b < pat.size(); ++b) r(pat[a], pat[b]) += stack(l, a, b);
      }
    }
  }
  for (auto& r : out) {
    for (int g = 0; g < n; ++g) {
      for (int f = 0; f < n; ++f) r(f, g) /= static_cast<double>(psi.pair_count(f, g));
    }
  }
  return out;
}

/// CAP from full coset correlation matrices: the diagonal of N^2 B^H R B at bin
/// i is sum_k s[k] exp(-j 2 pi i k / N) with s[k] the sum of R's k-th circular
/// diagonal.
inline Periodogram assemble_cap_full(const std::vector<Eigen::MatrixXcd>& rxbar) {
  const int bins = static_cast<int>(rxbar.size());
  if (bins == 0) throw ConfigError("no grid points");
  const int n = static_cast<int>(rxbar.front().rows());
  Periodogram out;
  out.values.assign(static_cast<std::size_t>(n * bins), 0.0);
  const double scale = 1.0 / (static_cast<double>(n) * bins);
  Eigen::VectorXcd s(n);
  for (int l = 0; l < bins; ++l) {
    const auto& r = rxbar[static_cast<std::size_t>(l)];
    s.setZero();
    for (int g = 0; g < n; ++g) {
      for (int f = 0; f < n; ++f) s((f - g + n) % n) += r(f, g);
    }
    detail::assemble_column(s, l, bins, scale, out);
  }
  return out;
}

/// Correlated-bins CAP: per-group sample covariances over the sensors of each
/// group, Psi-LS reconstruction, assembly.
inline Periodogram estimate_correlated_bins(std::span<const SensorObservation> sensors, const PsiMatrix& psi) {
  psi.require_identifiable();
  std::vector<std::vector<const SensorObservation*>> members(static_cast<std::size_t>(psi.groups()));
  for (const auto& s : sensors) {
    if (s.group < 0 || s.group >= psi.groups()) throw ConfigError("sensor group out of range");
    members[static_cast<std::size_t>(s.group)].push_back(&s);
  }
  std::vector<CovarianceStack> stacks;
  int per_group = 0;
  for (int z = 0; z < psi.groups(); ++z) {
    const auto& mem = members[static_cast<std::size_t>(z)];
    if (mem.empty()) throw ConfigError("group " + std::to_string(z) + " has no sensors");
    stacks.push_back(sample_covariance(std::span<const SensorObservation* const>(mem), psi.family()[z]));
    per_group = static_cast<int>(mem.size());
  }
  auto p = assemble_cap_full(ls_reconstruct_rxbar(stacks, psi));
  p.kind = EstimatorKind::cap_cb;
  p.pattern = psi.family().to_string();
  p.tau = per_group;
  return p;
}

}  // namespace cosetpsd
