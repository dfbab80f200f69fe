#pragma once

#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cosetpsd/error.hpp"
#include "cosetpsd/pattern.hpp"
#include "cosetpsd/ruler.hpp"

namespace cosetpsd {

using cdouble = std::complex<double>;

/// Absolute tolerance for rank and unitarity checks; every structured matrix
/// here has exact-integer or unit-modulus entries.
inline constexpr double kStructureTolerance = 1e-10;

/// N x N bin-modulation matrix, [B]_{n,i} = exp(j 2 pi n i / N) / N.
inline Eigen::MatrixXcd modulation_matrix(int period) {
  if (period < 1) throw ConfigError("period must be positive");
  Eigen::MatrixXcd b(period, period);
  for (int n = 0; n < period; ++n) {
    for (int i = 0; i < period; ++i) {
      // Reduce n*i mod N first so the phase argument stays small.
      const double phase = 2.0 * std::numbers::pi * ((n * i) % period) / period;
      b(n, i) = std::polar(1.0 / period, phase);
    }
  }
  return b;
}

/// N^2 x N repetition matrix: row q is row ((q - floor(q/N)) mod N) of I_N, so
/// that vec(R) = T r for a circulant R with first column r.
inline Eigen::MatrixXd repetition_matrix(int period) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(period * period, period);
  for (int q = 0; q < period * period; ++q) {
    t(q, (q - q / period) % period) = 1.0;
  }
  return t;
}

/// M x N selection matrix picking the rows of I_N listed in the pattern.
inline Eigen::MatrixXd selection_matrix(const CosetPattern& pattern) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(pattern.size(), pattern.period());
  for (int m = 0; m < pattern.size(); ++m) c(m, pattern[m]) = 1.0;
  return c;
}

inline Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

inline int numerical_rank(const Eigen::MatrixXd& a, double tol = kStructureTolerance) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  int rank = 0;
  for (Eigen::Index k = 0; k < s.size(); ++k) rank += s(k) > tol ? 1 : 0;
  return rank;
}

/// The compressed system matrix R_c = (C kron C) T in index form: row q of
/// vec(R_y) (q = M m' + m, entry (m, m')) observes lag (n_m - n_m') mod N.
/// gamma[k] counts the rows observing lag k, i.e. the diagonal of R_c^T R_c.
class SystemMatrix {
 public:
  explicit SystemMatrix(CosetPattern pattern) : pattern_(std::move(pattern)) {
    const int n = pattern_.period();
    const int m = pattern_.size();
    row_map_.resize(static_cast<std::size_t>(m * m));
    gamma_.assign(static_cast<std::size_t>(n), 0);
    for (int col = 0; col < m; ++col) {
      for (int row = 0; row < m; ++row) {
        const int lag = ((pattern_[row] - pattern_[col]) % n + n) % n;
        row_map_[static_cast<std::size_t>(m * col + row)] = lag;
        ++gamma_[static_cast<std::size_t>(lag)];
      }
    }
  }

  const CosetPattern& pattern() const noexcept { return pattern_; }
  int period() const noexcept { return pattern_.period(); }
  int marks() const noexcept { return pattern_.size(); }
  const std::vector<int>& row_map() const noexcept { return row_map_; }
  const std::vector<int>& gamma() const noexcept { return gamma_; }

  /// Lag observed by covariance entry (row, col).
  int lag(int row, int col) const { return row_map_[static_cast<std::size_t>(marks() * col + row)]; }

  std::vector<int> missing_lags() const {
    std::vector<int> out;
    for (int k = 0; k < period(); ++k) {
      if (gamma_[static_cast<std::size_t>(k)] == 0) out.push_back(k);
    }
    return out;
  }

  bool identifiable() const { return missing_lags().empty(); }

  void require_identifiable() const {
    auto missing = missing_lags();
    if (!missing.empty()) {
      throw IdentifiabilityError("pattern {" + pattern_.to_string() + "} with N=" +
                                     std::to_string(period()) +
                                     " is not a circular sparse ruler; unrealized lags: " +
                                     detail::join(missing),
                                 std::move(missing));
    }
  }

  /// Materialized M^2 x N matrix, built literally as (C kron C) T.
  Eigen::MatrixXd dense() const {
    const auto c = selection_matrix(pattern_);
    return kronecker(c, c) * repetition_matrix(period());
  }

 private:
  CosetPattern pattern_;
  std::vector<int> row_map_;
  std::vector<int> gamma_;
};

inline SystemMatrix build_system_matrix(const CosetPattern& pattern) { return SystemMatrix(pattern); }

/// Full column rank of R_c, decided from gamma alone.
inline bool check_identifiability(const CosetPattern& pattern) {
  return SystemMatrix(pattern).identifiable();
}

/// Stacked correlated-bins system Psi = [(C_0 kron C_0); ...; (C_{Z-1} kron C_{Z-1})]
/// in index form. pair_counts[N g + f] counts the groups observing the ordered
/// coset pair (f, g), which is the diagonal of Psi^T Psi.
class PsiMatrix {
 public:
  explicit PsiMatrix(PatternFamily family) : family_(std::move(family)) {
    const int n = family_.period();
    pair_counts_.assign(static_cast<std::size_t>(n * n), 0);
    for (const auto& p : family_.patterns()) {
      for (int g : p.marks()) {
        for (int f : p.marks()) ++pair_counts_[static_cast<std::size_t>(n * g + f)];
      }
    }
  }

  const PatternFamily& family() const noexcept { return family_; }
  int period() const noexcept { return family_.period(); }
  int groups() const noexcept { return family_.groups(); }
  const std::vector<int>& pair_counts() const noexcept { return pair_counts_; }
  int pair_count(int f, int g) const { return pair_counts_[static_cast<std::size_t>(period() * g + f)]; }

  /// Flattened indices N g + f of ordered pairs no group observes.
  std::vector<int> uncovered() const {
    std::vector<int> out;
    for (std::size_t q = 0; q < pair_counts_.size(); ++q) {
      if (pair_counts_[q] == 0) out.push_back(static_cast<int>(q));
    }
    return out;
  }

  bool identifiable() const { return uncovered().empty(); }

  void require_identifiable() const {
    auto missing = uncovered();
    if (missing.empty()) return;
    std::string pairs;
    for (std::size_t k = 0; k < missing.size(); ++k) {
      if (k) pairs += " ";
      pairs += "(" + std::to_string(missing[k] % period()) + "," + std::to_string(missing[k] / period()) + ")";
    }
    throw IdentifiabilityError("pattern family leaves coset pairs unobserved: " + pairs, std::move(missing));
  }

  Eigen::MatrixXd dense() const {
    const int n = period();
    const int m = family_.marks_per_pattern();
    Eigen::MatrixXd psi(m * m * groups(), n * n);
    for (int z = 0; z < groups(); ++z) {
      const auto c = selection_matrix(family_[z]);
      psi.middleRows(z * m * m, m * m) = kronecker(c, c);
    }
    return psi;
  }

 private:
  PatternFamily family_;
  std::vector<int> pair_counts_;
};

inline PsiMatrix build_psi(const PatternFamily& family) { return PsiMatrix(family); }

}  // namespace cosetpsd
