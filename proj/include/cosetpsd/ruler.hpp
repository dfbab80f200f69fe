#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cosetpsd/error.hpp"
#include "cosetpsd/pattern.hpp"

namespace cosetpsd {

/// Modular differences {(k - k') mod N | k, k' in marks} with the number of
/// ordered mark pairs realizing each difference.
struct ModularDifferenceSet {
  int period = 0;
  std::vector<int> multiplicity;  // indexed by difference, size N

  bool covers(int difference) const { return multiplicity[static_cast<std::size_t>(difference)] > 0; }

  std::vector<int> differences() const {
    std::vector<int> out;
    for (int d = 0; d < period; ++d) {
      if (covers(d)) out.push_back(d);
    }
    return out;
  }

  std::vector<int> missing() const {
    std::vector<int> out;
    for (int d = 0; d < period; ++d) {
      if (!covers(d)) out.push_back(d);
    }
    return out;
  }

  bool complete() const { return missing().empty(); }
};

inline ModularDifferenceSet modular_difference_set(const CosetPattern& pattern) {
  const int n = pattern.period();
  ModularDifferenceSet out{n, std::vector<int>(static_cast<std::size_t>(n), 0)};
  for (int a : pattern.marks()) {
    for (int b : pattern.marks()) {
      ++out.multiplicity[static_cast<std::size_t>(((a - b) % n + n) % n)];
    }
  }
  return out;
}

inline bool is_circular_sparse_ruler(const CosetPattern& pattern) {
  return modular_difference_set(pattern).complete();
}

struct RulerDesign {
  CosetPattern pattern;
  bool proven_minimal = false;
  std::uint64_t nodes = 0;  // branch-and-bound nodes visited
};

struct RulerSearchOptions {
  // Deterministic stand-in for a time budget: once this many nodes have been
  // expanded the search gives up and returns a constructive (non-minimal) ruler.
  std::uint64_t node_budget = 500'000'000;
};

namespace detail {

inline std::uint64_t low_bits(int n) {
  return n >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << n) - 1;
}

// Cyclic rotations inside an n-bit word.
inline std::uint64_t rotr(std::uint64_t x, int s, int n) {
  if (s == 0) return x;
  return ((x >> s) | (x << (n - s))) & low_bits(n);
}

inline std::uint64_t rotl(std::uint64_t x, int s, int n) {
  if (s == 0) return x;
  return ((x << s) | (x >> (n - s))) & low_bits(n);
}

// Depth-first search over mark sets anchored at 0, visiting candidate sets in
// lexicographic order so the first hit is the lexicographically smallest.
class RulerSearch {
 public:
  RulerSearch(int period, int marks, std::uint64_t budget, std::uint64_t used)
      : n_(period), m_(marks), budget_(budget), nodes_(used), full_(low_bits(period)) {}

  // nullopt when the budget ran out; empty vector when no ruler of this size exists.
  std::optional<std::vector<int>> run() {
    chosen_.assign(1, 0);
    const std::uint64_t set = 1;
    const std::uint64_t diffs = 1;
    exhausted_ = false;
    if (descend(set, set, diffs)) return chosen_;
    if (exhausted_) return std::nullopt;
    return std::vector<int>{};
  }

  std::uint64_t nodes() const { return nodes_; }

 private:
  bool descend(std::uint64_t set, std::uint64_t reflected, std::uint64_t diffs) {
    if (++nodes_ > budget_) {
      exhausted_ = true;
      return false;
    }
    const int placed = static_cast<int>(chosen_.size());
    if (placed == m_) return diffs == full_;
    const int remaining = m_ - placed;
    const int missing = n_ - std::popcount(diffs);
    // Each new mark contributes at most two new differences per existing mark.
    if (missing > 2 * placed * remaining + remaining * (remaining - 1)) return false;

    for (int x = chosen_.back() + 1; x <= n_ - remaining; ++x) {
      const std::uint64_t next_set = set | (std::uint64_t{1} << x);
      const std::uint64_t next_reflected = reflected | (std::uint64_t{1} << ((n_ - x) % n_));
      // (s - x) mod n for s in set, and (x - s) mod n via the reflected set.
      const std::uint64_t next_diffs =
          diffs | rotr(next_set, x, n_) | rotl(next_reflected, x, n_);
      chosen_.push_back(x);
      if (descend(next_set, next_reflected, next_diffs)) return true;
      chosen_.pop_back();
      if (exhausted_) return false;
    }
    return false;
  }

  int n_;
  int m_;
  std::uint64_t budget_;
  std::uint64_t nodes_;
  std::uint64_t full_;
  bool exhausted_ = false;
  std::vector<int> chosen_;
};

}  // namespace detail

/// Smallest M with M(M-1) + 1 >= N: no circular sparse ruler can have fewer marks.
inline int ruler_size_lower_bound(int period) {
  int m = 1;
  while (m * (m - 1) + 1 < period) ++m;
  return m;
}

/// A complete (generally non-minimal) circular sparse ruler: a dense head
/// {0..a-1} followed by marks spaced a apart, covering every distance up to N/2.
inline CosetPattern constructive_circular_ruler(int period) {
  if (period < 1) throw ConfigError("period must be positive");
  if (period <= 3) return CosetPattern::full(period);
  const int half = period / 2;
  const int a = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(half + 1))));
  std::vector<int> marks;
  for (int k = 0; k < a && k <= half; ++k) marks.push_back(k);
  for (int next = a - 1 + a; marks.back() < half; next += a) {
    marks.push_back(std::min(next, half));
  }
  CosetPattern pattern(period, std::move(marks));
  if (!is_circular_sparse_ruler(pattern)) return CosetPattern::full(period);
  return pattern;
}

/// Minimum-cardinality circular sparse ruler by branch-and-bound (N <= 64).
/// Ties go to the lexicographically smallest mark set containing 0. Larger N,
/// or an exhausted node budget, yields a constructive ruler flagged non-minimal.
inline RulerDesign minimal_circular_sparse_ruler(int period, RulerSearchOptions options = {}) {
  if (period < 1) throw ConfigError("period must be positive");
  if (period == 1) return {CosetPattern(1, {0}), true, 0};
  if (period > 64) return {constructive_circular_ruler(period), false, 0};

  std::uint64_t nodes = 0;
  for (int m = ruler_size_lower_bound(period); m <= period; ++m) {
    detail::RulerSearch search(period, m, options.node_budget, nodes);
    auto found = search.run();
    nodes = search.nodes();
    if (!found) break;  // budget exhausted
    if (!found->empty()) return {CosetPattern(period, std::move(*found)), true, nodes};
  }
  return {constructive_circular_ruler(period), false, nodes};
}

/// Enumerates every non-empty subset of {0..N-1}; returns the lexicographically
/// smallest ruler of minimum cardinality. Independent of the search above;
/// intended for small N (the cost is 2^N difference-set evaluations).
inline CosetPattern exhaustive_minimal_ruler(int period) {
  if (period < 1) throw ConfigError("period must be positive");
  if (period > 24) throw ConfigError("exhaustive ruler enumeration limited to N <= 24");
  std::optional<CosetPattern> best;
  const std::uint32_t total = std::uint32_t{1} << period;
  for (std::uint32_t mask = 1; mask < total; ++mask) {
    const int size = std::popcount(mask);
    if (best && size > best->size()) continue;
    std::vector<int> marks;
    for (int n = 0; n < period; ++n) {
      if (mask & (std::uint32_t{1} << n)) marks.push_back(n);
    }
    CosetPattern candidate(period, std::move(marks));
    if (!is_circular_sparse_ruler(candidate)) continue;
    if (!best || size < best->size() ||
        std::lexicographical_compare(candidate.marks().begin(), candidate.marks().end(),
                                     best->marks().begin(), best->marks().end())) {
      best = std::move(candidate);
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------
// Pair-covering pattern families for the correlated-bins estimator.

/// True iff every coset appears in some pattern and every unordered pair of
/// distinct cosets appears together in at least one pattern.
inline bool verify_pair_coverage(const PatternFamily& family) {
  const int n = family.period();
  std::vector<char> seen(static_cast<std::size_t>(n * n), 0);
  for (const auto& p : family.patterns()) {
    for (int a : p.marks()) {
      for (int b : p.marks()) seen[static_cast<std::size_t>(a * n + b)] = 1;
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
}

namespace detail {

class PairCoverState {
 public:
  explicit PairCoverState(int n)
      : n_(n), covered_(static_cast<std::size_t>(n * n), 0), degree_(static_cast<std::size_t>(n), n - 1) {
    for (int v = 0; v < n; ++v) covered_[idx(v, v)] = 1;
    uncovered_ = n * (n - 1) / 2;
  }

  bool covered(int a, int b) const { return covered_[idx(a, b)] != 0; }
  int degree(int v) const { return degree_[static_cast<std::size_t>(v)]; }
  int uncovered() const { return uncovered_; }

  int gain(const std::vector<int>& block) const {
    int g = 0;
    for (std::size_t i = 0; i < block.size(); ++i) {
      for (std::size_t j = i + 1; j < block.size(); ++j) g += covered(block[i], block[j]) ? 0 : 1;
    }
    return g;
  }

  void add(const std::vector<int>& block) {
    for (std::size_t i = 0; i < block.size(); ++i) {
      for (std::size_t j = i + 1; j < block.size(); ++j) {
        const int a = block[i], b = block[j];
        if (covered(a, b)) continue;
        covered_[idx(a, b)] = covered_[idx(b, a)] = 1;
        --degree_[static_cast<std::size_t>(a)];
        --degree_[static_cast<std::size_t>(b)];
        --uncovered_;
      }
    }
  }

 private:
  std::size_t idx(int a, int b) const { return static_cast<std::size_t>(a * n_ + b); }

  int n_;
  std::vector<char> covered_;
  std::vector<int> degree_;
  int uncovered_;
};

// Grows a block from `seed`, adding the vertex that covers the most new
// pairs with the block (ties: higher residual degree, then lower index).
inline std::vector<int> greedy_block(const PairCoverState& state, int n, int m, int seed) {
  std::vector<int> block{seed};
  std::vector<char> in_block(static_cast<std::size_t>(n), 0);
  in_block[static_cast<std::size_t>(seed)] = 1;
  while (static_cast<int>(block.size()) < m) {
    int best = -1, best_gain = -1, best_degree = -1;
    for (int v = 0; v < n; ++v) {
      if (in_block[static_cast<std::size_t>(v)]) continue;
      int g = 0;
      for (int b : block) g += state.covered(v, b) ? 0 : 1;
      if (g > best_gain || (g == best_gain && state.degree(v) > best_degree)) {
        best = v;
        best_gain = g;
        best_degree = state.degree(v);
      }
    }
    block.push_back(best);
    in_block[static_cast<std::size_t>(best)] = 1;
  }
  std::sort(block.begin(), block.end());
  return block;
}

// Base pattern for rotation candidates: the minimal ruler padded to m marks by
// repeatedly adding the coset that raises the smallest difference multiplicity.
inline std::vector<int> rotation_base(int n, int m) {
  std::vector<int> marks;
  if (n <= 64) {
    RulerSearchOptions opts;
    opts.node_budget = 20'000'000;
    auto ruler = minimal_circular_sparse_ruler(n, opts).pattern;
    marks.assign(ruler.marks().begin(), ruler.marks().end());
  } else {
    auto ruler = constructive_circular_ruler(n);
    marks.assign(ruler.marks().begin(), ruler.marks().end());
  }
  if (static_cast<int>(marks.size()) > m) marks.resize(static_cast<std::size_t>(m));
  while (static_cast<int>(marks.size()) < m) {
    int best = -1;
    long best_score = std::numeric_limits<long>::min();
    for (int x = 0; x < n; ++x) {
      if (std::find(marks.begin(), marks.end(), x) != marks.end()) continue;
      auto trial = marks;
      trial.push_back(x);
      auto diffs = modular_difference_set(CosetPattern(n, trial));
      const int lowest = *std::min_element(diffs.multiplicity.begin(), diffs.multiplicity.end());
      const long score = static_cast<long>(lowest) * 1000 -
                         static_cast<long>(diffs.missing().size());
      if (score > best_score) {
        best_score = score;
        best = x;
      }
    }
    marks.push_back(best);
  }
  std::sort(marks.begin(), marks.end());
  return marks;
}

}  // namespace detail

/// Greedy pair-cover design: each step adds whichever candidate covers the most
/// still-uncovered coset pairs. Candidates are one greedily grown block per
/// start coset plus the N rotations of a padded circular ruler. Z is not
/// guaranteed to be minimal.
inline PatternFamily design_pair_cover_family(int period, int marks) {
  if (marks < 2) throw ConfigError("pair-cover family needs at least 2 marks per pattern");
  if (marks > period) throw ConfigError("marks per pattern cannot exceed the period");
  if (marks == period) return PatternFamily(period, {CosetPattern::full(period)});

  const int n = period;
  const auto base = detail::rotation_base(n, marks);
  detail::PairCoverState state(n);
  std::vector<CosetPattern> chosen;
  while (state.uncovered() > 0) {
    std::vector<int> best;
    int best_gain = -1;
    for (int v = 0; v < n; ++v) {
      if (state.degree(v) == 0) continue;
      auto block = detail::greedy_block(state, n, marks, v);
      const int g = state.gain(block);
      if (g > best_gain) {
        best_gain = g;
        best = std::move(block);
      }
    }
    for (int r = 0; r < n; ++r) {
      std::vector<int> rotated;
      for (int b : base) rotated.push_back((b + r) % n);
      std::sort(rotated.begin(), rotated.end());
      const int g = state.gain(rotated);
      if (g > best_gain) {
        best_gain = g;
        best = std::move(rotated);
      }
    }
    state.add(best);
    chosen.emplace_back(n, best);
  }
  return PatternFamily(period, std::move(chosen));
}

}  // namespace cosetpsd
