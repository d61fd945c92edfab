#pragma once

// Two-sample Kolmogorov-Smirnov and Wilcoxon signed-rank tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <fmt/format.h>

#include "backchannel/core.hpp"

namespace bc::stats {

struct KsResult {
  double d = 0.0;
  double p = 1.0;
  std::uint64_t d_numerator = 0;    // d = d_numerator / d_denominator
  std::uint64_t d_denominator = 1;
};

/// Survival function of the Kolmogorov distribution, P(K > lambda). Series
/// are summed until a term drops below 1e-8.
inline double kolmogorov_survival(double lambda) {
  constexpr double kTermTol = 1e-8;
  if (!(lambda > 0.0)) return 1.0;
  if (lambda < 1.18) {
    // P(K <= l) = sqrt(2 pi) / l * sum_j exp(-(2j-1)^2 pi^2 / (8 l^2))
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double cdf = 0.0;
    for (int j = 1; j < 1000; ++j) {
      const double m = 2.0 * j - 1.0;
      const double term = std::exp(-m * m * pi2 / (8.0 * lambda * lambda));
      cdf += term;
      if (term < kTermTol) break;
    }
    cdf *= std::sqrt(2.0 * std::numbers::pi) / lambda;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double s = 0.0;
  for (int j = 1; j < 1000; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    s += (j % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < kTermTol) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

/// D = sup |F_a - F_b|; p from the asymptotic distribution with
/// lambda = sqrt(n_a n_b / (n_a + n_b)) * D.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DataError("ks_two_sample needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::uint64_t na = a.size(), nb = b.size();
  std::uint64_t i = 0, j = 0, best = 0;
  while (i < na || j < nb) {
    double v;
    if (j >= nb || (i < na && a[i] <= b[j]))
      v = a[i];
    else
      v = b[j];
    while (i < na && a[i] == v) ++i;
    while (j < nb && b[j] == v) ++j;
    const std::uint64_t lhs = i * nb, rhs = j * na;
    best = std::max(best, lhs > rhs ? lhs - rhs : rhs - lhs);
  }
  KsResult r;
  r.d_numerator = best;
  r.d_denominator = na * nb;
  r.d = static_cast<double>(best) / static_cast<double>(na * nb);
  const double ne = static_cast<double>(na) * static_cast<double>(nb) / static_cast<double>(na + nb);
  r.p = kolmogorov_survival(std::sqrt(ne) * r.d);
  return r;
}

struct WilcoxonResult {
  double w = 0.0;
  double p = 1.0;
  std::size_t n = 0;  // non-zero differences
  bool exact = true;
  bool degenerate = false;
};

inline constexpr std::size_t kWilcoxonExactMax = 20;

/// Ranks of |d| (1-based, ties averaged), doubled so they stay integral.
inline std::vector<std::uint64_t> doubled_ranks(const std::vector<double>& d) {
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  std::vector<std::uint64_t> r(d.size());
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi + 1 < order.size() && std::abs(d[order[hi + 1]]) == std::abs(d[order[lo]])) ++hi;
    for (std::size_t k = lo; k <= hi; ++k) r[order[k]] = (lo + 1) + (hi + 1);
    lo = hi + 1;
  }
  return r;
}

/// Paired test on a - b. Zero differences are dropped; W = min(W+, W-).
/// Exact two-sided p = min(1, 2 P(T <= W)) over all sign assignments for
/// n <= 20, otherwise a normal approximation with tie and continuity
/// corrections.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("wilcoxon_signed_rank needs paired samples of equal length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double v = a[i] - b[i];
    if (!std::isfinite(v)) throw DataError("wilcoxon_signed_rank: non-finite difference");
    if (v != 0.0) d.push_back(v);
  }
  WilcoxonResult r;
  r.n = d.size();
  if (d.empty()) {
    r.degenerate = true;
    return r;
  }
  const auto ranks = doubled_ranks(d);
  std::uint64_t plus = 0, total = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += ranks[i];
    if (d[i] > 0) plus += ranks[i];
  }
  const std::uint64_t w2 = std::min(plus, total - plus);
  r.w = static_cast<double>(w2) / 2.0;
  if (d.size() <= kWilcoxonExactMax) {
    // Count sign assignments with doubled positive-rank sum <= w2.
    std::vector<double> ways(total + 1, 0.0);
    ways[0] = 1.0;
    std::uint64_t reach = 0;
    for (std::uint64_t rk : ranks) {
      for (std::uint64_t s = reach + 1; s-- > 0;)
        if (ways[s] != 0.0) ways[s + rk] += ways[s];
      reach += rk;
    }
    double below = 0.0;
    for (std::uint64_t s = 0; s <= w2; ++s) below += ways[s];
    r.p = std::min(1.0, 2.0 * below / std::ldexp(1.0, static_cast<int>(d.size())));
    r.exact = true;
    return r;
  }
  r.exact = false;
  const auto n = static_cast<double>(d.size());
  const double mean = n * (n + 1.0) / 4.0;
  double tie = 0.0;
  {
    std::vector<std::uint64_t> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t lo = 0; lo < sorted.size();) {
      std::size_t hi = lo;
      while (hi < sorted.size() && sorted[hi] == sorted[lo]) ++hi;
      const auto t = static_cast<double>(hi - lo);
      tie += t * t * t - t;
      lo = hi;
    }
  }
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie / 48.0;
  if (!(var > 0.0)) {
    r.p = 1.0;
    return r;
  }
  const double z = std::min(0.0, r.w - mean + 0.5) / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(-z / std::numbers::sqrt2));
  return r;
}

}  // namespace bc::stats
