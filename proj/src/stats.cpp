#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "warpbench/eval.hpp"

namespace warpbench {

namespace {

// Average ranks (1-based) for a value vector; tied values share the mean
// of the rank block they occupy.
std::vector<double> average_ranks(const std::vector<double>& v) {
  std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

// Sum of (t^3 - t) over tie groups, used by both rank tests' variance
// corrections.
double tie_term(const std::vector<double>& v) {
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    double t = static_cast<double>(j - i + 1);
    sum += t * t * t - t;
    i = j + 1;
  }
  return sum;
}

double normal_two_sided(double z) {
  boost::math::normal_distribution<double> norm;
  double p = 2.0 * boost::math::cdf(norm, -std::abs(z));
  return std::min(1.0, p);
}

}  // namespace

TestResult paired_t_test(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DataError("paired t-test: unequal sample sizes");
  }
  std::size_t n = a.size();
  if (n < 2) throw DataError("paired t-test: need at least 2 pairs");

  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  double var = ss / static_cast<double>(n - 1);

  TestResult r;
  r.name = "t-test";
  r.n = n;
  if (var == 0.0) {
    r.degenerate = true;
    r.method = "degenerate";
    r.statistic = 0.0;
    r.p_value = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  double sd = std::sqrt(var);
  r.statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t_distribution<double> dist(
      static_cast<double>(n - 1));
  r.p_value = 2.0 * boost::math::cdf(dist, -std::abs(r.statistic));
  r.method = "t-distribution";
  return r;
}

TestResult wilcoxon_signed_rank(const std::vector<double>& a,
                                const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DataError("wilcoxon: unequal sample sizes");
  }
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    if (d != 0.0) diff.push_back(d);
  }

  TestResult r;
  r.name = "wilcoxon";
  std::size_t n = diff.size();
  r.n = n;
  if (n == 0) {
    r.degenerate = true;
    r.method = "degenerate";
    r.p_value = 1.0;
    return r;
  }

  std::vector<double> abs_d(n);
  for (std::size_t i = 0; i < n; ++i) abs_d[i] = std::abs(diff[i]);
  std::vector<double> ranks = average_ranks(abs_d);

  double w_plus = 0.0, w_minus = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    (diff[i] > 0.0 ? w_plus : w_minus) += ranks[i];
  }
  double w = std::min(w_plus, w_minus);
  r.statistic = w;

  constexpr std::size_t kExactLimit = 25;
  if (n <= kExactLimit) {
    // Exact null distribution of W+ over all 2^n sign assignments via
    // subset-sum counting. Average ranks are half-integers, so doubling
    // makes every rank integral.
    std::vector<std::int64_t> r2(n);
    std::int64_t total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = static_cast<std::int64_t>(std::llround(ranks[i] * 2.0));
      total2 += r2[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    std::int64_t reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      reach += r2[i];
      for (std::int64_t s = reach; s >= r2[i]; --s) {
        count[static_cast<std::size_t>(s)] +=
            count[static_cast<std::size_t>(s - r2[i])];
      }
    }
    double denom = std::ldexp(1.0, static_cast<int>(n));  // 2^n
    std::int64_t w2 = static_cast<std::int64_t>(std::llround(w * 2.0));
    double tail_low = 0.0, tail_high = 0.0;
    for (std::int64_t s = 0; s <= total2; ++s) {
      if (s <= w2) tail_low += count[static_cast<std::size_t>(s)];
      if (s >= total2 - w2) tail_high += count[static_cast<std::size_t>(s)];
    }
    r.p_value = std::min(1.0, (tail_low + tail_high) / denom);
    r.method = "exact";
    return r;
  }

  double nd = static_cast<double>(n);
  double mean = nd * (nd + 1.0) / 4.0;
  double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 -
               tie_term(abs_d) / 48.0;
  if (var <= 0.0) {
    r.degenerate = true;
    r.method = "degenerate";
    r.p_value = 1.0;
    return r;
  }
  double z = (w - mean + 0.5) / std::sqrt(var);  // continuity toward null
  r.p_value = normal_two_sided(z);
  r.method = "normal-approximation";
  return r;
}

TestResult mann_whitney_u(const std::vector<double>& a,
                          const std::vector<double>& b) {
  if (a.empty() || b.empty()) {
    throw DataError("mann-whitney: both groups must be non-empty");
  }
  std::size_t na = a.size(), nb = b.size(), n = na + nb;

  std::vector<double> combined;
  combined.reserve(n);
  combined.insert(combined.end(), a.begin(), a.end());
  combined.insert(combined.end(), b.begin(), b.end());
  std::vector<double> ranks = average_ranks(combined);

  double ra = 0.0;
  for (std::size_t i = 0; i < na; ++i) ra += ranks[i];
  double ua = ra - static_cast<double>(na) * (static_cast<double>(na) + 1.0) / 2.0;
  double ub = static_cast<double>(na) * static_cast<double>(nb) - ua;
  double u = std::min(ua, ub);

  TestResult r;
  r.name = "mann-whitney";
  r.n = n;
  r.statistic = u;

  constexpr std::size_t kExactLimit = 20;
  if (n <= kExactLimit) {
    // Permutation-exact: all C(n, na) assignments of the observed ranks
    // to group a are equally likely under the null.
    std::vector<std::size_t> pick(na);
    std::iota(pick.begin(), pick.end(), 0);
    double hits = 0.0, totalc = 0.0;
    const double eps = 1e-9;
    while (true) {
      double ra_p = 0.0;
      for (std::size_t idx : pick) ra_p += ranks[idx];
      double ua_p =
          ra_p - static_cast<double>(na) * (static_cast<double>(na) + 1.0) / 2.0;
      double ub_p = static_cast<double>(na) * static_cast<double>(nb) - ua_p;
      if (std::min(ua_p, ub_p) <= u + eps) hits += 1.0;
      totalc += 1.0;

      // next combination in lexicographic order
      std::size_t i = na;
      while (i > 0) {
        --i;
        if (pick[i] != i + n - na) {
          ++pick[i];
          for (std::size_t j = i + 1; j < na; ++j) pick[j] = pick[j - 1] + 1;
          break;
        }
        if (i == 0) {
          r.p_value = hits / totalc;
          r.method = "exact";
          return r;
        }
      }
      if (na == 0) break;
    }
  }

  double nad = static_cast<double>(na), nbd = static_cast<double>(nb);
  double nd = static_cast<double>(n);
  double mean = nad * nbd / 2.0;
  double var = nad * nbd / 12.0 *
               ((nd + 1.0) - tie_term(combined) / (nd * (nd - 1.0)));
  if (var <= 0.0) {
    r.degenerate = true;
    r.method = "degenerate";
    r.p_value = 1.0;
    return r;
  }
  double z = (u - mean + 0.5) / std::sqrt(var);
  r.p_value = normal_two_sided(z);
  r.method = "normal-approximation";
  return r;
}

std::vector<double> adjust_bonferroni(const std::vector<double>& p) {
  std::vector<double> out(p.size());
  double m = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = std::min(1.0, m * p[i]);
  }
  return out;
}

std::vector<double> adjust_bh(const std::vector<double>& p) {
  std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

  std::vector<double> out(m, 0.0);
  double running = 1.0;  // min over larger ranks
  for (std::size_t i = m; i > 0; --i) {
    std::size_t idx = order[i - 1];
    double candidate = std::min(
        1.0, static_cast<double>(m) * p[idx] / static_cast<double>(i));
    running = std::min(running, candidate);
    out[idx] = running;
  }
  return out;
}

}  // namespace warpbench
