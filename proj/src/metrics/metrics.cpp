#include "dtcmr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace dtcmr::metrics {

double angle_distance(double x, double y) {
  const double d = std::abs(x - y);
  return d < 90.0 ? d : 180.0 - d;
}

namespace {

template <typename F> double masked_mean(const Image &x, const Image &y, const Mask &mask, F &&f) {
  if (!(x.size == y.size) || !(x.size == mask.size))
    throw ValidationError("map size mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < x.data.size(); ++p)
    if (mask.data[p]) {
      sum += f(x.data[p], y.data[p]);
      ++n;
    }
  if (n == 0)
    throw ValidationError("empty evaluation mask");
  return sum / static_cast<double>(n);
}

} // namespace

double maae(const Image &x, const Image &y, const Mask &mask) {
  return masked_mean(x, y, mask, angle_distance);
}

double mae(const Image &x, const Image &y, const Mask &mask) {
  return masked_mean(x, y, mask, [](double a, double b) { return std::abs(a - b); });
}

double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0)
    return 1.0;
  if (lambda < 1.0) {
    // Jacobi-transformed series converges fast for small lambda.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double odd = 2.0 * k - 1.0;
      s += std::exp(-odd * odd * pi2 / (8.0 * lambda * lambda));
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-18)
      break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

namespace {

struct Pooled {
  double value;
  bool from_a;
};

// P(D < d) under random assignment of n "a" labels to the pooled positions,
// checking the ECDF gap only at the end of each tie group.
double exact_ks_below(const std::vector<Pooled> &pooled, int n, int m, double d) {
  const int total = n + m;
  std::vector<double> prob(n + 1, 0.0), next(n + 1, 0.0);
  prob[0] = 1.0;
  const double tol = 1e-12;
  for (int i = 0; i < total; ++i) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int ca = 0; ca <= std::min(i, n); ++ca) {
      if (prob[ca] == 0.0)
        continue;
      const int cb = i - ca;
      const int left = total - i;
      if (ca < n)
        next[ca + 1] += prob[ca] * static_cast<double>(n - ca) / left;
      if (cb < m)
        next[ca] += prob[ca] * static_cast<double>(m - cb) / left;
    }
    std::swap(prob, next);
    const bool group_end = i + 1 == total || pooled[i + 1].value != pooled[i].value;
    if (group_end) {
      const int seen = i + 1;
      for (int ca = 0; ca <= std::min(seen, n); ++ca) {
        const int cb = seen - ca;
        if (cb > m || std::abs(static_cast<double>(ca) / n - static_cast<double>(cb) / m) >= d - tol)
          prob[ca] = 0.0;
      }
    }
  }
  return prob[n];
}

} // namespace

TestResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty())
    throw ValidationError("ks_two_sample: empty sample");
  const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
  std::vector<Pooled> pooled;
  pooled.reserve(a.size() + b.size());
  for (double v : a)
    pooled.push_back({v, true});
  for (double v : b)
    pooled.push_back({v, false});
  std::sort(pooled.begin(), pooled.end(), [](const Pooled &x, const Pooled &y) { return x.value < y.value; });

  double d = 0.0;
  int ca = 0, cb = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    (pooled[i].from_a ? ca : cb) += 1;
    if (i + 1 == pooled.size() || pooled[i + 1].value != pooled[i].value)
      d = std::max(d, std::abs(static_cast<double>(ca) / n - static_cast<double>(cb) / m));
  }

  TestResult r;
  r.statistic = d;
  if (d == 0.0) {
    r.p_value = 1.0;
  } else if (static_cast<long long>(n) * m <= 10000) {
    r.p_value = std::clamp(1.0 - exact_ks_below(pooled, n, m, d), 0.0, 1.0);
  } else {
    const double en = std::sqrt(static_cast<double>(n) * m / (n + m));
    r.p_value = kolmogorov_survival((en + 0.12 + 0.11 / en) * d);
  }
  return r;
}

TestResult wilcoxon_signed_rank(std::span<const double> differences) {
  std::vector<double> d;
  for (double x : differences)
    if (x != 0.0)
      d.push_back(x);
  if (d.empty())
    throw ValidationError("degenerate");
  const int n = static_cast<int>(d.size());

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<double> rank(n);
  double tie_term = 0.0;
  for (int i = 0; i < n;) {
    int j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]]))
      ++j;
    const double avg = 0.5 * (i + j) + 1.0;
    for (int k = i; k <= j; ++k)
      rank[order[k]] = avg;
    const double t = j - i + 1;
    tie_term += t * t * t - t;
    i = j + 1;
  }

  double w_plus = 0.0, rank_total = 0.0;
  for (int i = 0; i < n; ++i) {
    rank_total += rank[i];
    if (d[i] > 0.0)
      w_plus += rank[i];
  }
  const double mean = rank_total / 2.0;

  TestResult r;
  r.statistic = w_plus;
  if (n <= 12) {
    // Distribution of 2 W+ over all sign patterns; doubled ranks are integers.
    std::vector<int> twice(n);
    int max_sum = 0;
    for (int i = 0; i < n; ++i) {
      twice[i] = static_cast<int>(std::lround(2.0 * rank[i]));
      max_sum += twice[i];
    }
    std::vector<double> count(max_sum + 1, 0.0);
    count[0] = 1.0;
    for (int t : twice)
      for (int s = max_sum; s >= t; --s)
        count[s] += count[s - t];
    const double observed = std::abs(2.0 * w_plus - 2.0 * mean);
    double extreme = 0.0;
    for (int s = 0; s <= max_sum; ++s)
      if (std::abs(s - 2.0 * mean) >= observed - 1e-9)
        extreme += count[s];
    r.p_value = std::min(1.0, extreme / std::ldexp(1.0, n));
  } else {
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(std::abs(w_plus - mean) - 0.5, 0.0) / std::sqrt(var);
    r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return r;
}

double quantile(std::span<const double> sample, double q) {
  if (sample.empty())
    throw ValidationError("quantile: empty sample");
  std::vector<double> s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end());
  const double pos = (s.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - lo) * (s[hi] - s[lo]);
}

MedianIqr median_iqr(std::span<const double> sample) {
  if (sample.empty())
    throw ValidationError("median_iqr: empty sample");
  return {quantile(sample, 0.5), quantile(sample, 0.75) - quantile(sample, 0.25)};
}

} // namespace dtcmr::metrics
