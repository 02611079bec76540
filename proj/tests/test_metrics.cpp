#include "dtcmr/metrics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace dtcmr;
using namespace dtcmr::metrics;
using namespace dtcmr::oracles;

TEST_CASE("angle distance and MAAE") {
  CHECK(angle_distance(80.0, -80.0) == doctest::Approx(20.0));
  CHECK(angle_distance(10.0, 30.0) == doctest::Approx(20.0));
  CHECK(angle_distance(-89.0, 89.0) == doctest::Approx(2.0));
  CHECK(angle_distance(0.0, 90.0) == doctest::Approx(90.0));

  Image x({1, 3}), y({1, 3});
  x.data = {80.0, 10.0, 0.0};
  y.data = {-80.0, 30.0, 45.0};
  Mask m({1, 3}, true);
  CHECK(maae(x, y, m) == doctest::Approx((20.0 + 20.0 + 45.0) / 3.0));
  m.set(0, 2, false);
  CHECK(maae(x, y, m) == doctest::Approx(20.0));
  CHECK(mae(x, y, m) == doctest::Approx((160.0 + 20.0) / 2.0));
  CHECK_THROWS_AS(maae(x, y, Mask({1, 3})), ValidationError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-90.0, 90.0);
  Image a({10, 10}), b({10, 10});
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = u(rng);
    b.data[i] = u(rng);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double diff = std::fmod(std::abs(a.data[i] - b.data[i]), 180.0);
    sum += std::min(diff, 180.0 - diff);
  }
  CHECK(maae(a, b, Mask({10, 10}, true)) == doctest::Approx(sum / 100.0).epsilon(1e-12));
}

TEST_CASE("KS matches exhaustive enumeration for n = m = 5") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> a(5), b(5);
    for (double &v : a)
      v = g(rng);
    for (double &v : b)
      v = g(rng) + (trial % 3) * 0.7;
    const auto r = ks_two_sample(a, b);
    CHECK(r.statistic == doctest::Approx(ks_statistic_brute(a, b)));
    CHECK(std::abs(r.p_value - ks_enumerated_p(a, b)) < 0.01);
  }
  // Ties between samples.
  const std::vector<double> a{1, 2, 2, 3, 4}, b{2, 3, 3, 5, 6};
  CHECK(std::abs(ks_two_sample(a, b).p_value - ks_enumerated_p(a, b)) < 1e-9);
  CHECK(ks_two_sample(a, a).p_value == 1.0);
  CHECK_THROWS_AS(ks_two_sample(a, std::vector<double>{}), ValidationError);
}

TEST_CASE("KS asymptotic regime and Kolmogorov survival") {
  CHECK(kolmogorov_survival(0.0) == 1.0);
  CHECK(kolmogorov_survival(1.36) == doctest::Approx(0.0494).epsilon(0.01));
  // Both series branches agree near the switch point.
  CHECK(kolmogorov_survival(0.999999) == doctest::Approx(kolmogorov_survival(1.000001)).epsilon(1e-5));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<double> a(200), b(200);
  for (double &v : a)
    v = g(rng);
  for (double &v : b)
    v = g(rng) + 0.5;
  const auto r = ks_two_sample(a, b);
  const double en = std::sqrt(100.0);
  CHECK(r.p_value == doctest::Approx(kolmogorov_survival((en + 0.12 + 0.11 / en) * r.statistic)));
  CHECK(r.p_value < 0.05);
}

TEST_CASE("Wilcoxon matches sign-pattern enumeration") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int n : {5, 8, 10, 12}) {
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> d(n);
      for (double &v : d)
        v = g(rng) + 0.3 * trial;
      CHECK(std::abs(wilcoxon_signed_rank(d).p_value - wilcoxon_enumerated_p(d)) < 1e-12);
    }
  }
  const std::vector<double> tied{1, -1, 2, 2, -3, 0, 4, 4, 4};
  CHECK(std::abs(wilcoxon_signed_rank(tied).p_value - wilcoxon_enumerated_p(tied)) < 1e-12);
  CHECK(wilcoxon_signed_rank(tied).statistic == doctest::Approx(1.5 + 3.5 * 2 + 7 * 3));
  CHECK_THROWS_WITH_AS(wilcoxon_signed_rank(std::vector<double>{0, 0}), "degenerate", ValidationError);
}

TEST_CASE("Wilcoxon normal approximation for n > 12") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> d(15);
    for (double &v : d)
      v = g(rng) + 0.1 * (trial % 8);
    const double exact = wilcoxon_enumerated_p(d);
    if (exact > 0.25)
      continue;
    ++checked;
    CHECK(std::abs(wilcoxon_signed_rank(d).p_value - exact) < 0.01);
  }
  CHECK(checked > 5);
}

TEST_CASE("quantiles") {
  const std::vector<double> s{1, 2, 3};
  const auto mi = median_iqr(s);
  CHECK(mi.median == 2.0);
  CHECK(mi.iqr == 1.0);
  const std::vector<double> t{4, 1, 3, 2};
  CHECK(quantile(t, 0.5) == 2.5);
  CHECK(quantile(t, 0.25) == doctest::Approx(1.75));
  CHECK(quantile(t, 0.0) == 1.0);
  CHECK(quantile(t, 1.0) == 4.0);
  CHECK_THROWS_AS(median_iqr(std::vector<double>{}), ValidationError);
}
