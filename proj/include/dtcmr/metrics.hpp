#pragma once

#include "dtcmr/core.hpp"

#include <span>
#include <vector>

namespace dtcmr::metrics {

inline constexpr double kSignificance = 0.05;

/// Angular distance with 180-degree periodicity: |x - y| below 90, else 180 - |x - y|.
double angle_distance(double x, double y);

/// Mean angle absolute error in degrees over the masked voxels.
double maae(const Image &x, const Image &y, const Mask &mask);

/// Mean absolute error over the masked voxels, in the inputs' units.
double mae(const Image &x, const Image &y, const Mask &mask);

/// Scale factors used when reporting MD and FA errors.
inline constexpr double kMdReportScale = 1e5;
inline constexpr double kFaReportScale = 1e2;

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sided two-sample Kolmogorov-Smirnov test.
///
/// Exact p (lattice-path count over all label assignments, ties respected)
/// when n * m <= 10000; otherwise the asymptotic Kolmogorov distribution at
/// (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D.
TestResult ks_two_sample(std::span<const double> a, std::span<const double> b);

/// Kolmogorov survival function Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2).
double kolmogorov_survival(double lambda);

/// Two-sided Wilcoxon signed-rank test on paired differences. Zeros are
/// dropped and tied |d| get averaged ranks. The statistic is W+.
/// n <= 12: exact p over all 2^n sign patterns; larger n: normal
/// approximation with tie and continuity correction.
TestResult wilcoxon_signed_rank(std::span<const double> differences);

struct MedianIqr {
  double median = 0.0;
  double iqr = 0.0;
};

/// Quantile with linear interpolation between order statistics at (n - 1) q.
double quantile(std::span<const double> sample, double q);
MedianIqr median_iqr(std::span<const double> sample);

} // namespace dtcmr::metrics
