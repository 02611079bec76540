#pragma once

#include "dtcmr/core.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dtcmr::fitting {

enum class SchemeVariant { First, Centre, Last, Random, FirstPlus1 };

struct SamplingScheme {
  SchemeVariant variant = SchemeVariant::First;
  std::uint64_t seed = 0; // Random only
};

/// Short labels used on the command line and in reports: F, C, L, R, F1.
std::string scheme_label(SchemeVariant v);
SchemeVariant parse_scheme(const std::string &label);

struct BreathHoldBudget {
  std::string name;
  std::map<double, int> reps; // b-value -> repetitions kept

  static BreathHoldBudget one();   // 1BH: b0 x1, b600 x1, b150 x0
  static BreathHoldBudget three(); // 3BH: b0 x2, b600 x2, b150 x1
  static BreathHoldBudget five();  // 5BH: b0 x4, b600 x4, b150 x1
  static BreathHoldBudget parse(const std::string &name);
};

/// Indices of the m repetitions kept out of n.
///
/// Centre uses the offset floor((n - m) / 2), so ties go to the earlier
/// window. Random draws without replacement and returns the indices sorted.
std::vector<int> select_indices(int available, int m, const SamplingScheme &scheme, double b_value = 0.0);

/// Sub-stack holding exactly budget.reps[b] repetitions of every b-value with
/// a nonzero count; b-values with a zero count are dropped from the protocol.
DwiStack select_repetitions(const DwiStack &stack, const SamplingScheme &scheme, const BreathHoldBudget &budget);

struct AveragedFrame {
  double b = 0.0;
  int direction = 0;
  Vec3 gradient{0.0, 0.0, 0.0};
  Image image;
};

/// Pixelwise arithmetic mean over repetitions, one entry per (b, direction).
std::vector<AveragedFrame> average_repetitions(const DwiStack &stack);

/// Log-linear design for x = (ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz).
///
/// The QR factorisation and the resulting 7 x n solve operator are built once
/// per measurement set; construction throws when the design is rank deficient.
class LlsDesign {
public:
  explicit LlsDesign(const std::vector<AveragedFrame> &frames);

  const Eigen::MatrixXd &matrix() const { return design_; }
  /// Least-squares solution for one voxel's log-signals.
  Eigen::Matrix<double, 7, 1> solve(const Eigen::VectorXd &log_signal) const;
  int measurements() const { return static_cast<int>(design_.rows()); }

private:
  Eigen::MatrixXd design_;
  Eigen::MatrixXd solver_; // 7 x n
};

struct LlsFit {
  TensorField tensors;
  Image log_s0;
  std::size_t excluded_voxels = 0;  // dropped for non-positive signal
  std::size_t non_psd_voxels = 0;   // fitted tensor has a negative eigenvalue
};

/// Per masked voxel least-squares fit of ln S. Voxels with any non-positive
/// averaged signal are removed from the output mask and counted.
LlsFit lls_fit(const std::vector<AveragedFrame> &frames, const Mask &mask);

/// Convenience: average then fit.
LlsFit fit_stack(const DwiStack &stack);

} // namespace dtcmr::fitting
