#pragma once

#include "dtcmr/core.hpp"
#include "dtcmr/maps.hpp"

#include <cstdint>
#include <limits>

#include <json.hpp>

namespace dtcmr::phantom {

struct PhantomConfig {
  ImageSize image_size{128, 128};
  maps::PixelPoint lv_centre{64.0, 64.0};
  double endo_radius = 14.0; // pixels
  double epi_radius = 22.0;
  double ha_endo = 60.0; // degrees
  double ha_epi = -60.0;
  double e2a_mean = 30.0;
  double e2a_transmural_range = 0.0; // e2a = mean + range * (depth - 0.5)
  Vec3 eigenvalue_profile{1.6e-3, 1.0e-3, 0.6e-3}; // mm^2/s
  double s0_level = 1000.0;

  void validate() const;
};

struct NoiseProfile {
  double snr = std::numeric_limits<double>::infinity(); // S0 / sigma; infinity = noiseless
  double first_rep_degradation = 1.0;                  // sigma multiplier for repetition 0
  double motion_shift_sigma = 0.0;                     // pixels
  std::uint64_t seed = 0;

  bool noiseless() const { return std::isinf(snr); }
  void validate() const;
};

struct Phantom {
  TensorField tensors; // ground truth, zero outside the mask
  Mask mask;
  maps::LocalBasis basis;
  Image depth; // transmural depth in [0, 1] (0 = endocardium)
  Image ha;    // ground-truth helix angle, degrees
  Image e2a;   // ground-truth E2 angle, degrees
  double s0 = 1000.0;
};

/// Annular LV with a linear transmural helix-angle ramp from ha_endo to ha_epi.
Phantom generate_phantom(const PhantomConfig &config);

/// Stejskal-Tanner signal S0 exp(-b g^T D g) per (b, direction, repetition),
/// optionally translated per (b, repetition) and corrupted by Rician noise.
/// The first b = 0 frame is never translated.
DwiStack simulate_dwi(const TensorField &truth, const AcquisitionProtocol &protocol, const NoiseProfile &noise,
                      double s0 = 1000.0);

nlohmann::json config_to_json(const PhantomConfig &c);
PhantomConfig config_from_json(const nlohmann::json &j);
nlohmann::json noise_to_json(const NoiseProfile &n);
NoiseProfile noise_from_json(const nlohmann::json &j);

/// Ranges sampled per subject when generating a cohort.
struct CohortConfig {
  PhantomConfig base;
  NoiseProfile noise;
  AcquisitionProtocol protocol = AcquisitionProtocol::standard();
  int centre_jitter = 4;         // integer pixels, uniform in [-j, j]
  double endo_radius_min = 12.0;
  double endo_radius_max = 16.0;
  double wall_min = 7.0;
  double wall_max = 10.0;
  double snr_min = 0.0;          // if both > 0, snr is uniform in [min, max]
  double snr_max = 0.0;
};

nlohmann::json cohort_config_to_json(const CohortConfig &c);
CohortConfig cohort_config_from_json(const nlohmann::json &j);

struct Subject {
  PhantomConfig config;
  NoiseProfile noise;
  Phantom truth;
  DwiStack dwi;
};

/// Deterministic subject `index` of a cohort drawn with `cohort_seed`.
Subject make_subject(const CohortConfig &cohort, std::uint64_t cohort_seed, int index);

} // namespace dtcmr::phantom
