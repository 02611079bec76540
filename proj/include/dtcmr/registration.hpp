#pragma once

#include "dtcmr/core.hpp"

namespace dtcmr::registration {

struct Shift {
  double dy = 0.0;
  double dx = 0.0;
};

/// Translation that registers `moving` onto `reference`, i.e.
/// apply_shift(moving, estimate_shift(reference, moving)) ~ reference.
///
/// Integer peak of the FFT cross-correlation, refined by a matrix-multiply DFT
/// evaluated on a 1.5 x 1.5 pixel neighbourhood at 1/upsample_factor spacing.
/// Throws NumericalError("degenerate correlation") for a constant image.
Shift estimate_shift(const Image &reference, const Image &moving, int upsample_factor = 100);

/// Circular sub-pixel translation by a Fourier phase ramp: out(y, x) = in(y - dy, x - dx).
Image apply_shift(const Image &image, Shift shift);

enum class ReferencePolicy {
  FirstReferenceFrame,    // first b = 0 frame for every frame
  FirstFramePerWeighting, // first repetition of the same b-value
};

struct RegistrationOptions {
  int upsample_factor = 100;
  ReferencePolicy policy = ReferencePolicy::FirstReferenceFrame;
  /// Estimate one shift per (b, repetition) from the mean over its diffusion
  /// directions and apply it to all of them. With false every frame is
  /// registered on its own.
  bool group_directions = true;
};

/// Aligns every frame to the policy's reference; the shifts are appended to
/// the returned stack's registration record, one entry per frame.
DwiStack register_stack(const DwiStack &stack, const RegistrationOptions &options = {});

} // namespace dtcmr::registration
