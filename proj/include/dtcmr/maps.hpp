#pragma once

#include "dtcmr/core.hpp"

#include <optional>

namespace dtcmr::maps {

struct PixelPoint {
  double row = 0.0;
  double col = 0.0;
};

/// Per-pixel cardiac frame. Image axes: x points east (+col), y points north
/// (-row), z is the slice normal.
struct LocalBasis {
  ImageSize size;
  std::vector<Vec3> radial;
  std::vector<Vec3> circumferential;
  std::vector<Vec3> longitudinal;
  Mask valid;
  PixelPoint centre;
};

PixelPoint mask_centroid(const Mask &mask);

/// Builds the radial/circumferential/longitudinal frame for every mask voxel.
/// A voxel lying exactly on the centre is left out of `valid`.
LocalBasis local_basis(const Mask &mask, std::optional<PixelPoint> lv_centre = std::nullopt);

/// In-plane unit vector from the centre towards pixel (row, col).
std::optional<Vec3> radial_direction(PixelPoint centre, int row, int col);

/// HA in degrees, (-90, 90]: angle of E1's circumferential-longitudinal
/// projection from the circumferential axis, positive towards longitudinal.
double helix_angle(const Vec3 &e1, const Vec3 &circ, const Vec3 &lon);

/// Unit vector orthogonal to radial and to the wall-tangent projection of E1,
/// signed to point along +longitudinal (or +circumferential when that is 0).
Vec3 cross_fiber_direction(const Vec3 &e1, const Vec3 &radial, const Vec3 &circ, const Vec3 &lon);

/// E2A in degrees, (-90, 90]: angle of E2's projection onto the
/// (radial, cross-fibre) plane measured from the cross-fibre axis, positive
/// towards radial.
double e2_angle(const Vec3 &e1, const Vec3 &e2, const Vec3 &radial, const Vec3 &circ, const Vec3 &lon);

struct VoxelMaps {
  double md = 0.0;
  double fa = 0.0;
  double ha = 0.0;
  double e2a = 0.0;
  std::uint8_t flags = 0;
  bool defined = true; // false for the zero tensor
};

VoxelMaps voxel_maps(const Tensor6 &t, const Vec3 &radial, const Vec3 &circ, const Vec3 &lon);

/// MD/FA/HA/E2A over mask & basis.valid. Zero tensors are dropped from the
/// output mask; isotropic ones keep MD/FA but get kUndefinedAngles. FA is
/// clamped to [0, 1]; voxels with a negative eigenvalue get kNegativeEigenvalue.
MapSet compute_maps(const TensorField &tensors, const LocalBasis &basis, const Mask &mask);
MapSet compute_maps(const TensorField &tensors, const LocalBasis &basis);

/// Mask voxels whose HA/E2A are meaningful (no kUndefinedAngles flag).
Mask angle_mask(const MapSet &maps);

} // namespace dtcmr::maps
