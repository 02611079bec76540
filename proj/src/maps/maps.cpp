#include "dtcmr/maps.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dtcmr::maps {
namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;
constexpr double kDegenerateRelative = 1e-9;

// Orient an axis so that it represents the same line but with a canonical
// sign: first nonzero of (a, b) positive.
void canonical(double &a, double &b) {
  if (b < 0.0 || (b == 0.0 && a < 0.0)) {
    a = -a;
    b = -b;
  }
}

} // namespace

PixelPoint mask_centroid(const Mask &mask) {
  double sr = 0.0, sc = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < mask.size.rows; ++r)
    for (int c = 0; c < mask.size.cols; ++c)
      if (mask.at(r, c)) {
        sr += r;
        sc += c;
        ++n;
      }
  if (n == 0)
    throw ValidationError("mask_centroid: empty mask");
  return {sr / n, sc / n};
}

std::optional<Vec3> radial_direction(PixelPoint centre, int row, int col) {
  const double x = col - centre.col;
  const double y = centre.row - row;
  const double len = std::hypot(x, y);
  if (len == 0.0)
    return std::nullopt;
  return Vec3{x / len, y / len, 0.0};
}

LocalBasis local_basis(const Mask &mask, std::optional<PixelPoint> lv_centre) {
  LocalBasis basis;
  basis.size = mask.size;
  basis.centre = lv_centre ? *lv_centre : mask_centroid(mask);
  const std::size_t n = mask.size.pixels();
  basis.radial.assign(n, Vec3{0, 0, 0});
  basis.circumferential.assign(n, Vec3{0, 0, 0});
  basis.longitudinal.assign(n, Vec3{0, 0, 0});
  basis.valid = Mask(mask.size);
  const Vec3 lon{0.0, 0.0, 1.0};
  for (int r = 0; r < mask.size.rows; ++r) {
    for (int c = 0; c < mask.size.cols; ++c) {
      if (!mask.at(r, c))
        continue;
      const auto rad = radial_direction(basis.centre, r, c);
      if (!rad)
        continue;
      const std::size_t p = static_cast<std::size_t>(r) * mask.size.cols + c;
      basis.radial[p] = *rad;
      basis.longitudinal[p] = lon;
      basis.circumferential[p] = cross(lon, *rad);
      basis.valid.set(r, c, true);
    }
  }
  return basis;
}

double helix_angle(const Vec3 &e1, const Vec3 &circ, const Vec3 &lon) {
  double a = dot(e1, circ), b = dot(e1, lon);
  canonical(b, a);
  return std::atan2(b, a) * kRadToDeg;
}

Vec3 cross_fiber_direction(const Vec3 &e1, const Vec3 &radial, const Vec3 &circ, const Vec3 &lon) {
  const double er = dot(e1, radial);
  const Vec3 proj{e1[0] - er * radial[0], e1[1] - er * radial[1], e1[2] - er * radial[2]};
  if (norm(proj) < 1e-12)
    return lon;
  Vec3 cf = normalized(cross(radial, proj));
  double along_circ = dot(cf, circ), along_lon = dot(cf, lon);
  if (along_lon < 0.0 || (along_lon == 0.0 && along_circ < 0.0))
    cf = {-cf[0], -cf[1], -cf[2]};
  return cf;
}

double e2_angle(const Vec3 &e1, const Vec3 &e2, const Vec3 &radial, const Vec3 &circ, const Vec3 &lon) {
  const Vec3 cf = cross_fiber_direction(e1, radial, circ, lon);
  double u = dot(e2, radial), v = dot(e2, cf);
  canonical(u, v);
  return std::atan2(u, v) * kRadToDeg;
}

VoxelMaps voxel_maps(const Tensor6 &t, const Vec3 &radial, const Vec3 &circ, const Vec3 &lon) {
  VoxelMaps out;
  const EigenSystem es = eig_sym3(t);
  const auto &l = es.values;
  const double sum_sq = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
  if (sum_sq == 0.0) {
    out.defined = false;
    return out;
  }
  out.md = (l[0] + l[1] + l[2]) / 3.0;
  const double dev = (l[0] - out.md) * (l[0] - out.md) + (l[1] - out.md) * (l[1] - out.md) +
                     (l[2] - out.md) * (l[2] - out.md);
  out.fa = std::clamp(std::sqrt(1.5 * dev / sum_sq), 0.0, 1.0);
  if (l[2] < 0.0)
    out.flags |= kNegativeEigenvalue;

  const double scale = std::max({std::abs(l[0]), std::abs(l[1]), std::abs(l[2])});
  const double tol = kDegenerateRelative * scale;
  if (l[0] - l[2] <= tol) {
    out.flags |= kUndefinedAngles | kNearDegenerate;
    return out;
  }
  if (l[0] - l[1] <= tol || l[1] - l[2] <= tol)
    out.flags |= kNearDegenerate;
  out.ha = helix_angle(es.vectors[0], circ, lon);
  out.e2a = e2_angle(es.vectors[0], es.vectors[1], radial, circ, lon);
  return out;
}

MapSet compute_maps(const TensorField &tensors, const LocalBasis &basis, const Mask &mask) {
  if (!(tensors.size == basis.size) || !(mask.size == tensors.size))
    throw ValidationError("compute_maps: size mismatch");
  MapSet m;
  m.md = Image(tensors.size);
  m.fa = Image(tensors.size);
  m.ha = Image(tensors.size);
  m.e2a = Image(tensors.size);
  m.mask = Mask(tensors.size);
  m.flags.assign(tensors.size.pixels(), 0);
  for (std::size_t p = 0; p < tensors.size.pixels(); ++p) {
    if (!mask.data[p] || !basis.valid.data[p])
      continue;
    const VoxelMaps v = voxel_maps(tensors.at(p), basis.radial[p], basis.circumferential[p], basis.longitudinal[p]);
    if (!v.defined)
      continue;
    m.md.data[p] = v.md;
    m.fa.data[p] = v.fa;
    m.ha.data[p] = v.ha;
    m.e2a.data[p] = v.e2a;
    m.flags[p] = v.flags;
    m.mask.data[p] = 1;
  }
  return m;
}

MapSet compute_maps(const TensorField &tensors, const LocalBasis &basis) {
  return compute_maps(tensors, basis, tensors.mask);
}

Mask angle_mask(const MapSet &maps) {
  Mask out = maps.mask;
  for (std::size_t p = 0; p < out.data.size(); ++p)
    if (maps.flags[p] & kUndefinedAngles)
      out.data[p] = 0;
  return out;
}

} // namespace dtcmr::maps
