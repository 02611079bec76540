#include "dtcmr/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dtcmr {
namespace {

constexpr double kDegenerateGap = 1e-12;

using Sym = Mat3;

Vec3 mat_vec(const Sym &a, const Vec3 &v) {
  return {dot(a[0], v), dot(a[1], v), dot(a[2], v)};
}

// Null vector of (A - lambda I) for an isolated eigenvalue: the longest cross
// product of two rows.
Vec3 isolated_eigenvector(const Sym &a, double lambda) {
  Vec3 r0{a[0][0] - lambda, a[0][1], a[0][2]};
  Vec3 r1{a[1][0], a[1][1] - lambda, a[1][2]};
  Vec3 r2{a[2][0], a[2][1], a[2][2] - lambda};
  const Vec3 c01 = cross(r0, r1), c02 = cross(r0, r2), c12 = cross(r1, r2);
  const double n01 = dot(c01, c01), n02 = dot(c02, c02), n12 = dot(c12, c12);
  if (n01 >= n02 && n01 >= n12)
    return normalized(c01);
  if (n02 >= n12)
    return normalized(c02);
  return normalized(c12);
}

void orthogonal_complement(const Vec3 &w, Vec3 &u, Vec3 &v) {
  if (std::abs(w[0]) > std::abs(w[1])) {
    const double inv = 1.0 / std::sqrt(w[0] * w[0] + w[2] * w[2]);
    u = {-w[2] * inv, 0.0, w[0] * inv};
  } else {
    const double inv = 1.0 / std::sqrt(w[1] * w[1] + w[2] * w[2]);
    u = {0.0, w[2] * inv, -w[1] * inv};
  }
  v = cross(w, u);
}

void fix_sign(Vec3 &v) {
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(v[i]) > std::abs(v[k]))
      k = i;
  if (v[k] < 0.0)
    for (double &x : v)
      x = -x;
}

EigenSystem jacobi(Sym a) {
  Sym v{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (off == 0.0)
      break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0)
          continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  EigenSystem es;
  for (int i = 0; i < 3; ++i) {
    es.values[i] = a[i][i];
    es.vectors[i] = {v[0][i], v[1][i], v[2][i]};
  }
  return es;
}

} // namespace

EigenSystem eig_sym3(const Tensor6 &t) {
  for (double x : t)
    if (!std::isfinite(x))
      throw ValidationError("invalid tensor");

  double scale = 0.0;
  for (double x : t)
    scale = std::max(scale, std::abs(x));

  EigenSystem es;
  if (scale == 0.0) {
    es.values = {0.0, 0.0, 0.0};
    es.vectors = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
    return es;
  }

  Tensor6 s = t;
  for (double &x : s)
    x /= scale;
  const Sym a = unpack_tensor(s);

  const double q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
  const double b00 = a[0][0] - q, b11 = a[1][1] - q, b22 = a[2][2] - q;
  const double p2 =
      (b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2])) / 6.0;
  const double p = std::sqrt(p2);

  bool degenerate = p <= kDegenerateGap;
  double half_det = 0.0;
  std::array<double, 3> lambda{q, q, q};
  if (!degenerate) {
    const double c00 = b00 / p, c11 = b11 / p, c22 = b22 / p;
    const double c01 = a[0][1] / p, c02 = a[0][2] / p, c12 = a[1][2] / p;
    const double det = c00 * (c11 * c22 - c12 * c12) - c01 * (c01 * c22 - c12 * c02) + c02 * (c01 * c12 - c11 * c02);
    half_det = std::clamp(det / 2.0, -1.0, 1.0);
    const double phi = std::acos(half_det) / 3.0;
    lambda[0] = q + 2.0 * p * std::cos(phi);
    lambda[2] = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
    lambda[1] = 3.0 * q - lambda[0] - lambda[2];
    degenerate = (lambda[0] - lambda[1]) <= kDegenerateGap || (lambda[1] - lambda[2]) <= kDegenerateGap;
  }

  if (degenerate) {
    es = jacobi(a);
  } else {
    // Start from the eigenvalue farthest from the other two, then solve the
    // remaining 2x2 problem exactly in its orthogonal complement.
    const int iso = half_det >= 0.0 ? 0 : 2;
    const Vec3 w = isolated_eigenvector(a, lambda[iso]);
    Vec3 u, v;
    orthogonal_complement(w, u, v);
    const Vec3 au = mat_vec(a, u), av = mat_vec(a, v);
    const double m00 = dot(u, au), m01 = dot(u, av), m11 = dot(v, av);
    const double theta = 0.5 * std::atan2(2.0 * m01, m00 - m11);
    const double c = std::cos(theta), sn = std::sin(theta);
    const Vec3 e{c * u[0] + sn * v[0], c * u[1] + sn * v[1], c * u[2] + sn * v[2]};
    const Vec3 f = cross(w, e);
    es.vectors = {w, e, f};
    for (int i = 0; i < 3; ++i)
      es.values[i] = dot(es.vectors[i], mat_vec(a, es.vectors[i]));
  }

  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return es.values[i] > es.values[j]; });
  EigenSystem sorted;
  for (int i = 0; i < 3; ++i) {
    sorted.values[i] = es.values[order[i]] * scale;
    sorted.vectors[i] = es.vectors[order[i]];
    fix_sign(sorted.vectors[i]);
  }
  return sorted;
}

} // namespace dtcmr
