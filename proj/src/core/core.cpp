#include "dtcmr/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dtcmr {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Mask mask_and(const Mask &a, const Mask &b) {
  if (!(a.size == b.size))
    throw ValidationError("mask size mismatch");
  Mask out(a.size);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    out.data[i] = (a.data[i] && b.data[i]) ? 1 : 0;
  return out;
}

Mat3 unpack_tensor(const Tensor6 &t) {
  return {{{t[kDxx], t[kDxy], t[kDxz]}, {t[kDxy], t[kDyy], t[kDyz]}, {t[kDxz], t[kDyz], t[kDzz]}}};
}

Tensor6 pack_tensor(const Mat3 &m) {
  return {m[0][0], m[1][1], m[2][2], m[0][1], m[0][2], m[1][2]};
}

double norm(const Vec3 &v) { return std::sqrt(dot(v, v)); }

Vec3 normalized(const Vec3 &v) {
  const double n = norm(v);
  return {v[0] / n, v[1] / n, v[2] / n};
}

AcquisitionProtocol AcquisitionProtocol::standard() {
  AcquisitionProtocol p;
  const double s = 1.0 / std::sqrt(2.0);
  p.directions = {{s, 0.0, s}, {-s, 0.0, s}, {0.0, s, s}, {0.0, s, -s}, {s, s, 0.0}, {-s, s, 0.0}};
  p.reps_per_weighting = {{0.0, 8}, {150.0, 2}, {600.0, 8}};
  return p;
}

int AcquisitionProtocol::reps_for(double b) const {
  auto it = reps_per_weighting.find(b);
  return it == reps_per_weighting.end() ? 0 : it->second;
}

namespace {

bool collinear(const Vec3 &a, const Vec3 &b) { return norm(cross(a, b)) < 1e-9; }

std::size_t independent_directions(const std::vector<Vec3> &dirs) {
  std::vector<Vec3> kept;
  for (const auto &d : dirs) {
    bool fresh = true;
    for (const auto &k : kept)
      if (collinear(d, k)) {
        fresh = false;
        break;
      }
    if (fresh)
      kept.push_back(d);
  }
  return kept.size();
}

} // namespace

void AcquisitionProtocol::validate() const {
  if (b_values.empty())
    throw ValidationError("protocol has no b-values");
  if (image_size.rows <= 0 || image_size.cols <= 0)
    throw ValidationError("protocol image size must be positive");
  for (double b : b_values)
    if (!(b >= 0.0) || !std::isfinite(b))
      throw ValidationError("b-values must be finite and >= 0");
  for (const auto &d : directions)
    if (std::abs(norm(d) - 1.0) > 1e-12)
      throw ValidationError("gradient directions must have unit norm");
  const double b_max = *std::max_element(b_values.begin(), b_values.end());
  if (b_max > 0.0 && independent_directions(directions) < 6)
    throw ValidationError("at least 6 non-collinear directions are required");
  for (const auto &[b, n] : reps_per_weighting) {
    if (std::find(b_values.begin(), b_values.end(), b) == b_values.end()) {
      std::ostringstream msg;
      msg << "repetition count given for unknown b-value " << b;
      throw ValidationError(msg.str());
    }
    if (n < 0)
      throw ValidationError("repetition counts must be >= 0");
  }
}

const Frame *DwiStack::find(const FrameKey &key) const {
  auto it = std::lower_bound(frames.begin(), frames.end(), key,
                             [](const Frame &f, const FrameKey &k) { return f.key < k; });
  if (it == frames.end() || it->key != key)
    return nullptr;
  return &*it;
}

void DwiStack::validate() const {
  protocol.validate();
  if (!(mask.size == protocol.image_size))
    throw ValidationError("mask size differs from protocol image size");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto &f = frames[i];
    if (!(f.image.size == protocol.image_size))
      throw ValidationError("frame size differs from protocol image size");
    if (i > 0 && !(frames[i - 1].key < f.key))
      throw ValidationError("frames must be sorted by key without duplicates");
    for (double v : f.image.data)
      if (!(v >= 0.0))
        throw ValidationError("magnitude frames must be non-negative");
  }
}

Tensor6 TensorField::at(std::size_t pixel) const {
  Tensor6 t;
  const std::size_t n = size.pixels();
  for (int c = 0; c < kTensorChannels; ++c)
    t[c] = components[c * n + pixel];
  return t;
}

void TensorField::set(std::size_t pixel, const Tensor6 &t) {
  const std::size_t n = size.pixels();
  for (int c = 0; c < kTensorChannels; ++c)
    components[c * n + pixel] = t[c];
}

void TensorField::clear_background() {
  const std::size_t n = size.pixels();
  for (std::size_t p = 0; p < n; ++p)
    if (!mask.data[p])
      for (int c = 0; c < kTensorChannels; ++c)
        components[c * n + p] = 0.0;
}

} // namespace dtcmr
