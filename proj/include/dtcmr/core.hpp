#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtcmr {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Thrown when an input violates a documented precondition.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a computation produces non-finite or otherwise unusable numbers.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ImageSize {
  int rows = 128;
  int cols = 128;

  std::size_t pixels() const { return static_cast<std::size_t>(rows) * cols; }
  bool operator==(const ImageSize &) const = default;
};

/// Row-major real image.
struct Image {
  ImageSize size;
  std::vector<double> data;

  Image() = default;
  explicit Image(ImageSize s, double fill = 0.0) : size(s), data(s.pixels(), fill) {}

  double &at(int r, int c) { return data[static_cast<std::size_t>(r) * size.cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * size.cols + c]; }
};

/// Boolean image stored as bytes (0/1).
struct Mask {
  ImageSize size;
  std::vector<std::uint8_t> data;

  Mask() = default;
  explicit Mask(ImageSize s, bool fill = false) : size(s), data(s.pixels(), fill ? 1 : 0) {}

  bool at(int r, int c) const { return data[static_cast<std::size_t>(r) * size.cols + c] != 0; }
  void set(int r, int c, bool v) { data[static_cast<std::size_t>(r) * size.cols + c] = v ? 1 : 0; }
  std::size_t count() const;
};

Mask mask_and(const Mask &a, const Mask &b);

/// Channel order of the packed tensor: (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz).
enum TensorChannel : int { kDxx = 0, kDyy, kDzz, kDxy, kDxz, kDyz };
inline constexpr int kTensorChannels = 6;

using Tensor6 = std::array<double, kTensorChannels>;

Mat3 unpack_tensor(const Tensor6 &t);
Tensor6 pack_tensor(const Mat3 &m);

struct AcquisitionProtocol {
  std::vector<double> b_values{0.0, 150.0, 600.0};
  std::vector<Vec3> directions;
  std::map<double, int> reps_per_weighting;
  ImageSize image_size{128, 128};
  double pixel_spacing_mm = 2.8;

  /// Six-direction, 8/2/8 repetition protocol at b = {0, 150, 600} s/mm^2.
  static AcquisitionProtocol standard();

  /// b = 0 frames carry no gradient direction and are stored once per repetition.
  static bool is_reference_weighting(double b) { return b == 0.0; }
  int directions_for(double b) const {
    return is_reference_weighting(b) ? 1 : static_cast<int>(directions.size());
  }
  int reps_for(double b) const;

  /// Throws ValidationError when any invariant is violated.
  void validate() const;
};

struct FrameKey {
  double b = 0.0;
  int direction = 0;
  int repetition = 0;

  auto operator<=>(const FrameKey &) const = default;
};

struct Frame {
  FrameKey key;
  Image image;
};

struct FrameShift {
  FrameKey key;
  double dy = 0.0;
  double dx = 0.0;
};

struct DwiStack {
  AcquisitionProtocol protocol;
  std::vector<Frame> frames;
  Mask mask;
  /// Shifts applied by registration, one per frame, empty when unregistered.
  std::vector<FrameShift> registration;

  const Frame *find(const FrameKey &key) const;
  void validate() const;
};

/// Six-channel planar image of tensor components in mm^2/s.
struct TensorField {
  ImageSize size;
  std::vector<double> components; // channel-major: [channel][row][col]
  Mask mask;

  TensorField() = default;
  TensorField(ImageSize s, Mask m)
      : size(s), components(s.pixels() * kTensorChannels, 0.0), mask(std::move(m)) {}

  double *channel(int c) { return components.data() + static_cast<std::size_t>(c) * size.pixels(); }
  const double *channel(int c) const {
    return components.data() + static_cast<std::size_t>(c) * size.pixels();
  }
  Tensor6 at(std::size_t pixel) const;
  void set(std::size_t pixel, const Tensor6 &t);
  /// Zero every component outside the mask.
  void clear_background();
};

struct MapSet {
  Image md;  // mm^2/s
  Image fa;  // [0, 1]
  Image ha;  // degrees, [-90, 90]
  Image e2a; // degrees, [-90, 90]
  Mask mask;
  /// Per-voxel bitwise combination of MapFlag values.
  std::vector<std::uint8_t> flags;
};

enum MapFlag : std::uint8_t {
  kUndefinedAngles = 1,
  kNearDegenerate = 2,
  kNegativeEigenvalue = 4,
};

struct EigenSystem {
  Vec3 values;               // descending
  std::array<Vec3, 3> vectors; // vectors[i] pairs with values[i]
};

/// Eigen-decomposition of a packed symmetric 3x3 tensor.
///
/// Closed-form trigonometric eigenvalues with eigenvectors built from the most
/// isolated eigenvalue first; falls back to cyclic Jacobi rotations when two
/// eigenvalues coincide to within 1e-12 of the matrix scale. Each eigenvector
/// is signed so that its largest-magnitude entry is positive.
EigenSystem eig_sym3(const Tensor6 &t);

inline double dot(const Vec3 &a, const Vec3 &b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3 &a, const Vec3 &b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3 &v);
Vec3 normalized(const Vec3 &v);

} // namespace dtcmr
