#include "dtcmr/registration.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <fftw3.h>

namespace dtcmr::registration {
namespace {

using cplx = std::complex<double>;

// The FFTW planner is not re-entrant; only fftw_execute may run concurrently.
std::mutex planner_mutex;

// Unnormalised 2-D DFT of a complex row-major buffer.
void dft2(std::vector<cplx> &buf, ImageSize size, int sign) {
  auto *data = reinterpret_cast<fftw_complex *>(buf.data());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex);
    plan = fftw_plan_dft_2d(size.rows, size.cols, data, data, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex);
  fftw_destroy_plan(plan);
}

std::vector<cplx> forward(const Image &img) {
  std::vector<cplx> buf(img.data.begin(), img.data.end());
  dft2(buf, img.size, FFTW_FORWARD);
  return buf;
}

// Signed frequency of FFT bin k for a length-n transform.
int frequency(int k, int n) { return k <= (n - 1) / 2 ? k : k - n; }

bool is_constant(const Image &img) {
  for (double v : img.data)
    if (v != img.data.front())
      return false;
  return true;
}

// Per-axis phase factors for a shift of `d` pixels; the Nyquist bin of an even
// length keeps only the real part so that real inputs stay real.
std::vector<cplx> ramp(int n, double d) {
  std::vector<cplx> r(n);
  for (int k = 0; k < n; ++k) {
    const int f = frequency(k, n);
    const double phase = -2.0 * std::numbers::pi * f * d / n;
    if (n % 2 == 0 && k == n / 2)
      r[k] = std::cos(phase);
    else
      r[k] = std::polar(1.0, phase);
  }
  return r;
}

} // namespace

Image apply_shift(const Image &image, Shift shift) {
  if (shift.dy == 0.0 && shift.dx == 0.0)
    return image;
  const ImageSize size = image.size;
  auto spec = forward(image);
  const auto ry = ramp(size.rows, shift.dy);
  const auto rx = ramp(size.cols, shift.dx);
  for (int r = 0; r < size.rows; ++r)
    for (int c = 0; c < size.cols; ++c)
      spec[static_cast<std::size_t>(r) * size.cols + c] *= ry[r] * rx[c];
  dft2(spec, size, FFTW_BACKWARD);
  Image out(size);
  const double inv = 1.0 / static_cast<double>(size.pixels());
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = spec[i].real() * inv;
  return out;
}

Shift estimate_shift(const Image &reference, const Image &moving, int upsample_factor) {
  if (!(reference.size == moving.size))
    throw ValidationError("estimate_shift: image sizes differ");
  if (upsample_factor < 1)
    throw ValidationError("estimate_shift: upsample_factor must be >= 1");
  if (is_constant(reference) || is_constant(moving))
    throw NumericalError("degenerate correlation");

  const ImageSize size = reference.size;
  const int nr = size.rows, nc = size.cols;
  const auto fr = forward(reference);
  const auto fm = forward(moving);
  std::vector<cplx> product(fr.size());
  for (std::size_t i = 0; i < product.size(); ++i)
    product[i] = fr[i] * std::conj(fm[i]);

  std::vector<cplx> cc = product;
  dft2(cc, size, FFTW_BACKWARD);
  std::size_t peak = 0;
  for (std::size_t i = 1; i < cc.size(); ++i)
    if (std::abs(cc[i]) > std::abs(cc[peak]))
      peak = i;
  double dy = frequency(static_cast<int>(peak / nc), nr);
  double dx = frequency(static_cast<int>(peak % nc), nc);
  if (upsample_factor == 1)
    return {dy, dx};

  // Evaluate the inverse DFT of the cross-power spectrum on a fine grid
  // centred on the coarse peak: out = Er * P * Ec.
  const int window = static_cast<int>(std::ceil(1.5 * upsample_factor));
  const int centre = window / 2;
  const double usf = upsample_factor;
  const double two_pi = 2.0 * std::numbers::pi;

  Eigen::MatrixXcd er(window, nr), ec(nc, window), p(nr, nc);
  for (int i = 0; i < window; ++i) {
    const double y = dy + (i - centre) / usf;
    for (int k = 0; k < nr; ++k)
      er(i, k) = std::polar(1.0, two_pi * frequency(k, nr) * y / nr);
  }
  for (int j = 0; j < window; ++j) {
    const double x = dx + (j - centre) / usf;
    for (int k = 0; k < nc; ++k)
      ec(k, j) = std::polar(1.0, two_pi * frequency(k, nc) * x / nc);
  }
  for (int r = 0; r < nr; ++r)
    for (int c = 0; c < nc; ++c)
      p(r, c) = product[static_cast<std::size_t>(r) * nc + c];
  const Eigen::MatrixXcd fine = er * p * ec;

  int best_i = centre, best_j = centre;
  double best = std::abs(fine(centre, centre));
  for (int i = 0; i < window; ++i)
    for (int j = 0; j < window; ++j)
      if (std::abs(fine(i, j)) > best) {
        best = std::abs(fine(i, j));
        best_i = i;
        best_j = j;
      }
  return {dy + (best_i - centre) / usf, dx + (best_j - centre) / usf};
}

namespace {

struct Group {
  double b;
  int repetition;
  std::vector<std::size_t> frames;
  Image mean;
};

std::vector<Group> group_frames(const DwiStack &stack, bool by_direction) {
  std::vector<Group> groups;
  for (std::size_t i = 0; i < stack.frames.size(); ++i) {
    const FrameKey &k = stack.frames[i].key;
    Group *g = nullptr;
    if (by_direction)
      for (auto &cand : groups)
        if (cand.b == k.b && cand.repetition == k.repetition)
          g = &cand;
    if (!g) {
      groups.push_back({k.b, k.repetition, {}, Image(stack.frames[i].image.size)});
      g = &groups.back();
    }
    g->frames.push_back(i);
  }
  for (auto &g : groups) {
    for (std::size_t i : g.frames) {
      const auto &src = stack.frames[i].image.data;
      for (std::size_t p = 0; p < src.size(); ++p)
        g.mean.data[p] += src[p];
    }
    if (g.frames.size() > 1)
      for (double &v : g.mean.data)
        v /= static_cast<double>(g.frames.size());
  }
  return groups;
}

} // namespace

DwiStack register_stack(const DwiStack &stack, const RegistrationOptions &options) {
  if (stack.frames.empty())
    throw ValidationError("register_stack: empty stack");

  const auto groups = group_frames(stack, options.group_directions);
  auto reference_for = [&](const Group &g) -> const Group & {
    if (options.policy == ReferencePolicy::FirstFramePerWeighting) {
      for (const auto &cand : groups)
        if (cand.b == g.b)
          return cand;
    }
    for (const auto &cand : groups)
      if (AcquisitionProtocol::is_reference_weighting(cand.b))
        return cand;
    return groups.front();
  };

  DwiStack out = stack;
  out.registration.clear();
  for (const auto &g : groups) {
    const Group &ref = reference_for(g);
    Shift s;
    if (&ref != &g)
      s = estimate_shift(ref.mean, g.mean, options.upsample_factor);
    for (std::size_t i : g.frames) {
      out.registration.push_back({stack.frames[i].key, s.dy, s.dx});
      if (s.dy == 0.0 && s.dx == 0.0)
        continue;
      Image &img = out.frames[i].image;
      img = apply_shift(img, s);
      // Fourier interpolation can ring slightly below zero on magnitude data.
      for (double &v : img.data)
        v = std::max(v, 0.0);
    }
  }
  std::sort(out.registration.begin(), out.registration.end(),
            [](const FrameShift &a, const FrameShift &b) { return a.key < b.key; });
  return out;
}

} // namespace dtcmr::registration
