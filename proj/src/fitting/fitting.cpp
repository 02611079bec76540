#include "dtcmr/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace dtcmr::fitting {

std::string scheme_label(SchemeVariant v) {
  switch (v) {
  case SchemeVariant::First:
    return "F";
  case SchemeVariant::Centre:
    return "C";
  case SchemeVariant::Last:
    return "L";
  case SchemeVariant::Random:
    return "R";
  case SchemeVariant::FirstPlus1:
    return "F1";
  }
  return "?";
}

SchemeVariant parse_scheme(const std::string &label) {
  if (label == "F" || label == "First")
    return SchemeVariant::First;
  if (label == "C" || label == "Centre")
    return SchemeVariant::Centre;
  if (label == "L" || label == "Last")
    return SchemeVariant::Last;
  if (label == "R" || label == "Random")
    return SchemeVariant::Random;
  if (label == "F1" || label == "First+1" || label == "FirstPlus1")
    return SchemeVariant::FirstPlus1;
  throw ValidationError("unknown sampling scheme '" + label + "'");
}

BreathHoldBudget BreathHoldBudget::one() { return {"1BH", {{0.0, 1}, {150.0, 0}, {600.0, 1}}}; }
BreathHoldBudget BreathHoldBudget::three() { return {"3BH", {{0.0, 2}, {150.0, 1}, {600.0, 2}}}; }
BreathHoldBudget BreathHoldBudget::five() { return {"5BH", {{0.0, 4}, {150.0, 1}, {600.0, 4}}}; }

BreathHoldBudget BreathHoldBudget::parse(const std::string &name) {
  if (name == "1BH")
    return one();
  if (name == "3BH")
    return three();
  if (name == "5BH")
    return five();
  throw ValidationError("unknown breath-hold budget '" + name + "'");
}

std::vector<int> select_indices(int available, int m, const SamplingScheme &scheme, double b_value) {
  if (m < 1)
    throw ValidationError("at least one repetition must be kept");
  const int needed = scheme.variant == SchemeVariant::FirstPlus1 ? m + 1 : m;
  if (available < needed) {
    std::ostringstream msg;
    msg << "insufficient repetitions for b=" << b_value << ": need " << needed << ", have " << available;
    throw ValidationError(msg.str());
  }
  std::vector<int> idx(m);
  switch (scheme.variant) {
  case SchemeVariant::First:
    std::iota(idx.begin(), idx.end(), 0);
    break;
  case SchemeVariant::FirstPlus1:
    std::iota(idx.begin(), idx.end(), 1);
    break;
  case SchemeVariant::Centre:
    std::iota(idx.begin(), idx.end(), (available - m) / 2);
    break;
  case SchemeVariant::Last:
    std::iota(idx.begin(), idx.end(), available - m);
    break;
  case SchemeVariant::Random: {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(scheme.seed),
                                     static_cast<std::uint32_t>(scheme.seed >> 32),
                                     static_cast<std::uint32_t>(std::lround(b_value * 1000.0))};
    std::seed_seq seq(words.begin(), words.end());
    std::mt19937_64 rng(seq);
    std::vector<int> all(available);
    std::iota(all.begin(), all.end(), 0);
    // Partial Fisher-Yates.
    for (int i = 0; i < m; ++i) {
      std::uniform_int_distribution<int> pick(i, available - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    idx.assign(all.begin(), all.begin() + m);
    std::sort(idx.begin(), idx.end());
    break;
  }
  }
  return idx;
}

DwiStack select_repetitions(const DwiStack &stack, const SamplingScheme &scheme, const BreathHoldBudget &budget) {
  DwiStack out;
  out.protocol = stack.protocol;
  out.mask = stack.mask;
  out.protocol.b_values.clear();
  out.protocol.reps_per_weighting.clear();
  for (const auto &[b, m] : budget.reps) {
    if (m == 0)
      continue;
    const int available = stack.protocol.reps_for(b);
    const auto idx = select_indices(available, m, scheme, b);
    out.protocol.b_values.push_back(b);
    out.protocol.reps_per_weighting[b] = m;
    for (int k = 0; k < m; ++k) {
      for (int dir = 0; dir < stack.protocol.directions_for(b); ++dir) {
        const Frame *f = stack.find({b, dir, idx[k]});
        if (!f) {
          std::ostringstream msg;
          msg << "missing frame b=" << b << " dir=" << dir << " rep=" << idx[k];
          throw ValidationError(msg.str());
        }
        out.frames.push_back({{b, dir, k}, f->image});
      }
    }
  }
  std::sort(out.frames.begin(), out.frames.end(), [](const Frame &a, const Frame &b) { return a.key < b.key; });
  return out;
}

std::vector<AveragedFrame> average_repetitions(const DwiStack &stack) {
  std::vector<AveragedFrame> out;
  std::size_t i = 0;
  while (i < stack.frames.size()) {
    const double b = stack.frames[i].key.b;
    const int dir = stack.frames[i].key.direction;
    AveragedFrame avg;
    avg.b = b;
    avg.direction = dir;
    if (!AcquisitionProtocol::is_reference_weighting(b))
      avg.gradient = stack.protocol.directions.at(dir);
    avg.image = Image(stack.frames[i].image.size);
    int count = 0;
    for (; i < stack.frames.size() && stack.frames[i].key.b == b && stack.frames[i].key.direction == dir; ++i) {
      const auto &src = stack.frames[i].image.data;
      for (std::size_t p = 0; p < src.size(); ++p)
        avg.image.data[p] += src[p];
      ++count;
    }
    if (count > 1)
      for (double &v : avg.image.data)
        v /= count;
    out.push_back(std::move(avg));
  }
  return out;
}

LlsDesign::LlsDesign(const std::vector<AveragedFrame> &frames) {
  const auto n = static_cast<Eigen::Index>(frames.size());
  design_.resize(n, 7);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double b = frames[i].b;
    const Vec3 &g = frames[i].gradient;
    design_.row(i) << 1.0, -b * g[0] * g[0], -b * g[1] * g[1], -b * g[2] * g[2], -2.0 * b * g[0] * g[1],
        -2.0 * b * g[0] * g[2], -2.0 * b * g[1] * g[2];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design_);
  if (n < 7 || qr.rank() < 7)
    throw ValidationError("rank-deficient diffusion design: need 7 independent (b, g) measurements, have rank " +
                          std::to_string(qr.rank()));
  solver_ = qr.solve(Eigen::MatrixXd::Identity(n, n));
}

Eigen::Matrix<double, 7, 1> LlsDesign::solve(const Eigen::VectorXd &log_signal) const { return solver_ * log_signal; }

LlsFit lls_fit(const std::vector<AveragedFrame> &frames, const Mask &mask) {
  if (frames.empty())
    throw ValidationError("lls_fit: no measurements");
  const LlsDesign design(frames);
  const ImageSize size = frames.front().image.size;
  if (!(mask.size == size))
    throw ValidationError("lls_fit: mask size mismatch");

  LlsFit fit;
  fit.tensors = TensorField(size, Mask(size));
  fit.log_s0 = Image(size);
  Eigen::VectorXd y(design.measurements());
  for (std::size_t p = 0; p < size.pixels(); ++p) {
    if (!mask.data[p])
      continue;
    bool positive = true;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const double s = frames[k].image.data[p];
      if (!(s > 0.0)) {
        positive = false;
        break;
      }
      y[static_cast<Eigen::Index>(k)] = std::log(s);
    }
    if (!positive) {
      ++fit.excluded_voxels;
      continue;
    }
    const auto x = design.solve(y);
    const Tensor6 t{x[1], x[2], x[3], x[4], x[5], x[6]};
    fit.tensors.set(p, t);
    fit.tensors.mask.data[p] = 1;
    fit.log_s0.data[p] = x[0];
    if (eig_sym3(t).values[2] < 0.0)
      ++fit.non_psd_voxels;
  }
  return fit;
}

LlsFit fit_stack(const DwiStack &stack) { return lls_fit(average_repetitions(stack), stack.mask); }

} // namespace dtcmr::fitting
