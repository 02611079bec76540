#include "dtcmr/denoise.hpp"

#include "dtcmr/maps.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace dtcmr::denoise {

double NormStats::normalize(int channel, double v) const {
  if (mode == NormMode::Fixed)
    return v * kFixedUnit / fixed_scale;
  return (v - mean[channel]) / std[channel];
}

double NormStats::denormalize(int channel, double v) const {
  if (mode == NormMode::Fixed)
    return v * fixed_scale / kFixedUnit;
  return v * std[channel] + mean[channel];
}

namespace {

Planes map_masked(const Planes &in, const Mask &mask, auto &&f) {
  if (in.channels != kTensorChannels || mask.size.rows != in.rows || mask.size.cols != in.cols)
    throw ValidationError("tensor planes and mask disagree in shape");
  Planes out(in.channels, in.rows, in.cols);
  const std::size_t plane = in.plane();
  for (int c = 0; c < in.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (mask.data[p])
        out.data[c * plane + p] = f(c, in.data[c * plane + p]);
  return out;
}

} // namespace

Planes NormStats::normalize(const Planes &raw, const Mask &mask) const {
  return map_masked(raw, mask, [this](int c, double v) { return normalize(c, v); });
}

Planes NormStats::denormalize(const Planes &normalized, const Mask &mask) const {
  return map_masked(normalized, mask, [this](int c, double v) { return denormalize(c, v); });
}

void NormStats::validate() const {
  if (mode == NormMode::Fixed) {
    if (!(fixed_scale > 0.0))
      throw ValidationError("fixed normalisation scale must be positive");
    return;
  }
  for (int c = 0; c < kTensorChannels; ++c)
    if (!(std[c] > 0.0) || !std::isfinite(mean[c]))
      throw ValidationError("invalid normalisation statistics for channel " + std::to_string(c));
}

NormStats compute_norm_stats(const std::vector<const TensorField *> &fields, NormMode mode) {
  if (fields.empty())
    throw ValidationError("compute_norm_stats: empty dataset");
  NormStats s;
  s.mode = mode;
  if (mode == NormMode::Fixed)
    return s;
  std::array<double, kTensorChannels> sum{};
  std::size_t n = 0;
  for (const TensorField *f : fields)
    for (std::size_t p = 0; p < f->size.pixels(); ++p)
      if (f->mask.data[p]) {
        ++n;
        for (int c = 0; c < kTensorChannels; ++c)
          sum[c] += f->channel(static_cast<TensorChannel>(c))[p];
      }
  if (n == 0)
    throw ValidationError("compute_norm_stats: no masked voxels");
  for (int c = 0; c < kTensorChannels; ++c)
    s.mean[c] = sum[c] / static_cast<double>(n);
  std::array<double, kTensorChannels> ss{};
  for (const TensorField *f : fields)
    for (std::size_t p = 0; p < f->size.pixels(); ++p)
      if (f->mask.data[p])
        for (int c = 0; c < kTensorChannels; ++c) {
          const double d = f->channel(static_cast<TensorChannel>(c))[p] - s.mean[c];
          ss[c] += d * d;
        }
  for (int c = 0; c < kTensorChannels; ++c) {
    s.std[c] = std::sqrt(ss[c] / static_cast<double>(n));
    if (!(s.std[c] > 1e-12 * std::abs(s.mean[c])) || !(s.std[c] > 0.0))
      throw ValidationError("zero-variance channel " + std::to_string(c));
  }
  return s;
}

nlohmann::json norm_to_json(const NormStats &n) {
  return {{"mode", n.mode == NormMode::Fixed ? "fixed" : "zscore"},
          {"mean", n.mean},
          {"std", n.std},
          {"fixed_scale", n.fixed_scale},
          {"fixed_unit", NormStats::kFixedUnit},
          {"input_scale", n.input_scale}};
}

NormStats norm_from_json(const nlohmann::json &j) {
  NormStats n;
  try {
    n.mode = j.at("mode").get<std::string>() == "fixed" ? NormMode::Fixed : NormMode::ZScore;
    n.mean = j.at("mean").get<std::array<double, kTensorChannels>>();
    n.std = j.at("std").get<std::array<double, kTensorChannels>>();
    n.fixed_scale = j.value("fixed_scale", n.fixed_scale);
    n.input_scale = j.value("input_scale", n.input_scale);
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("bad normalisation record: ") + e.what());
  }
  n.validate();
  return n;
}

Planes to_planes(const TensorField &t) {
  Planes p(kTensorChannels, t.size.rows, t.size.cols);
  p.data = t.components;
  return p;
}

TensorField to_tensor_field(const Planes &p, const Mask &mask) {
  if (p.channels != kTensorChannels)
    throw ValidationError("tensor planes need 6 channels");
  TensorField t({p.rows, p.cols}, mask);
  t.components = p.data;
  t.clear_background();
  return t;
}

SubjectRecord make_record(int id, const DwiStack &registered_stack) {
  SubjectRecord r;
  r.id = id;
  r.stack = registered_stack;
  r.reference = fitting::fit_stack(registered_stack).tensors;
  r.reference.mask = mask_and(r.reference.mask, registered_stack.mask);
  return r;
}

Planes make_input(const DwiStack &subsampled, InputKind kind) {
  if (kind == InputKind::Tensor)
    return to_planes(fitting::fit_stack(subsampled).tensors);
  const auto frames = fitting::average_repetitions(subsampled);
  const ImageSize size = subsampled.mask.size;
  Planes p(static_cast<int>(frames.size()), size.rows, size.cols);
  for (std::size_t k = 0; k < frames.size(); ++k)
    for (std::size_t q = 0; q < size.pixels(); ++q)
      if (subsampled.mask.data[q])
        p.data[k * size.pixels() + q] = frames[k].image.data[q];
  return p;
}

std::vector<Example> assemble_dataset(const std::vector<SubjectRecord> &records, const std::vector<int> &subjects,
                                      const std::vector<fitting::BreathHoldBudget> &budgets,
                                      const std::vector<fitting::SchemeVariant> &schemes, InputKind kind) {
  std::vector<Example> out;
  for (int s : subjects) {
    if (s < 0 || s >= static_cast<int>(records.size()))
      throw ValidationError("assemble_dataset: unknown subject " + std::to_string(s));
    const SubjectRecord &rec = records[s];
    if (rec.reference.mask.count() == 0)
      throw ValidationError("assemble_dataset: subject " + std::to_string(rec.id) + " has no reference");
    for (const auto &budget : budgets)
      for (auto scheme : schemes) {
        Example ex;
        ex.subject = rec.id;
        ex.budget = budget.name;
        ex.scheme = scheme;
        ex.input = make_input(fitting::select_repetitions(rec.stack, {scheme, 0}, budget), kind);
        ex.target = to_planes(rec.reference);
        ex.mask = rec.reference.mask;
        out.push_back(std::move(ex));
      }
  }
  return out;
}

Split split_subjects(int n, const std::array<double, 3> &ratios, std::uint64_t seed) {
  if (n < 1)
    throw ValidationError("split_subjects: no subjects");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw ValidationError("split ratios must be non-negative and sum to 1");
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i)
    ids[i] = i;
  std::mt19937_64 rng(seed);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(ids[i], ids[pick(rng)]);
  }
  const int n_train = static_cast<int>(std::lround(n * ratios[0]));
  const int n_val = std::min(n - n_train, static_cast<int>(std::lround(n * ratios[1])));
  Split s;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.validation.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  s.test.assign(ids.begin() + n_train + n_val, ids.end());
  for (auto *v : {&s.train, &s.validation, &s.test})
    std::sort(v->begin(), v->end());
  return s;
}

std::vector<int> bootstrap(const std::vector<int> &ids, std::uint64_t seed) {
  if (ids.empty())
    throw ValidationError("bootstrap: empty sample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  std::vector<int> out(ids.size());
  for (int &v : out)
    v = ids[pick(rng)];
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

void rotate_tensor(double c, double s, double *t) {
  // t holds Dxx, Dyy, Dzz, Dxy, Dxz, Dyz; R = [[c, -s, 0], [s, c, 0], [0, 0, 1]].
  const double xx = t[0], yy = t[1], xy = t[3], xz = t[4], yz = t[5];
  t[0] = c * c * xx - 2.0 * c * s * xy + s * s * yy;
  t[1] = s * s * xx + 2.0 * c * s * xy + c * c * yy;
  t[3] = c * s * (xx - yy) + (c * c - s * s) * xy;
  t[4] = c * xz - s * yz;
  t[5] = s * xz + c * yz;
}

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

} // namespace

AugmentedPair transform_pair(const Planes &input, const Planes &target, const Mask &mask, double angle_deg, int top,
                             int left, int crop_rows, int crop_cols, bool reorient_input, bool reorient_target) {
  const int rows = mask.size.rows, cols = mask.size.cols;
  if (input.rows != rows || input.cols != cols || target.rows != rows || target.cols != cols)
    throw ValidationError("augment: input, target and mask differ in size");
  if (crop_rows < 1 || crop_cols < 1 || crop_rows > rows || crop_cols > cols || top < 0 || left < 0 ||
      top + crop_rows > rows || left + crop_cols > cols)
    throw ValidationError("augment: crop exceeds image bounds");
  if ((reorient_input && input.channels != kTensorChannels) || (reorient_target && target.channels != kTensorChannels))
    throw ValidationError("augment: only 6-channel tensor planes can be reoriented");

  const double theta = angle_deg * std::numbers::pi / 180.0;
  double c = std::cos(theta), s = std::sin(theta);
  c = std::abs(c) < 1e-12 ? 0.0 : c;
  s = std::abs(s) < 1e-12 ? 0.0 : s;
  const double cy = top + (crop_rows - 1) / 2.0, cx = left + (crop_cols - 1) / 2.0;

  AugmentedPair out{Planes(input.channels, crop_rows, crop_cols), Planes(target.channels, crop_rows, crop_cols),
                    Mask({crop_rows, crop_cols})};
  for (int i = 0; i < crop_rows; ++i) {
    for (int j = 0; j < crop_cols; ++j) {
      const double ox = (left + j) - cx, oy = cy - (top + i);
      const double sx = c * ox + s * oy, sy = -s * ox + c * oy;
      const double rs = snap(cy - sy), cs = snap(cx + sx);
      const int r0 = static_cast<int>(std::floor(rs)), c0 = static_cast<int>(std::floor(cs));
      const double fr = rs - r0, fc = cs - c0;
      const double w[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
      const int nr[4] = {r0, r0, r0 + 1, r0 + 1}, nc[4] = {c0, c0 + 1, c0, c0 + 1};
      bool inside = true;
      for (int q = 0; q < 4; ++q) {
        if (w[q] == 0.0)
          continue;
        if (nr[q] < 0 || nr[q] >= rows || nc[q] < 0 || nc[q] >= cols || !mask.at(nr[q], nc[q]))
          inside = false;
      }
      out.mask.set(i, j, inside);
      auto sample = [&](const Planes &src, Planes &dst) {
        for (int ch = 0; ch < src.channels; ++ch) {
          double v = 0.0;
          for (int q = 0; q < 4; ++q)
            if (w[q] != 0.0 && nr[q] >= 0 && nr[q] < rows && nc[q] >= 0 && nc[q] < cols)
              v += w[q] * src.at(ch, nr[q], nc[q]);
          dst.at(ch, i, j) = v;
        }
      };
      sample(input, out.input);
      sample(target, out.target);
    }
  }
  auto reorient = [&](Planes &p) {
    const std::size_t plane = p.plane();
    double t[kTensorChannels];
    for (std::size_t q = 0; q < plane; ++q) {
      for (int ch = 0; ch < kTensorChannels; ++ch)
        t[ch] = p.data[ch * plane + q];
      rotate_tensor(c, s, t);
      for (int ch = 0; ch < kTensorChannels; ++ch)
        p.data[ch * plane + q] = t[ch];
    }
  };
  if (s != 0.0 || c != 1.0) {
    if (reorient_input)
      reorient(out.input);
    if (reorient_target)
      reorient(out.target);
  }
  return out;
}

AugmentedPair augment(const Example &example, const AugmentConfig &config, std::uint64_t seed) {
  const int rows = example.mask.size.rows, cols = example.mask.size.cols;
  if (config.crop_rows > rows || config.crop_cols > cols)
    throw ValidationError("augment: crop exceeds image bounds");
  std::mt19937_64 rng(seed);
  double angle = 0.0;
  if (config.max_rotation_deg > 0.0) {
    std::uniform_real_distribution<double> u(-config.max_rotation_deg, config.max_rotation_deg);
    angle = u(rng);
  }
  std::uniform_int_distribution<int> jitter(-config.centre_jitter, config.centre_jitter);
  const int dy = jitter(rng), dx = jitter(rng);
  const auto centre = maps::mask_centroid(example.mask);
  const int top = std::clamp(static_cast<int>(std::lround(centre.row)) + dy - config.crop_rows / 2, 0,
                             rows - config.crop_rows);
  const int left = std::clamp(static_cast<int>(std::lround(centre.col)) + dx - config.crop_cols / 2, 0,
                              cols - config.crop_cols);
  return transform_pair(example.input, example.target, example.mask, angle, top, left, config.crop_rows,
                        config.crop_cols, config.reorient_input, config.reorient_target);
}

} // namespace dtcmr::denoise
