#include "dtcmr/phantom.hpp"
#include "dtcmr/io.hpp"
#include "dtcmr/registration.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace dtcmr::phantom {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Independent, reproducible stream per (seed, purpose, coordinates).
std::mt19937_64 stream(std::uint64_t seed, std::initializer_list<std::uint32_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  words.insert(words.end(), tags.begin(), tags.end());
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

enum StreamTag : std::uint32_t { kNoiseStream = 1, kMotionStream = 2, kSubjectStream = 3 };

Vec3 combine(double a, const Vec3 &u, double b, const Vec3 &v) {
  return {a * u[0] + b * v[0], a * u[1] + b * v[1], a * u[2] + b * v[2]};
}

} // namespace

void PhantomConfig::validate() const {
  if (!(endo_radius > 0.0 && endo_radius < epi_radius))
    throw ValidationError("phantom radii must satisfy 0 < endo_radius < epi_radius");
  if (lv_centre.row - epi_radius < 0.0 || lv_centre.col - epi_radius < 0.0 ||
      lv_centre.row + epi_radius > image_size.rows - 1 || lv_centre.col + epi_radius > image_size.cols - 1)
    throw ValidationError("phantom radii exceed the image bounds");
  const auto &l = eigenvalue_profile;
  if (!(l[2] > 0.0 && l[0] >= l[1] && l[1] >= l[2]))
    throw ValidationError("phantom eigenvalues must be positive and descending");
  if (!(s0_level > 0.0))
    throw ValidationError("phantom s0_level must be positive");
}

void NoiseProfile::validate() const {
  if (!(snr > 0.0))
    throw ValidationError("noise snr must be > 0");
  if (!(first_rep_degradation >= 1.0))
    throw ValidationError("first_rep_degradation must be >= 1");
  if (!(motion_shift_sigma >= 0.0))
    throw ValidationError("motion_shift_sigma must be >= 0");
}

Phantom generate_phantom(const PhantomConfig &config) {
  config.validate();
  const ImageSize size = config.image_size;
  Phantom ph;
  ph.s0 = config.s0_level;
  ph.mask = Mask(size);
  for (int r = 0; r < size.rows; ++r)
    for (int c = 0; c < size.cols; ++c) {
      const double rho = std::hypot(r - config.lv_centre.row, c - config.lv_centre.col);
      ph.mask.set(r, c, rho >= config.endo_radius && rho <= config.epi_radius);
    }
  ph.basis = maps::local_basis(ph.mask, config.lv_centre);
  ph.tensors = TensorField(size, ph.mask);
  ph.depth = Image(size);
  ph.ha = Image(size);
  ph.e2a = Image(size);

  const auto &lam = config.eigenvalue_profile;
  for (int r = 0; r < size.rows; ++r) {
    for (int c = 0; c < size.cols; ++c) {
      if (!ph.mask.at(r, c))
        continue;
      const std::size_t p = static_cast<std::size_t>(r) * size.cols + c;
      const double rho = std::hypot(r - config.lv_centre.row, c - config.lv_centre.col);
      const double depth = (rho - config.endo_radius) / (config.epi_radius - config.endo_radius);
      const double ha = config.ha_endo + depth * (config.ha_epi - config.ha_endo);
      const double e2a = config.e2a_mean + config.e2a_transmural_range * (depth - 0.5);

      const Vec3 &rad = ph.basis.radial[p];
      const Vec3 &circ = ph.basis.circumferential[p];
      const Vec3 &lon = ph.basis.longitudinal[p];
      const Vec3 e1 = combine(std::cos(ha * kDegToRad), circ, std::sin(ha * kDegToRad), lon);
      const Vec3 cf = maps::cross_fiber_direction(e1, rad, circ, lon);
      const Vec3 e2 = combine(std::cos(e2a * kDegToRad), cf, std::sin(e2a * kDegToRad), rad);
      const Vec3 e3 = cross(e1, e2);

      Mat3 d{};
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          d[i][j] = lam[0] * e1[i] * e1[j] + lam[1] * e2[i] * e2[j] + lam[2] * e3[i] * e3[j];
      ph.tensors.set(p, pack_tensor(d));
      ph.depth.data[p] = depth;
      ph.ha.data[p] = ha;
      ph.e2a.data[p] = e2a;
    }
  }
  return ph;
}

DwiStack simulate_dwi(const TensorField &truth, const AcquisitionProtocol &protocol, const NoiseProfile &noise,
                      double s0) {
  protocol.validate();
  noise.validate();
  if (!(truth.size == protocol.image_size))
    throw ValidationError("simulate_dwi: truth size differs from protocol image size");
  if (truth.mask.count() == 0)
    throw ValidationError("simulate_dwi: empty truth mask");

  DwiStack stack;
  stack.protocol = protocol;
  stack.mask = truth.mask;
  const ImageSize size = truth.size;
  const double sigma = noise.noiseless() ? 0.0 : s0 / noise.snr;

  std::vector<double> b_sorted = protocol.b_values;
  std::sort(b_sorted.begin(), b_sorted.end());
  for (std::size_t bi = 0; bi < b_sorted.size(); ++bi) {
    const double b = b_sorted[bi];
    const int reps = protocol.reps_for(b);
    const int ndir = protocol.directions_for(b);
    for (int rep = 0; rep < reps; ++rep) {
      registration::Shift motion;
      const bool reference_frame = AcquisitionProtocol::is_reference_weighting(b) && rep == 0;
      if (noise.motion_shift_sigma > 0.0 && !reference_frame) {
        auto rng = stream(noise.seed, {kMotionStream, static_cast<std::uint32_t>(bi), static_cast<std::uint32_t>(rep)});
        std::normal_distribution<double> shift(0.0, noise.motion_shift_sigma);
        motion.dy = shift(rng);
        motion.dx = shift(rng);
      }
      for (int dir = 0; dir < ndir; ++dir) {
        const Vec3 g = AcquisitionProtocol::is_reference_weighting(b) ? Vec3{0, 0, 0} : protocol.directions[dir];
        Image img(size);
        for (std::size_t p = 0; p < size.pixels(); ++p) {
          if (!truth.mask.data[p])
            continue;
          const Mat3 d = unpack_tensor(truth.at(p));
          double adc = 0.0;
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
              adc += g[i] * d[i][j] * g[j];
          img.data[p] = s0 * std::exp(-b * adc);
        }
        if (motion.dy != 0.0 || motion.dx != 0.0)
          img = registration::apply_shift(img, motion);

        const double frame_sigma = rep == 0 ? sigma * noise.first_rep_degradation : sigma;
        if (frame_sigma > 0.0) {
          auto rng = stream(noise.seed, {kNoiseStream, static_cast<std::uint32_t>(bi), static_cast<std::uint32_t>(dir),
                                         static_cast<std::uint32_t>(rep)});
          std::normal_distribution<double> gauss(0.0, frame_sigma);
          for (double &v : img.data) {
            const double re = v + gauss(rng);
            const double im = gauss(rng);
            v = std::hypot(re, im);
          }
        } else {
          for (double &v : img.data)
            v = std::abs(v);
        }
        stack.frames.push_back({{b, dir, rep}, std::move(img)});
      }
    }
  }
  std::sort(stack.frames.begin(), stack.frames.end(), [](const Frame &a, const Frame &b) { return a.key < b.key; });
  return stack;
}

nlohmann::json config_to_json(const PhantomConfig &c) {
  return {{"image_size", {c.image_size.rows, c.image_size.cols}},
          {"lv_centre", {c.lv_centre.row, c.lv_centre.col}},
          {"endo_radius", c.endo_radius},
          {"epi_radius", c.epi_radius},
          {"ha_endo", c.ha_endo},
          {"ha_epi", c.ha_epi},
          {"e2a_mean", c.e2a_mean},
          {"e2a_transmural_range", c.e2a_transmural_range},
          {"eigenvalue_profile", c.eigenvalue_profile},
          {"s0_level", c.s0_level}};
}

PhantomConfig config_from_json(const nlohmann::json &j) {
  PhantomConfig c;
  try {
    if (j.contains("image_size"))
      c.image_size = {j.at("image_size").at(0).get<int>(), j.at("image_size").at(1).get<int>()};
    if (j.contains("lv_centre"))
      c.lv_centre = {j.at("lv_centre").at(0).get<double>(), j.at("lv_centre").at(1).get<double>()};
    c.endo_radius = j.value("endo_radius", c.endo_radius);
    c.epi_radius = j.value("epi_radius", c.epi_radius);
    c.ha_endo = j.value("ha_endo", c.ha_endo);
    c.ha_epi = j.value("ha_epi", c.ha_epi);
    c.e2a_mean = j.value("e2a_mean", c.e2a_mean);
    c.e2a_transmural_range = j.value("e2a_transmural_range", c.e2a_transmural_range);
    if (j.contains("eigenvalue_profile"))
      c.eigenvalue_profile = j.at("eigenvalue_profile").get<Vec3>();
    c.s0_level = j.value("s0_level", c.s0_level);
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("bad phantom config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json noise_to_json(const NoiseProfile &n) {
  nlohmann::json j = {{"first_rep_degradation", n.first_rep_degradation},
                      {"motion_shift_sigma", n.motion_shift_sigma},
                      {"seed", n.seed}};
  j["snr"] = n.noiseless() ? nlohmann::json(nullptr) : nlohmann::json(n.snr);
  return j;
}

NoiseProfile noise_from_json(const nlohmann::json &j) {
  NoiseProfile n;
  try {
    if (j.contains("snr") && !j.at("snr").is_null())
      n.snr = j.at("snr").get<double>();
    n.first_rep_degradation = j.value("first_rep_degradation", n.first_rep_degradation);
    n.motion_shift_sigma = j.value("motion_shift_sigma", n.motion_shift_sigma);
    n.seed = j.value("seed", n.seed);
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("bad noise profile: ") + e.what());
  }
  n.validate();
  return n;
}

nlohmann::json cohort_config_to_json(const CohortConfig &c) {
  return {{"phantom", config_to_json(c.base)},
          {"noise", noise_to_json(c.noise)},
          {"protocol", io::protocol_to_json(c.protocol)},
          {"centre_jitter", c.centre_jitter},
          {"endo_radius_range", {c.endo_radius_min, c.endo_radius_max}},
          {"wall_range", {c.wall_min, c.wall_max}},
          {"snr_range", {c.snr_min, c.snr_max}}};
}

CohortConfig cohort_config_from_json(const nlohmann::json &j) {
  CohortConfig c;
  try {
    if (j.contains("phantom"))
      c.base = config_from_json(j.at("phantom"));
    if (j.contains("noise"))
      c.noise = noise_from_json(j.at("noise"));
    if (j.contains("protocol")) {
      auto pj = j.at("protocol");
      pj["image_size"] = {c.base.image_size.rows, c.base.image_size.cols};
      c.protocol = io::protocol_from_json(pj);
    }
    c.protocol.image_size = c.base.image_size;
    c.centre_jitter = j.value("centre_jitter", c.centre_jitter);
    if (j.contains("endo_radius_range")) {
      c.endo_radius_min = j.at("endo_radius_range").at(0).get<double>();
      c.endo_radius_max = j.at("endo_radius_range").at(1).get<double>();
    }
    if (j.contains("wall_range")) {
      c.wall_min = j.at("wall_range").at(0).get<double>();
      c.wall_max = j.at("wall_range").at(1).get<double>();
    }
    if (j.contains("snr_range")) {
      c.snr_min = j.at("snr_range").at(0).get<double>();
      c.snr_max = j.at("snr_range").at(1).get<double>();
    }
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("bad cohort config: ") + e.what());
  }
  c.protocol.validate();
  if (c.centre_jitter < 0 || c.endo_radius_min > c.endo_radius_max || c.wall_min > c.wall_max ||
      c.snr_min > c.snr_max)
    throw ValidationError("bad cohort ranges");
  return c;
}

Subject make_subject(const CohortConfig &cohort, std::uint64_t cohort_seed, int index) {
  auto rng = stream(cohort_seed, {kSubjectStream, static_cast<std::uint32_t>(index)});
  std::uniform_int_distribution<int> jitter(-cohort.centre_jitter, cohort.centre_jitter);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Subject s;
  s.config = cohort.base;
  s.config.lv_centre.row += jitter(rng);
  s.config.lv_centre.col += jitter(rng);
  s.config.endo_radius = cohort.endo_radius_min + unit(rng) * (cohort.endo_radius_max - cohort.endo_radius_min);
  s.config.epi_radius = s.config.endo_radius + cohort.wall_min + unit(rng) * (cohort.wall_max - cohort.wall_min);
  s.noise = cohort.noise;
  if (cohort.snr_min > 0.0 && cohort.snr_max > 0.0)
    s.noise.snr = cohort.snr_min + unit(rng) * (cohort.snr_max - cohort.snr_min);
  s.noise.seed = rng();

  AcquisitionProtocol protocol = cohort.protocol;
  protocol.image_size = s.config.image_size;
  s.truth = generate_phantom(s.config);
  s.dwi = simulate_dwi(s.truth.tensors, protocol, s.noise, s.config.s0_level);
  return s;
}

} // namespace dtcmr::phantom
