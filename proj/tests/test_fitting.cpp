#include "dtcmr/fitting.hpp"
#include "dtcmr/phantom.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace dtcmr;
using namespace dtcmr::fitting;

TEST_CASE("repetition index selection") {
  CHECK(select_indices(8, 2, {SchemeVariant::First}) == std::vector<int>{0, 1});
  CHECK(select_indices(8, 2, {SchemeVariant::FirstPlus1}) == std::vector<int>{1, 2});
  CHECK(select_indices(8, 2, {SchemeVariant::Centre}) == std::vector<int>{3, 4});
  CHECK(select_indices(8, 3, {SchemeVariant::Centre}) == std::vector<int>{2, 3, 4});
  CHECK(select_indices(8, 2, {SchemeVariant::Last}) == std::vector<int>{6, 7});
  CHECK(select_indices(2, 1, {SchemeVariant::Centre}) == std::vector<int>{0});

  const auto r1 = select_indices(8, 4, {SchemeVariant::Random, 77}, 600.0);
  const auto r2 = select_indices(8, 4, {SchemeVariant::Random, 77}, 600.0);
  CHECK(r1 == r2);
  CHECK(std::set<int>(r1.begin(), r1.end()).size() == 4);
  CHECK(std::is_sorted(r1.begin(), r1.end()));

  CHECK_THROWS_WITH_AS(select_indices(2, 2, {SchemeVariant::FirstPlus1}, 150.0),
                       doctest::Contains("b=150"), ValidationError);
  CHECK_THROWS_AS(select_indices(3, 4, {SchemeVariant::First}), ValidationError);
  CHECK(parse_scheme("F1") == SchemeVariant::FirstPlus1);
  CHECK(scheme_label(SchemeVariant::Centre) == "C");
  CHECK_THROWS_AS(parse_scheme("X"), ValidationError);
}

TEST_CASE("select_repetitions applies a breath-hold budget") {
  phantom::PhantomConfig cfg;
  const auto ph = phantom::generate_phantom(cfg);
  const auto stack = phantom::simulate_dwi(ph.tensors, AcquisitionProtocol::standard(), {});
  const auto one = select_repetitions(stack, {SchemeVariant::First}, BreathHoldBudget::one());
  CHECK(one.frames.size() == 1 + 6);
  CHECK(one.protocol.b_values == std::vector<double>{0.0, 600.0});
  const auto five = select_repetitions(stack, {SchemeVariant::Last}, BreathHoldBudget::five());
  CHECK(five.frames.size() == 4 + 6 + 4 * 6);
  CHECK(five.find({600.0, 5, 3}) != nullptr);
  CHECK(five.find({600.0, 5, 4}) == nullptr);
  CHECK(BreathHoldBudget::parse("3BH").reps.at(150.0) == 1);
}

TEST_CASE("averaging repetitions") {
  AcquisitionProtocol protocol = AcquisitionProtocol::standard();
  protocol.image_size = {1, 1};
  protocol.b_values = {0.0};
  protocol.reps_per_weighting = {{0.0, 4}};
  DwiStack s;
  s.protocol = protocol;
  s.mask = Mask({1, 1}, true);
  for (int k = 0; k < 4; ++k)
    s.frames.push_back({{0.0, 0, k}, Image({1, 1}, 1.0 + k)});
  const auto avg = average_repetitions(s);
  REQUIRE(avg.size() == 1);
  CHECK(avg[0].image.data[0] == doctest::Approx(2.5));

  // Averaging k independent noisy copies divides the standard deviation by sqrt(k).
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  const int k = 4, trials = 20000;
  protocol.image_size = {1, trials};
  DwiStack noisy;
  noisy.protocol = protocol;
  noisy.mask = Mask({1, trials}, true);
  for (int rep = 0; rep < k; ++rep) {
    Image img({1, trials});
    for (double &v : img.data)
      v = g(rng);
    noisy.frames.push_back({{0.0, 0, rep}, img});
  }
  const auto mean_img = average_repetitions(noisy)[0].image;
  double ss = 0.0;
  for (double v : mean_img.data)
    ss += v * v;
  CHECK(std::sqrt(ss / trials) == doctest::Approx(1.0 / std::sqrt(double(k))).epsilon(0.02));
}

namespace {

std::vector<AveragedFrame> frames_for(const Tensor6 &t, double s0, const std::vector<Vec3> &dirs, double b) {
  std::vector<AveragedFrame> out;
  out.push_back({0.0, 0, {0, 0, 0}, Image({1, 1}, s0)});
  const Mat3 d = unpack_tensor(t);
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    double adc = 0.0;
    for (int p = 0; p < 3; ++p)
      for (int q = 0; q < 3; ++q)
        adc += dirs[i][p] * d[p][q] * dirs[i][q];
    out.push_back({b, static_cast<int>(i), dirs[i], Image({1, 1}, s0 * std::exp(-b * adc))});
  }
  return out;
}

} // namespace

TEST_CASE("exactly determined fit interpolates the data") {
  const auto dirs = AcquisitionProtocol::standard().directions;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(100.0, 1000.0);
  std::vector<AveragedFrame> frames;
  frames.push_back({0.0, 0, {0, 0, 0}, Image({1, 1}, u(rng))});
  for (int i = 0; i < 6; ++i)
    frames.push_back({600.0, i, dirs[i], Image({1, 1}, u(rng))});
  const LlsDesign design(frames);
  CHECK(design.measurements() == 7);
  Eigen::VectorXd y(7);
  for (int i = 0; i < 7; ++i)
    y[i] = std::log(frames[i].image.data[0]);
  const auto x = design.solve(y);
  const Eigen::VectorXd residual = design.matrix() * x - y;
  CHECK(residual.norm() < 1e-10);
}

TEST_CASE("design rows and rank") {
  const auto dirs = AcquisitionProtocol::standard().directions;
  auto frames = frames_for({1e-3, 1e-3, 1e-3, 0, 0, 0}, 1000.0, dirs, 600.0);
  const LlsDesign design(frames);
  const auto &a = design.matrix();
  const Vec3 g = dirs[0];
  CHECK(a(1, 0) == 1.0);
  CHECK(a(1, 1) == doctest::Approx(-600.0 * g[0] * g[0]));
  CHECK(a(1, 4) == doctest::Approx(-2.0 * 600.0 * g[0] * g[1]));
  CHECK(a(1, 5) == doctest::Approx(-2.0 * 600.0 * g[0] * g[2]));

  frames.pop_back();
  CHECK_THROWS_AS(LlsDesign{frames}, ValidationError);
}

TEST_CASE("noiseless recovery and invariances") {
  const auto dirs = AcquisitionProtocol::standard().directions;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.3e-3, 0.3e-3);
  for (int k = 0; k < 20; ++k) {
    const Tensor6 t{1.2e-3 + u(rng), 1.0e-3 + u(rng), 0.9e-3 + u(rng), 0.5 * u(rng), 0.5 * u(rng), 0.5 * u(rng)};
    const auto frames = frames_for(t, 800.0, dirs, 600.0);
    const auto fit = lls_fit(frames, Mask({1, 1}, true));
    for (int c = 0; c < 6; ++c)
      CHECK(std::abs(fit.tensors.at(0)[c] - t[c]) < 1e-8 * 1e-3);
    CHECK(fit.log_s0.data[0] == doctest::Approx(std::log(800.0)));

    // Scaling all signals only shifts ln S0.
    auto scaled = frames;
    for (auto &f : scaled)
      f.image.data[0] *= 3.7;
    const auto fs = lls_fit(scaled, Mask({1, 1}, true));
    for (int c = 0; c < 6; ++c)
      CHECK(std::abs(fs.tensors.at(0)[c] - fit.tensors.at(0)[c]) < 1e-12);
    CHECK(fs.log_s0.data[0] - fit.log_s0.data[0] == doctest::Approx(std::log(3.7)));
  }
}

TEST_CASE("phantom fit is exact without noise") {
  phantom::PhantomConfig cfg;
  const auto ph = phantom::generate_phantom(cfg);
  const auto stack = phantom::simulate_dwi(ph.tensors, AcquisitionProtocol::standard(), {});
  const auto fit = fit_stack(stack);
  CHECK(fit.excluded_voxels == 0);
  CHECK(fit.non_psd_voxels == 0);
  for (std::size_t i = 0; i < fit.tensors.components.size(); ++i)
    CHECK(std::abs(fit.tensors.components[i] - ph.tensors.components[i]) < 1e-8 * 1e-3);
}

TEST_CASE("non-positive signals are excluded") {
  const auto dirs = AcquisitionProtocol::standard().directions;
  auto frames = frames_for({1e-3, 1e-3, 1e-3, 0, 0, 0}, 1000.0, dirs, 600.0);
  frames[3].image.data[0] = 0.0;
  const auto fit = lls_fit(frames, Mask({1, 1}, true));
  CHECK(fit.excluded_voxels == 1);
  CHECK(fit.tensors.mask.count() == 0);
  CHECK(fit.tensors.at(0) == Tensor6{0, 0, 0, 0, 0, 0});
}
