#include "dtcmr/nn.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace dtcmr;
using namespace dtcmr::nn;
using namespace dtcmr::nn::check;

namespace {

template <typename Net, typename GetParams>
void expect_gradients(Net &net, GetParams &&params_of, const Planes &x, std::mt19937_64 &rng, double tol = 1e-4) {
  const GradientReport r = check::gradient_check(net, params_of, x, rng);
  CHECK(r.input < tol);
  for (const auto &[name, err] : r.params) {
    INFO(name);
    CHECK(err < tol);
  }
}

} // namespace

TEST_CASE("conv2d gradients") {
  std::mt19937_64 rng(1);
  for (auto [k, s, pad] : {std::tuple{3, 1, 1}, std::tuple{4, 2, 1}, std::tuple{1, 1, 0}}) {
    Conv2d conv(3, 4, k, s, pad, "c");
    conv.init_he(rng, 0.1);
    std::normal_distribution<double> g;
    for (double &b : conv.bias.value)
      b = g(rng);
    expect_gradients<Conv2d>(conv, [](Conv2d &c) { return c.params(); }, random_planes(3, 8, 8, rng), rng);
  }
}

TEST_CASE("conv2d matches a direct convolution loop") {
  std::mt19937_64 rng(2);
  Conv2d conv(2, 3, 3, 1, 1, "c");
  conv.init_he(rng, 0.0);
  conv.bias.value = {0.1, -0.2, 0.3};
  const Planes x = random_planes(2, 5, 6, rng);
  const Planes y = conv.forward(x);
  for (int co = 0; co < 3; ++co)
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 6; ++c) {
        double s = conv.bias.value[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = r + ky - 1, ix = c + kx - 1;
              if (iy >= 0 && iy < 5 && ix >= 0 && ix < 6)
                s += conv.weight.value[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.at(ci, iy, ix);
            }
        CHECK(y.at(co, r, c) == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("transposed convolution, activation and pooling gradients") {
  std::mt19937_64 rng(3);
  ConvTranspose2x2 up(4, 3, "up");
  up.init_he(rng, 0.1);
  expect_gradients<ConvTranspose2x2>(up, [](ConvTranspose2x2 &u) { return u.params(); }, random_planes(4, 5, 6, rng),
                                   rng);

  LeakyRelu act(0.1);
  expect_gradients<LeakyRelu>(act, [](LeakyRelu &) { return std::vector<Param *>{}; }, random_planes(2, 6, 6, rng),
                            rng);

  MaxPool2 pool;
  expect_gradients<MaxPool2>(pool, [](MaxPool2 &) { return std::vector<Param *>{}; }, random_planes(2, 6, 8, rng),
                           rng);
  const Planes odd(1, 5, 4);
  CHECK_THROWS_AS(pool.forward(odd), ValidationError);
}

TEST_CASE("U-Net gradients on a tiny network") {
  std::mt19937_64 rng(4);
  for (bool residual : {true, false}) {
    UNetSpec spec;
    spec.levels = 2;
    spec.width = 4;
    spec.in_channels = residual ? 6 : 7;
    spec.out_channels = 6;
    spec.residual = residual;
    UNet net(spec, 11);
    // The head starts at zero, which would hide every upstream gradient.
    randomise_head(net, rng);
    expect_gradients<UNet>(net, [](UNet &n) { return n.params(); }, random_planes(spec.in_channels, 16, 16, rng), rng);
  }
}

TEST_CASE("critic gradients") {
  std::mt19937_64 rng(5);
  CriticSpec spec;
  spec.width = 4;
  spec.clip = 0.5;
  Critic critic(spec, 3);
  expect_gradients<Critic>(critic, [](Critic &c) { return c.params(); }, random_planes(6, 16, 16, rng), rng);
  CHECK(critic.forward(random_planes(6, 16, 16, rng)).rows == 4);
}

TEST_CASE("l1 loss") {
  std::mt19937_64 rng(6);
  const Planes a = random_planes(6, 4, 4, rng);
  Mask m({4, 4});
  m.set(1, 1, true);
  m.set(2, 3, true);
  CHECK(l1_loss(a, a, m) == 0.0);
  Planes b = a;
  for (double &v : b.data)
    v += 0.25;
  CHECK(l1_loss(b, a, m) == doctest::Approx(0.25).epsilon(1e-14));

  const Planes t = random_planes(6, 4, 4, rng);
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < 6; ++c)
    for (int r = 0; r < 4; ++r)
      for (int col = 0; col < 4; ++col)
        if (m.at(r, col)) {
          sum += std::abs(a.at(c, r, col) - t.at(c, r, col));
          ++n;
        }
  Planes grad;
  CHECK(std::abs(l1_loss(a, t, m, &grad) - sum / n) < 1e-12);

  // Away from ties the loss is differentiable.
  std::vector<double> numeric(a.data.size());
  Planes x = a;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + 1e-7;
    const double lp = l1_loss(x, t, m);
    x.data[i] = keep - 1e-7;
    const double lm = l1_loss(x, t, m);
    x.data[i] = keep;
    numeric[i] = (lp - lm) / 2e-7;
  }
  CHECK(rel_error(grad.data, numeric) < 1e-6);
}

TEST_CASE("zero-initialised head makes the residual network an identity") {
  std::mt19937_64 rng(7);
  UNet net(UNetSpec{}, 1);
  const Planes x = random_planes(6, 32, 32, rng);
  CHECK(net.forward(x).data == x.data);
  UNet again(UNetSpec{}, 1);
  std::vector<Param *> pa = net.params(), pb = again.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i]->value == pb[i]->value);
  CHECK_THROWS_AS(net.forward(random_planes(6, 30, 32, rng)), ValidationError);
  CHECK_THROWS_AS(net.forward(random_planes(5, 32, 32, rng)), ValidationError);
}

TEST_CASE("Adam update and clipping") {
  Param p("w", 2);
  p.value = {1.0, -1.0};
  p.grad = {0.5, -2.0};
  Adam adam(AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  adam.step({&p});
  // The first bias-corrected step moves each weight by lr against the gradient sign.
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(-0.9).epsilon(1e-6));

  CriticSpec spec;
  spec.width = 4;
  Critic critic(spec, 2);
  CHECK(critic.max_abs_weight() <= spec.clip);
  for (Param *q : critic.params())
    for (double &v : q->value)
      v *= 10.0;
  critic.clip_weights();
  CHECK(critic.max_abs_weight() <= spec.clip);
}
