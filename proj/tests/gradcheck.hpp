#pragma once

#include "dtcmr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace dtcmr::nn::check {

inline Planes random_planes(int c, int r, int w, std::mt19937_64 &rng) {
  std::normal_distribution<double> g;
  Planes p(c, r, w);
  for (double &v : p.data)
    v = g(rng);
  return p;
}

inline double weighted_sum(const Planes &y, const Planes &w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i)
    s += y.data[i] * w.data[i];
  return s;
}

inline double rel_error(const std::vector<double> &a, const std::vector<double> &b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
}

struct GradientReport {
  double input = 0.0;                                 // relative error of d/dx
  std::vector<std::pair<std::string, double>> params; // per parameter tensor
  double worst() const {
    double w = input;
    for (const auto &p : params)
      w = std::max(w, p.second);
    return w;
  }
};

/// Compares backward() of L = <w, f(x)> with central differences (h = 1e-6)
/// for the input and every parameter returned by `params`.
template <typename Net, typename GetParams>
GradientReport gradient_check(Net &net, GetParams &&params_of, Planes x, std::mt19937_64 &rng) {
  const Planes y0 = net.forward(x);
  const Planes w = random_planes(y0.channels, y0.rows, y0.cols, rng);
  std::vector<Param *> params = params_of(net);
  zero_grad(params);
  const Planes dx = net.backward(w);

  const double h = 1e-6;
  auto loss = [&] { return weighted_sum(net.forward(x), w); };
  GradientReport report;
  std::vector<double> numeric(x.data.size());
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + h;
    const double lp = loss();
    x.data[i] = keep - h;
    const double lm = loss();
    x.data[i] = keep;
    numeric[i] = (lp - lm) / (2.0 * h);
  }
  report.input = rel_error(dx.data, numeric);
  for (Param *p : params) {
    std::vector<double> num(p->value.size());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double lp = loss();
      p->value[i] = keep - h;
      const double lm = loss();
      p->value[i] = keep;
      num[i] = (lp - lm) / (2.0 * h);
    }
    report.params.emplace_back(p->name, rel_error(p->grad, num));
  }
  return report;
}

/// Randomises the zero-initialised head so upstream gradients are visible.
inline void randomise_head(UNet &net, std::mt19937_64 &rng, double sd = 0.3) {
  std::normal_distribution<double> g(0.0, sd);
  for (Param *p : net.params())
    if (p->name.rfind("head", 0) == 0)
      for (double &v : p->value)
        v = g(rng);
}

} // namespace dtcmr::nn::check
