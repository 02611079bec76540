#include "dtcmr/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace dtcmr::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Planes concat(const Planes &a, const Planes &b) {
  Planes out(a.channels + b.channels, a.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

Planes take_channels(const Planes &x, int first, int count) {
  Planes out(count, x.rows, x.cols);
  const auto begin = x.data.begin() + static_cast<std::ptrdiff_t>(first * x.plane());
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(count * x.plane()), out.data.begin());
  return out;
}

void add_into(Planes &dst, const Planes &src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i)
    dst.data[i] += src.data[i];
}

} // namespace

// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, std::string name)
    : weight(name + ".weight", static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias(name + ".bias", static_cast<std::size_t>(out_channels)), in_(in_channels), out_(out_channels),
      k_(kernel), stride_(stride), pad_(padding) {}

void Conv2d::init_he(std::mt19937_64 &rng, double slope) {
  const double fan_in = static_cast<double>(in_) * k_ * k_;
  std::normal_distribution<double> g(0.0, std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in)));
  for (double &w : weight.value)
    w = g(rng);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void Conv2d::init_uniform(std::mt19937_64 &rng, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double &w : weight.value)
    w = u(rng);
  for (double &b : bias.value)
    b = u(rng);
}

Planes Conv2d::forward(const Planes &x) {
  if (x.channels != in_)
    throw ValidationError("conv2d " + weight.name + ": expected " + std::to_string(in_) + " channels, got " +
                          std::to_string(x.channels));
  in_rows_ = x.rows;
  in_cols_ = x.cols;
  out_rows_ = (x.rows + 2 * pad_ - k_) / stride_ + 1;
  out_cols_ = (x.cols + 2 * pad_ - k_) / stride_ + 1;
  if (out_rows_ <= 0 || out_cols_ <= 0)
    throw ValidationError("conv2d " + weight.name + ": input too small");
  const int kk = in_ * k_ * k_;
  const std::size_t p = static_cast<std::size_t>(out_rows_) * out_cols_;
  cols_.assign(static_cast<std::size_t>(kk) * p, 0.0);
  for (int ci = 0; ci < in_; ++ci)
    for (int ky = 0; ky < k_; ++ky)
      for (int kx = 0; kx < k_; ++kx) {
        double *row = cols_.data() + static_cast<std::size_t>((ci * k_ + ky) * k_ + kx) * p;
        for (int oy = 0; oy < out_rows_; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= x.rows)
            continue;
          for (int ox = 0; ox < out_cols_; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < x.cols)
              row[oy * out_cols_ + ox] = x.at(ci, iy, ix);
          }
        }
      }
  Planes y(out_, out_rows_, out_cols_);
  MutMap ym(y.data.data(), out_, static_cast<Eigen::Index>(p));
  ym.noalias() = ConstMap(weight.value.data(), out_, kk) * ConstMap(cols_.data(), kk, static_cast<Eigen::Index>(p));
  for (int co = 0; co < out_; ++co)
    ym.row(co).array() += bias.value[co];
  return y;
}

Planes Conv2d::backward(const Planes &grad_out) {
  const int kk = in_ * k_ * k_;
  const auto p = static_cast<Eigen::Index>(static_cast<std::size_t>(out_rows_) * out_cols_);
  if (grad_out.channels != out_ || grad_out.rows != out_rows_ || grad_out.cols != out_cols_)
    throw ValidationError("conv2d " + weight.name + ": gradient shape mismatch");
  ConstMap g(grad_out.data.data(), out_, p);
  ConstMap c(cols_.data(), kk, p);
  MutMap(weight.grad.data(), out_, kk).noalias() += g * c.transpose();
  // Plain loop: Eigen's vectorised sum depends on pointer alignment, which
  // would make training non-reproducible.
  for (int co = 0; co < out_; ++co) {
    double s = 0.0;
    for (Eigen::Index q = 0; q < p; ++q)
      s += g(co, q);
    bias.grad[co] += s;
  }

  RowMat dcols = ConstMap(weight.value.data(), out_, kk).transpose() * g;
  Planes dx(in_, in_rows_, in_cols_);
  for (int ci = 0; ci < in_; ++ci)
    for (int ky = 0; ky < k_; ++ky)
      for (int kx = 0; kx < k_; ++kx) {
        const double *row = dcols.data() + static_cast<std::size_t>((ci * k_ + ky) * k_ + kx) * p;
        for (int oy = 0; oy < out_rows_; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= in_rows_)
            continue;
          for (int ox = 0; ox < out_cols_; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < in_cols_)
              dx.at(ci, iy, ix) += row[oy * out_cols_ + ox];
          }
        }
      }
  return dx;
}

// ---------------------------------------------------------------------------

ConvTranspose2x2::ConvTranspose2x2(int in_channels, int out_channels, std::string name)
    : weight(name + ".weight", static_cast<std::size_t>(out_channels) * 4 * in_channels),
      bias(name + ".bias", static_cast<std::size_t>(out_channels)), in_(in_channels), out_(out_channels) {}

void ConvTranspose2x2::init_he(std::mt19937_64 &rng, double slope) {
  std::normal_distribution<double> g(0.0, std::sqrt(2.0 / ((1.0 + slope * slope) * in_)));
  for (double &w : weight.value)
    w = g(rng);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Planes ConvTranspose2x2::forward(const Planes &x) {
  if (x.channels != in_)
    throw ValidationError("conv_transpose " + weight.name + ": channel mismatch");
  input_ = x;
  const auto p = static_cast<Eigen::Index>(x.plane());
  const RowMat y4 = ConstMap(weight.value.data(), out_ * 4, in_) * ConstMap(x.data.data(), in_, p);
  Planes y(out_, 2 * x.rows, 2 * x.cols);
  for (int co = 0; co < out_; ++co)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const double *src = y4.data() + static_cast<std::size_t>((co * 2 + a) * 2 + b) * p;
        for (int i = 0; i < x.rows; ++i)
          for (int j = 0; j < x.cols; ++j)
            y.at(co, 2 * i + a, 2 * j + b) = src[i * x.cols + j] + bias.value[co];
      }
  return y;
}

Planes ConvTranspose2x2::backward(const Planes &grad_out) {
  const int rows = input_.rows, cols = input_.cols;
  const auto p = static_cast<Eigen::Index>(input_.plane());
  RowMat g4(out_ * 4, p);
  for (int co = 0; co < out_; ++co)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        double *dst = g4.data() + static_cast<std::size_t>((co * 2 + a) * 2 + b) * p;
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) {
            const double v = grad_out.at(co, 2 * i + a, 2 * j + b);
            dst[i * cols + j] = v;
            bias.grad[co] += v;
          }
      }
  ConstMap x(input_.data.data(), in_, p);
  MutMap(weight.grad.data(), out_ * 4, in_).noalias() += g4 * x.transpose();
  Planes dx(in_, rows, cols);
  MutMap(dx.data.data(), in_, p).noalias() = ConstMap(weight.value.data(), out_ * 4, in_).transpose() * g4;
  return dx;
}

// ---------------------------------------------------------------------------

Planes LeakyRelu::forward(const Planes &x) {
  Planes y = x;
  positive_.resize(x.data.size());
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    positive_[i] = x.data[i] > 0.0;
    if (!positive_[i])
      y.data[i] *= slope_;
  }
  return y;
}

Planes LeakyRelu::backward(const Planes &grad_out) const {
  Planes g = grad_out;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (!positive_[i])
      g.data[i] *= slope_;
  return g;
}

Planes MaxPool2::forward(const Planes &x) {
  if (x.rows % 2 != 0 || x.cols % 2 != 0)
    throw ValidationError("max pooling needs even spatial sizes");
  in_rows_ = x.rows;
  in_cols_ = x.cols;
  Planes y(x.channels, x.rows / 2, x.cols / 2);
  argmax_.resize(y.data.size());
  std::size_t o = 0;
  for (int c = 0; c < x.channels; ++c)
    for (int i = 0; i < y.rows; ++i)
      for (int j = 0; j < y.cols; ++j, ++o) {
        std::uint32_t best = 0;
        double v = x.at(c, 2 * i, 2 * j);
        for (std::uint32_t q = 1; q < 4; ++q) {
          const double cand = x.at(c, 2 * i + static_cast<int>(q / 2), 2 * j + static_cast<int>(q % 2));
          if (cand > v) {
            v = cand;
            best = q;
          }
        }
        y.data[o] = v;
        argmax_[o] = best;
      }
  return y;
}

Planes MaxPool2::backward(const Planes &grad_out) const {
  Planes dx(grad_out.channels, in_rows_, in_cols_);
  std::size_t o = 0;
  for (int c = 0; c < grad_out.channels; ++c)
    for (int i = 0; i < grad_out.rows; ++i)
      for (int j = 0; j < grad_out.cols; ++j, ++o) {
        const std::uint32_t q = argmax_[o];
        dx.at(c, 2 * i + static_cast<int>(q / 2), 2 * j + static_cast<int>(q % 2)) += grad_out.data[o];
      }
  return dx;
}

double l1_loss(const Planes &pred, const Planes &target, const Mask &mask, Planes *grad) {
  if (!pred.same_shape(target) || mask.size.rows != pred.rows || mask.size.cols != pred.cols)
    throw ValidationError("l1_loss: shape mismatch");
  const std::size_t n = mask.count() * static_cast<std::size_t>(pred.channels);
  if (n == 0)
    throw ValidationError("l1_loss: empty mask");
  if (grad)
    *grad = Planes(pred.channels, pred.rows, pred.cols);
  double sum = 0.0;
  const std::size_t plane = pred.plane();
  for (int c = 0; c < pred.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      if (!mask.data[p])
        continue;
      const std::size_t i = c * plane + p;
      const double d = pred.data[i] - target.data[i];
      sum += std::abs(d);
      if (grad)
        grad->data[i] = d > 0.0 ? 1.0 / n : (d < 0.0 ? -1.0 / n : 0.0);
    }
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

UNet::UNet(const UNetSpec &spec, std::uint64_t seed) : spec_(spec) {
  if (spec.levels < 1 || spec.width < 1 || spec.in_channels < 1 || spec.out_channels < 1)
    throw ValidationError("invalid network shape");
  if (spec.residual && spec.in_channels != spec.out_channels)
    throw ValidationError("residual output needs equal input and output channels");
  std::mt19937_64 rng(seed);
  int in = spec.in_channels;
  for (int l = 0; l < spec.levels; ++l) {
    const int c = spec.width << l;
    Block b{Conv2d(in, c, 3, 1, 1, "enc" + std::to_string(l) + ".conv1"),
            Conv2d(c, c, 3, 1, 1, "enc" + std::to_string(l) + ".conv2"), LeakyRelu(spec.slope),
            LeakyRelu(spec.slope)};
    b.conv1.init_he(rng, spec.slope);
    b.conv2.init_he(rng, spec.slope);
    encoders_.push_back(std::move(b));
    in = c;
  }
  pools_.resize(spec.levels - 1);
  for (int l = 0; l + 1 < spec.levels; ++l) {
    const int c = spec.width << l;
    ConvTranspose2x2 up(2 * c, c, "up" + std::to_string(l));
    up.init_he(rng, spec.slope);
    ups_.push_back(std::move(up));
    Block b{Conv2d(2 * c, c, 3, 1, 1, "dec" + std::to_string(l) + ".conv1"),
            Conv2d(c, c, 3, 1, 1, "dec" + std::to_string(l) + ".conv2"), LeakyRelu(spec.slope),
            LeakyRelu(spec.slope)};
    b.conv1.init_he(rng, spec.slope);
    b.conv2.init_he(rng, spec.slope);
    decoders_.push_back(std::move(b));
  }
  head_ = Conv2d(spec.width, spec.out_channels, 1, 1, 0, "head");
}

Planes UNet::run_block(Block &b, const Planes &x) {
  return b.act2.forward(b.conv2.forward(b.act1.forward(b.conv1.forward(x))));
}

Planes UNet::back_block(Block &b, const Planes &g) {
  return b.conv1.backward(b.act1.backward(b.conv2.backward(b.act2.backward(g))));
}

Planes UNet::forward(const Planes &x) {
  if (x.channels != spec_.in_channels)
    throw ValidationError("network input has " + std::to_string(x.channels) + " channels, expected " +
                          std::to_string(spec_.in_channels));
  if (x.rows % size_multiple() != 0 || x.cols % size_multiple() != 0)
    throw ValidationError("network input size must be a multiple of " + std::to_string(size_multiple()));
  std::vector<Planes> skips;
  Planes cur = x;
  for (int l = 0; l < spec_.levels; ++l) {
    Planes h = run_block(encoders_[l], cur);
    if (l + 1 < spec_.levels) {
      cur = pools_[l].forward(h);
      skips.push_back(std::move(h));
    } else {
      cur = std::move(h);
    }
  }
  for (int l = spec_.levels - 2; l >= 0; --l)
    cur = run_block(decoders_[l], concat(ups_[l].forward(cur), skips[l]));
  Planes out = head_.forward(cur);
  if (spec_.residual)
    add_into(out, x);
  return out;
}

Planes UNet::backward(const Planes &grad_out) {
  Planes g = head_.backward(grad_out);
  std::vector<Planes> skip_grads(spec_.levels > 1 ? spec_.levels - 1 : 0);
  for (int l = 0; l + 1 < spec_.levels; ++l) {
    const Planes gcat = back_block(decoders_[l], g);
    const int c = spec_.width << l;
    skip_grads[l] = take_channels(gcat, c, c);
    g = ups_[l].backward(take_channels(gcat, 0, c));
  }
  for (int l = spec_.levels - 1; l >= 0; --l) {
    if (l + 1 < spec_.levels) {
      g = pools_[l].backward(g);
      add_into(g, skip_grads[l]);
    }
    g = back_block(encoders_[l], g);
  }
  if (spec_.residual)
    add_into(g, grad_out);
  return g;
}

std::vector<Param *> UNet::params() {
  std::vector<Param *> out;
  auto add = [&](std::vector<Param *> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  for (auto &b : encoders_) {
    add(b.conv1.params());
    add(b.conv2.params());
  }
  for (std::size_t l = 0; l < decoders_.size(); ++l) {
    add(ups_[l].params());
    add(decoders_[l].conv1.params());
    add(decoders_[l].conv2.params());
  }
  add(head_.params());
  return out;
}

// ---------------------------------------------------------------------------

Critic::Critic(const CriticSpec &spec, std::uint64_t seed)
    : spec_(spec), c1_(spec.in_channels, spec.width, 4, 2, 1, "critic.conv1"),
      c2_(spec.width, 2 * spec.width, 4, 2, 1, "critic.conv2"), c3_(2 * spec.width, 1, 3, 1, 1, "critic.conv3"),
      a1_(spec.slope), a2_(spec.slope) {
  if (!(spec.clip > 0.0))
    throw ValidationError("critic clip bound must be positive");
  std::mt19937_64 rng(seed);
  c1_.init_uniform(rng, spec.clip);
  c2_.init_uniform(rng, spec.clip);
  c3_.init_uniform(rng, spec.clip);
}

Planes Critic::forward(const Planes &x) {
  return c3_.forward(a2_.forward(c2_.forward(a1_.forward(c1_.forward(x)))));
}

Planes Critic::backward(const Planes &grad_scores) {
  return c1_.backward(a1_.backward(c2_.backward(a2_.backward(c3_.backward(grad_scores)))));
}

std::vector<Param *> Critic::params() {
  std::vector<Param *> out;
  for (Conv2d *c : {&c1_, &c2_, &c3_})
    for (Param *p : c->params())
      out.push_back(p);
  return out;
}

void Critic::clip_weights() {
  for (Param *p : params())
    for (double &w : p->value)
      w = std::clamp(w, -spec_.clip, spec_.clip);
}

double Critic::max_abs_weight() {
  double m = 0.0;
  for (Param *p : params())
    for (double w : p->value)
      m = std::max(m, std::abs(w));
  return m;
}

// ---------------------------------------------------------------------------

void Adam::step(const std::vector<Param *> &params) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Param *p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = cfg_.beta1 * p->m[i] + (1.0 - cfg_.beta1) * g;
      p->v[i] = cfg_.beta2 * p->v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mh = p->m[i] / c1, vh = p->v[i] / c2;
      p->value[i] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * p->value[i]);
    }
  }
}

void zero_grad(const std::vector<Param *> &params) {
  for (Param *p : params)
    std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::size_t parameter_count(const std::vector<Param *> &params) {
  std::size_t n = 0;
  for (const Param *p : params)
    n += p->value.size();
  return n;
}

} // namespace dtcmr::nn
