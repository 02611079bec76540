#pragma once

#include "dtcmr/core.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dtcmr::nn {

/// Channel-major multi-channel image: data[(c * rows + r) * cols + col].
struct Planes {
  int channels = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Planes() = default;
  Planes(int c, int r, int w, double fill = 0.0)
      : channels(c), rows(r), cols(w), data(static_cast<std::size_t>(c) * r * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(rows) * cols; }
  double &at(int c, int r, int w) { return data[(static_cast<std::size_t>(c) * rows + r) * cols + w]; }
  double at(int c, int r, int w) const { return data[(static_cast<std::size_t>(c) * rows + r) * cols + w]; }
  bool same_shape(const Planes &o) const { return channels == o.channels && rows == o.rows && cols == o.cols; }
};

struct Param {
  std::string name;
  std::vector<double> value, grad, m, v;

  Param() = default;
  Param(std::string n, std::size_t size)
      : name(std::move(n)), value(size, 0.0), grad(size, 0.0), m(size, 0.0), v(size, 0.0) {}
};

/// Forward caches what backward needs; backward accumulates into Param::grad
/// and returns the gradient with respect to the forward input.
class Conv2d {
public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, std::string name);

  /// He-normal weights for a leaky-ReLU of the given slope, zero bias.
  void init_he(std::mt19937_64 &rng, double slope);
  void init_uniform(std::mt19937_64 &rng, double bound);

  Planes forward(const Planes &x);
  Planes backward(const Planes &grad_out);
  std::vector<Param *> params() { return {&weight, &bias}; }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  Param weight; // out x (in * k * k)
  Param bias;

private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  int in_rows_ = 0, in_cols_ = 0, out_rows_ = 0, out_cols_ = 0;
  std::vector<double> cols_; // (in * k * k) x (out_rows * out_cols), row-major
};

/// Kernel 2, stride 2: doubles the spatial size.
class ConvTranspose2x2 {
public:
  ConvTranspose2x2() = default;
  ConvTranspose2x2(int in_channels, int out_channels, std::string name);

  void init_he(std::mt19937_64 &rng, double slope);
  Planes forward(const Planes &x);
  Planes backward(const Planes &grad_out);
  std::vector<Param *> params() { return {&weight, &bias}; }

  Param weight; // (out * 4) x in, row index (co * 2 + a) * 2 + b
  Param bias;

private:
  int in_ = 0, out_ = 0;
  Planes input_;
};

class LeakyRelu {
public:
  explicit LeakyRelu(double slope = 0.1) : slope_(slope) {}
  Planes forward(const Planes &x);
  Planes backward(const Planes &grad_out) const;

private:
  double slope_;
  std::vector<std::uint8_t> positive_;
};

/// 2 x 2 max pooling; the first maximum in raster order wins ties.
class MaxPool2 {
public:
  Planes forward(const Planes &x);
  Planes backward(const Planes &grad_out) const;

private:
  int in_rows_ = 0, in_cols_ = 0;
  std::vector<std::uint32_t> argmax_;
};

/// Mean |pred - target| over masked voxels and all channels. When `grad` is
/// non-null it receives d loss / d pred (sign(pred - target) / count, 0 at ties).
double l1_loss(const Planes &pred, const Planes &target, const Mask &mask, Planes *grad = nullptr);

struct UNetSpec {
  int levels = 3;
  int width = 16;
  int in_channels = 6;
  int out_channels = 6;
  bool residual = true;
  double slope = 0.1;
};

/// Encoder-decoder with skip concatenation. Level l has width * 2^l channels
/// (two 3x3 conv + leaky-ReLU blocks); 2x2 max pooling down, 2x2 transposed
/// convolution up, and a zero-initialised 1x1 head. With `residual` the input
/// is added to the head output.
class UNet {
public:
  UNet() = default;
  UNet(const UNetSpec &spec, std::uint64_t seed);

  Planes forward(const Planes &x);
  Planes backward(const Planes &grad_out);
  std::vector<Param *> params();
  const UNetSpec &spec() const { return spec_; }
  /// Spatial sizes must be multiples of this.
  int size_multiple() const { return 1 << (spec_.levels - 1); }

private:
  struct Block {
    Conv2d conv1, conv2;
    LeakyRelu act1, act2;
  };
  Planes run_block(Block &b, const Planes &x);
  Planes back_block(Block &b, const Planes &g);

  UNetSpec spec_;
  std::vector<Block> encoders_; // levels
  std::vector<Block> decoders_; // levels - 1, index = level
  std::vector<MaxPool2> pools_;
  std::vector<ConvTranspose2x2> ups_;
  Conv2d head_;
};

struct CriticSpec {
  int in_channels = 6;
  int width = 16;
  double slope = 0.2;
  double clip = 0.01;
};

/// PatchGAN-style critic: conv4x4/2, conv4x4/2 (both leaky-ReLU), conv3x3 to
/// one score channel. Every parameter is initialised and kept in [-clip, clip].
class Critic {
public:
  Critic() = default;
  Critic(const CriticSpec &spec, std::uint64_t seed);

  Planes forward(const Planes &x);
  Planes backward(const Planes &grad_scores);
  std::vector<Param *> params();
  void clip_weights();
  double max_abs_weight();
  const CriticSpec &spec() const { return spec_; }

private:
  CriticSpec spec_;
  Conv2d c1_, c2_, c3_;
  LeakyRelu a1_, a2_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0; // decoupled
};

class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(const std::vector<Param *> &params);
  long steps() const { return t_; }

private:
  AdamConfig cfg_;
  long t_ = 0;
};

void zero_grad(const std::vector<Param *> &params);
std::size_t parameter_count(const std::vector<Param *> &params);

} // namespace dtcmr::nn
