#pragma once

#include "dtcmr/core.hpp"
#include "dtcmr/fitting.hpp"
#include "dtcmr/nn.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dtcmr::denoise {

using nn::Planes;

enum class NormMode { ZScore, Fixed };

/// Tensor normalisation shared by network input and output.
///
/// ZScore: (D - mean[c]) / std[c] per channel, statistics in mm^2/s.
/// Fixed: D expressed in 1e-6 mm^2/s and divided by fixed_scale.
/// Background voxels are zero in normalised space.
struct NormStats {
  NormMode mode = NormMode::ZScore;
  std::array<double, kTensorChannels> mean{};
  std::array<double, kTensorChannels> std{1, 1, 1, 1, 1, 1};
  double fixed_scale = 500.0;
  double input_scale = 1.0; // DWI inputs are divided by this (training-set maximum)
  static constexpr double kFixedUnit = 1e6;

  double normalize(int channel, double v) const;
  double denormalize(int channel, double v) const;
  /// Normalised value with v = 0; used for background handling.
  Planes normalize(const Planes &raw, const Mask &mask) const;
  Planes denormalize(const Planes &normalized, const Mask &mask) const;
  void validate() const;
  bool operator==(const NormStats &) const = default;
};

/// Masked voxels of the given tensor fields only; throws on a zero-variance channel.
NormStats compute_norm_stats(const std::vector<const TensorField *> &fields, NormMode mode);

nlohmann::json norm_to_json(const NormStats &n);
NormStats norm_from_json(const nlohmann::json &j);

Planes to_planes(const TensorField &t);
TensorField to_tensor_field(const Planes &p, const Mask &mask);

enum class InputKind {
  Tensor, // noisy LLS tensors (tensor-to-tensor)
  Dwi,    // repetition-averaged DWIs, one channel per (b, direction)
};

/// One subject's registered full stack and the reference fit from all repetitions.
struct SubjectRecord {
  int id = 0;
  DwiStack stack;
  TensorField reference;
};

SubjectRecord make_record(int id, const DwiStack &registered_stack);

struct Example {
  int subject = 0;
  std::string budget;
  fitting::SchemeVariant scheme = fitting::SchemeVariant::First;
  Planes input;  // raw: tensors in mm^2/s or DWI magnitudes
  Planes target; // raw reference tensors
  Mask mask;
};

/// Network input for one subsampled stack.
Planes make_input(const DwiStack &subsampled, InputKind kind);

/// One example per (subject, budget, scheme), subjects in the given order.
std::vector<Example> assemble_dataset(const std::vector<SubjectRecord> &records, const std::vector<int> &subjects,
                                      const std::vector<fitting::BreathHoldBudget> &budgets,
                                      const std::vector<fitting::SchemeVariant> &schemes, InputKind kind);

struct Split {
  std::vector<int> train, validation, test;
};

/// Seeded shuffle of 0..n-1 cut at round(n * ratio) boundaries.
Split split_subjects(int n, const std::array<double, 3> &ratios, std::uint64_t seed);

/// Sample of the same size drawn with replacement.
std::vector<int> bootstrap(const std::vector<int> &ids, std::uint64_t seed);

struct AugmentConfig {
  int crop_rows = 64;
  int crop_cols = 64;
  double max_rotation_deg = 180.0; // angle uniform in [-max, max]
  int centre_jitter = 4;           // crop centre offset from the mask centroid, pixels
  bool reorient_input = true;      // rotate tensor channels of the input
  bool reorient_target = true;
};

struct AugmentedPair {
  Planes input;
  Planes target;
  Mask mask;
};

/// Rotates by `angle_deg` (counter-clockwise in the x-east/y-north frame)
/// about the centre of the crop window whose top-left corner is
/// (top, left), then crops. Bilinear for data, nearest for the mask; tensors
/// are rotated as R D R^T when reoriented. Samples outside the image are 0.
AugmentedPair transform_pair(const Planes &input, const Planes &target, const Mask &mask, double angle_deg, int top,
                             int left, int crop_rows, int crop_cols, bool reorient_input, bool reorient_target);

/// Seeded random rotation and crop around the mask centroid.
AugmentedPair augment(const Example &example, const AugmentConfig &config, std::uint64_t seed);

enum class Objective { L1, Wgan };

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double critic_learning_rate = 1e-4;
  int batch_size = 8;
  int epochs = 500;
  int critic_steps = 5;
  double adversarial_weight = 0.01;
  double clip = 0.01;
  int critic_width = 16;
  int levels = 3;
  int width = 16;
  double slope = 0.1;
  std::uint64_t seed = 0;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  AugmentConfig augment;
  /// Called after every epoch; not part of the serialised configuration.
  std::function<void(const std::string &)> progress;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig &c);
TrainConfig train_config_from_json(const nlohmann::json &j);

/// FNV-1a 64 over a JSON document's compact dump.
std::uint64_t config_hash(const nlohmann::json &j);

struct DenoiserModel {
  mutable nn::UNet network; // layer caches change during forward
  NormStats norm;
  InputKind input_kind = InputKind::Tensor;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  Planes normalize_input(const Planes &raw, const Mask &mask) const;
};

/// Network output in normalised tensor space.
Planes forward(const DenoiserModel &model, const Planes &normalized_input);

/// Raw input -> de-noised tensors (background zero, mask from `mask`).
TensorField predict(const DenoiserModel &model, const Planes &raw_input, const Mask &mask);

/// Mean of the members' normalised outputs, denormalised once.
TensorField ensemble_predict(const std::vector<const DenoiserModel *> &models, const Planes &raw_input,
                             const Mask &mask);

struct TrainResult {
  DenoiserModel model;
  std::optional<nn::Critic> critic;
  std::vector<double> train_loss; // per epoch, mean masked L1 (normalised)
  std::vector<double> validation_loss;
  int best_epoch = -1;
  long generator_steps = 0;
  long critic_updates = 0;
  double max_critic_weight = 0.0; // largest |w| seen after any critic update
  std::size_t training_pairs = 0;
};

/// Mean masked L1 in normalised space over unaugmented examples.
double evaluate_loss(const DenoiserModel &model, const std::vector<Example> &examples);

/// Trains a generator from scratch and returns the weights with the lowest
/// validation loss (last epoch when `validation` is empty).
TrainResult train(const TrainConfig &config, const std::vector<Example> &train_set,
                  const std::vector<Example> &validation, const NormStats &norm, InputKind kind, bool residual,
                  Objective objective);

/// Largest input magnitude over masked voxels; the DWI input scale.
double dataset_max(const std::vector<Example> &examples);

/// Ladder configurations: BL, BL+CN, BL+T2T, BL+CN+T2T, BL+CN+multiT2T, WGUF, WGUFx5.
struct LadderRow {
  std::string name;
  InputKind input = InputKind::Tensor;
  NormMode norm = NormMode::ZScore;
  bool residual = true;
  std::vector<fitting::SchemeVariant> schemes{fitting::SchemeVariant::First};
  Objective objective = Objective::L1;
  int members = 1;
};

LadderRow ladder_row(const std::string &name);

struct RowModels {
  LadderRow row;
  std::vector<TrainResult> members;
  std::size_t training_pairs = 0; // per member, before bootstrap
};

/// Trains every member of a ladder row on the split's training subjects.
/// Norm stats come from the full training split; members beyond the first
/// use a bootstrap resample of the training subjects and their own seed.
/// Members already present in `reuse` (same row settings and config) are
/// copied instead of retrained; training is deterministic, so the result is
/// identical.
RowModels train_row(const LadderRow &row, const TrainConfig &config, const std::vector<SubjectRecord> &records,
                    const Split &split, const fitting::BreathHoldBudget &budget, const RowModels *reuse = nullptr);

/// True when two rows train identical members (everything but the member count).
bool same_members(const LadderRow &a, const LadderRow &b);

/// Binary checkpoint "DTDN" plus a JSON manifest next to it (.json).
void save_model(const std::filesystem::path &path, const DenoiserModel &model, const nlohmann::json &manifest);
DenoiserModel load_model(const std::filesystem::path &path);

} // namespace dtcmr::denoise
