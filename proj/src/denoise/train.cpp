#include "dtcmr/denoise.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace dtcmr::denoise {
namespace {

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

std::uint64_t derive(std::initializer_list<std::uint64_t> parts) { return seeded(parts)(); }

enum Stream : std::uint64_t { kNetInit = 1, kCriticInit, kShuffle, kAugment, kMember, kBootstrap };

void mask_planes(Planes &p, const Mask &mask) {
  const std::size_t plane = p.plane();
  for (int c = 0; c < p.channels; ++c)
    for (std::size_t q = 0; q < plane; ++q)
      if (!mask.data[q])
        p.data[c * plane + q] = 0.0;
}

void scale(Planes &p, double f) {
  for (double &v : p.data)
    v *= f;
}

std::vector<std::vector<double>> snapshot(const std::vector<nn::Param *> &params) {
  std::vector<std::vector<double>> out;
  for (const nn::Param *p : params)
    out.push_back(p->value);
  return out;
}

void restore(const std::vector<nn::Param *> &params, const std::vector<std::vector<double>> &values) {
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i]->value = values[i];
}

} // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !(critic_learning_rate > 0.0))
    throw ValidationError("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("Adam betas must lie in [0, 1)");
  if (batch_size < 1 || epochs < 1)
    throw ValidationError("batch size and epochs must be positive");
  if (critic_steps < 1 || !(clip > 0.0) || adversarial_weight < 0.0 || weight_decay < 0.0)
    throw ValidationError("invalid adversarial settings");
  if (levels < 1 || width < 1 || critic_width < 1)
    throw ValidationError("invalid network size");
  if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9)
    throw ValidationError("split ratios must sum to 1");
  const int multiple = 1 << (levels - 1);
  if (augment.crop_rows % multiple != 0 || augment.crop_cols % multiple != 0)
    throw ValidationError("crop size must be a multiple of " + std::to_string(multiple));
}

nlohmann::json train_config_to_json(const TrainConfig &c) {
  return {{"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"critic_learning_rate", c.critic_learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"critic_steps", c.critic_steps},
          {"adversarial_weight", c.adversarial_weight},
          {"clip", c.clip},
          {"critic_width", c.critic_width},
          {"levels", c.levels},
          {"width", c.width},
          {"slope", c.slope},
          {"seed", c.seed},
          {"split", c.split},
          {"augment",
           {{"crop", {c.augment.crop_rows, c.augment.crop_cols}},
            {"max_rotation_deg", c.augment.max_rotation_deg},
            {"centre_jitter", c.augment.centre_jitter}}}};
}

TrainConfig train_config_from_json(const nlohmann::json &j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.critic_learning_rate = j.value("critic_learning_rate", c.critic_learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.critic_steps = j.value("critic_steps", c.critic_steps);
    c.adversarial_weight = j.value("adversarial_weight", c.adversarial_weight);
    c.clip = j.value("clip", c.clip);
    c.critic_width = j.value("critic_width", c.critic_width);
    c.levels = j.value("levels", c.levels);
    c.width = j.value("width", c.width);
    c.slope = j.value("slope", c.slope);
    c.seed = j.value("seed", c.seed);
    if (j.contains("split"))
      c.split = j.at("split").get<std::array<double, 3>>();
    if (j.contains("augment")) {
      const auto &a = j.at("augment");
      if (a.contains("crop")) {
        c.augment.crop_rows = a.at("crop").at(0).get<int>();
        c.augment.crop_cols = a.at("crop").at(1).get<int>();
      }
      c.augment.max_rotation_deg = a.value("max_rotation_deg", c.augment.max_rotation_deg);
      c.augment.centre_jitter = a.value("centre_jitter", c.augment.centre_jitter);
    }
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t config_hash(const nlohmann::json &j) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

Planes DenoiserModel::normalize_input(const Planes &raw, const Mask &mask) const {
  if (input_kind == InputKind::Tensor)
    return norm.normalize(raw, mask);
  Planes out(raw.channels, raw.rows, raw.cols);
  const std::size_t plane = raw.plane();
  for (int c = 0; c < raw.channels; ++c)
    for (std::size_t q = 0; q < plane; ++q)
      if (mask.data[q])
        out.data[c * plane + q] = raw.data[c * plane + q] / norm.input_scale;
  return out;
}

Planes forward(const DenoiserModel &model, const Planes &normalized_input) {
  return model.network.forward(normalized_input);
}

TensorField predict(const DenoiserModel &model, const Planes &raw_input, const Mask &mask) {
  return ensemble_predict({&model}, raw_input, mask);
}

TensorField ensemble_predict(const std::vector<const DenoiserModel *> &models, const Planes &raw_input,
                             const Mask &mask) {
  if (models.empty())
    throw ValidationError("ensemble_predict: no models");
  for (const DenoiserModel *m : models)
    if (!(m->norm == models.front()->norm) || m->input_kind != models.front()->input_kind)
      throw ValidationError("ensemble members must share normalisation and input convention");
  const Planes x = models.front()->normalize_input(raw_input, mask);
  Planes sum = forward(*models.front(), x);
  for (std::size_t k = 1; k < models.size(); ++k) {
    const Planes y = forward(*models[k], x);
    for (std::size_t i = 0; i < sum.data.size(); ++i)
      sum.data[i] += y.data[i];
  }
  if (models.size() > 1)
    scale(sum, 1.0 / static_cast<double>(models.size()));
  return to_tensor_field(models.front()->norm.denormalize(sum, mask), mask);
}

double evaluate_loss(const DenoiserModel &model, const std::vector<Example> &examples) {
  if (examples.empty())
    throw ValidationError("evaluate_loss: no examples");
  double total = 0.0;
  for (const Example &ex : examples) {
    const Planes out = forward(model, model.normalize_input(ex.input, ex.mask));
    total += nn::l1_loss(out, model.norm.normalize(ex.target, ex.mask), ex.mask);
  }
  return total / static_cast<double>(examples.size());
}

double dataset_max(const std::vector<Example> &examples) {
  double m = 0.0;
  for (const Example &ex : examples) {
    const std::size_t plane = ex.input.plane();
    for (int c = 0; c < ex.input.channels; ++c)
      for (std::size_t q = 0; q < plane; ++q)
        if (ex.mask.data[q])
          m = std::max(m, std::abs(ex.input.data[c * plane + q]));
  }
  if (!(m > 0.0))
    throw ValidationError("dataset_max: inputs are all zero");
  return m;
}

TrainResult train(const TrainConfig &config, const std::vector<Example> &train_set,
                  const std::vector<Example> &validation, const NormStats &norm, InputKind kind, bool residual,
                  Objective objective) {
  config.validate();
  norm.validate();
  if (kind == InputKind::Dwi && !(norm.input_scale > 0.0))
    throw ValidationError("DWI input scale must be positive");
  if (train_set.empty())
    throw ValidationError("train: empty training set");

  nn::UNetSpec spec;
  spec.levels = config.levels;
  spec.width = config.width;
  spec.in_channels = train_set.front().input.channels;
  spec.out_channels = kTensorChannels;
  spec.residual = residual;
  spec.slope = config.slope;
  if (residual && kind != InputKind::Tensor)
    throw ValidationError("residual output requires tensor input");
  for (const Example &ex : train_set)
    if (ex.input.channels != spec.in_channels)
      throw ValidationError("train: inconsistent input channel counts");

  TrainResult result;
  result.training_pairs = train_set.size();
  DenoiserModel &model = result.model;
  model.network = nn::UNet(spec, derive({config.seed, kNetInit}));
  model.norm = norm;
  model.input_kind = kind;
  model.seed = config.seed;
  model.config_hash = config_hash(train_config_to_json(config));

  AugmentConfig aug = config.augment;
  aug.reorient_input = kind == InputKind::Tensor;
  aug.reorient_target = true;

  const auto gen_params = model.network.params();
  nn::Adam gen_opt({config.learning_rate, config.beta1, config.beta2, 1e-8, config.weight_decay});
  std::vector<nn::Param *> critic_params;
  nn::Adam critic_opt({config.critic_learning_rate, config.beta1, config.beta2, 1e-8, 0.0});
  if (objective == Objective::Wgan) {
    nn::CriticSpec cs;
    cs.in_channels = kTensorChannels;
    cs.width = config.critic_width;
    cs.clip = config.clip;
    result.critic.emplace(cs, derive({config.seed, kCriticInit}));
    critic_params = result.critic->params();
    result.max_critic_weight = result.critic->max_abs_weight();
  }

  auto shuffle_rng = seeded({config.seed, kShuffle});
  std::vector<std::size_t> order(train_set.size());
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_weights = snapshot(gen_params);

  struct Sample {
    Planes x, y;
    Mask mask;
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = i;
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order[i], order[pick(shuffle_rng)]);
    }
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<Sample> batch;
      for (std::size_t k = start; k < end; ++k) {
        const Example &ex = train_set[order[k]];
        AugmentedPair a = augment(ex, aug, derive({config.seed, kAugment, static_cast<std::uint64_t>(epoch), k}));
        if (a.mask.count() == 0)
          continue;
        batch.push_back({model.normalize_input(a.input, a.mask), norm.normalize(a.target, a.mask), a.mask});
      }
      if (batch.empty())
        continue;

      if (objective == Objective::Wgan) {
        nn::Critic &critic = *result.critic;
        std::vector<Planes> fakes;
        for (const Sample &s : batch) {
          Planes f = model.network.forward(s.x);
          mask_planes(f, s.mask);
          fakes.push_back(std::move(f));
        }
        for (int step = 0; step < config.critic_steps; ++step) {
          nn::zero_grad(critic_params);
          for (std::size_t k = 0; k < batch.size(); ++k) {
            // Minimise mean D(fake) - mean D(real).
            const Planes real_scores = critic.forward(batch[k].y);
            critic.backward(Planes(1, real_scores.rows, real_scores.cols,
                                   -1.0 / (static_cast<double>(real_scores.data.size()) * batch.size())));
            const Planes fake_scores = critic.forward(fakes[k]);
            critic.backward(Planes(1, fake_scores.rows, fake_scores.cols,
                                   1.0 / (static_cast<double>(fake_scores.data.size()) * batch.size())));
          }
          critic_opt.step(critic_params);
          critic.clip_weights();
          ++result.critic_updates;
          result.max_critic_weight = std::max(result.max_critic_weight, critic.max_abs_weight());
        }
      }

      nn::zero_grad(gen_params);
      const double inv_n = 1.0 / static_cast<double>(batch.size());
      for (const Sample &s : batch) {
        const Planes out = model.network.forward(s.x);
        Planes grad;
        const double loss = nn::l1_loss(out, s.y, s.mask, &grad);
        if (!std::isfinite(loss)) {
          std::ostringstream msg;
          msg << "training diverged: non-finite loss at epoch " << epoch << ", generator step "
              << result.generator_steps;
          throw NumericalError(msg.str());
        }
        epoch_loss += loss;
        ++seen;
        scale(grad, inv_n);
        if (objective == Objective::Wgan && config.adversarial_weight > 0.0) {
          Planes fake = out;
          mask_planes(fake, s.mask);
          const Planes scores = result.critic->forward(fake);
          Planes g_fake = result.critic->backward(
              Planes(1, scores.rows, scores.cols,
                     -config.adversarial_weight * inv_n / static_cast<double>(scores.data.size())));
          mask_planes(g_fake, s.mask);
          for (std::size_t i = 0; i < grad.data.size(); ++i)
            grad.data[i] += g_fake.data[i];
        }
        model.network.backward(grad);
      }
      gen_opt.step(gen_params);
      ++result.generator_steps;
    }
    result.train_loss.push_back(seen ? epoch_loss / static_cast<double>(seen) : 0.0);
    const double val = validation.empty() ? result.train_loss.back() : evaluate_loss(model, validation);
    if (!std::isfinite(val))
      throw NumericalError("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
    result.validation_loss.push_back(val);
    if (config.progress) {
      std::ostringstream msg;
      msg << "  epoch " << epoch + 1 << "/" << config.epochs << " train " << result.train_loss.back() << " val "
          << val;
      config.progress(msg.str());
    }
    if (val < best) {
      best = val;
      result.best_epoch = epoch;
      best_weights = snapshot(gen_params);
    }
  }
  restore(gen_params, best_weights);
  return result;
}

LadderRow ladder_row(const std::string &name) {
  using fitting::SchemeVariant;
  LadderRow r;
  r.name = name;
  const std::vector<SchemeVariant> multi{SchemeVariant::First, SchemeVariant::Centre, SchemeVariant::Last};
  if (name == "BL") {
    r.input = InputKind::Dwi;
    r.norm = NormMode::Fixed;
    r.residual = false;
  } else if (name == "BL+CN") {
    r.input = InputKind::Dwi;
    r.residual = false;
  } else if (name == "BL+T2T") {
    r.norm = NormMode::Fixed;
  } else if (name == "BL+CN+T2T") {
  } else if (name == "BL+CN+multiT2T") {
    r.schemes = multi;
  } else if (name == "WGUF" || name == "WGUFx5") {
    r.schemes = multi;
    r.objective = Objective::Wgan;
    r.members = name == "WGUF" ? 1 : 5;
  } else {
    throw ValidationError("unknown ladder row '" + name + "'");
  }
  return r;
}

bool same_members(const LadderRow &a, const LadderRow &b) {
  return a.input == b.input && a.norm == b.norm && a.residual == b.residual && a.schemes == b.schemes &&
         a.objective == b.objective;
}

RowModels train_row(const LadderRow &row, const TrainConfig &config, const std::vector<SubjectRecord> &records,
                    const Split &split, const fitting::BreathHoldBudget &budget, const RowModels *reuse) {
  if (row.members < 1)
    throw ValidationError("ladder row needs at least one member");
  std::vector<const TensorField *> targets;
  for (int s : split.train)
    targets.push_back(&records.at(s).reference);
  NormStats norm = compute_norm_stats(targets, row.norm);
  const auto validation =
      assemble_dataset(records, split.validation, {budget}, {fitting::SchemeVariant::First}, row.input);

  RowModels out;
  out.row = row;
  for (int k = 0; k < row.members; ++k) {
    TrainConfig cfg = config;
    std::vector<int> subjects = split.train;
    if (k > 0) {
      cfg.seed = derive({config.seed, kMember, static_cast<std::uint64_t>(k)});
      subjects = bootstrap(split.train, derive({config.seed, kBootstrap, static_cast<std::uint64_t>(k)}));
    }
    const auto train_set = assemble_dataset(records, subjects, {budget}, row.schemes, row.input);
    if (k == 0) {
      out.training_pairs = train_set.size();
      if (row.input == InputKind::Dwi)
        norm.input_scale = dataset_max(train_set);
    }
    if (reuse && same_members(reuse->row, row) && k < static_cast<int>(reuse->members.size()) &&
        reuse->members[k].model.config_hash == config_hash(train_config_to_json(cfg)) &&
        reuse->members[k].model.norm == norm) {
      out.members.push_back(reuse->members[k]);
      continue;
    }
    out.members.push_back(train(cfg, train_set, validation, norm, row.input, row.residual, row.objective));
  }
  return out;
}

} // namespace dtcmr::denoise
