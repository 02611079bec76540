#include "dtcmr/denoise.hpp"
#include "dtcmr/maps.hpp"
#include "dtcmr/phantom.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace dtcmr;
using namespace dtcmr::denoise;
using fitting::BreathHoldBudget;
using fitting::SchemeVariant;

namespace {

phantom::CohortConfig small_cohort(double snr = 12.0) {
  phantom::CohortConfig c;
  c.base.image_size = {48, 48};
  c.base.lv_centre = {24.0, 24.0};
  c.endo_radius_min = 7.0;
  c.endo_radius_max = 9.0;
  c.wall_min = 5.0;
  c.wall_max = 6.0;
  c.centre_jitter = 2;
  c.noise.snr = snr;
  return c;
}

std::vector<SubjectRecord> small_records(int n, double snr = 12.0) {
  const auto cohort = small_cohort(snr);
  std::vector<SubjectRecord> out;
  for (int i = 0; i < n; ++i)
    out.push_back(make_record(i, phantom::make_subject(cohort, 7, i).dwi));
  return out;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.levels = 2;
  c.width = 4;
  c.critic_width = 4;
  c.batch_size = 2;
  c.epochs = 2;
  c.critic_steps = 2;
  c.learning_rate = 1e-3;
  c.critic_learning_rate = 1e-3;
  c.augment.crop_rows = 32;
  c.augment.crop_cols = 32;
  c.seed = 5;
  return c;
}

std::vector<std::vector<double>> weights(const DenoiserModel &m) {
  std::vector<std::vector<double>> out;
  for (const nn::Param *p : m.network.params())
    out.push_back(p->value);
  return out;
}

double max_abs_diff(const std::vector<double> &a, const std::vector<double> &b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

} // namespace

TEST_CASE("z-score statistics match a two-pass oracle over masked voxels") {
  const auto records = small_records(3);
  std::vector<const TensorField *> fields;
  for (const auto &r : records)
    fields.push_back(&r.reference);
  const NormStats s = compute_norm_stats(fields, NormMode::ZScore);
  for (int c = 0; c < kTensorChannels; ++c) {
    std::vector<double> v;
    for (const auto &r : records)
      for (std::size_t p = 0; p < r.reference.size.pixels(); ++p)
        if (r.reference.mask.data[p])
          v.push_back(r.reference.channel(static_cast<TensorChannel>(c))[p]);
    double mean = 0.0;
    for (double x : v)
      mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v)
      ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(v.size()));
    CHECK(std::abs(s.mean[c] - mean) < 1e-12 * std::max(1e-3, std::abs(mean)));
    CHECK(std::abs(s.std[c] - sd) < 1e-12 * sd);
  }

  // Normalising the training references gives zero mean, unit std.
  const Planes z = s.normalize(to_planes(records[0].reference), records[0].reference.mask);
  const Planes back = s.denormalize(z, records[0].reference.mask);
  CHECK(max_abs_diff(back.data, to_planes(records[0].reference).data) < 1e-10 * 1e-3);

  TensorField flat = records[0].reference;
  for (std::size_t p = 0; p < flat.size.pixels(); ++p)
    if (flat.mask.data[p])
      flat.channel(kDzz)[p] = 1e-3;
  CHECK_THROWS_AS(compute_norm_stats({&flat}, NormMode::ZScore), ValidationError);
  CHECK_THROWS_AS(compute_norm_stats({}, NormMode::ZScore), ValidationError);
}

TEST_CASE("fixed normalisation and JSON round trip") {
  NormStats f;
  f.mode = NormMode::Fixed;
  CHECK(f.normalize(0, 500e-6) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(f.denormalize(0, 1.0) == doctest::Approx(500e-6).epsilon(1e-14));
  const auto records = small_records(1);
  const NormStats z = compute_norm_stats({&records[0].reference}, NormMode::ZScore);
  CHECK(norm_from_json(norm_to_json(z)) == z);
  CHECK(norm_from_json(norm_to_json(f)) == f);
  NormStats bad = z;
  bad.std[2] = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("dataset assembly and subject split") {
  const auto records = small_records(10);
  std::vector<int> all(10);
  for (int i = 0; i < 10; ++i)
    all[i] = i;
  const auto multi = assemble_dataset(records, all, {BreathHoldBudget::one()},
                                      {SchemeVariant::First, SchemeVariant::Centre, SchemeVariant::Last},
                                      InputKind::Tensor);
  CHECK(multi.size() == 30);
  const auto single =
      assemble_dataset(records, all, {BreathHoldBudget::one()}, {SchemeVariant::First}, InputKind::Tensor);
  CHECK(single.size() == 10);
  CHECK(single[3].input.channels == 6);
  CHECK(single[3].target.data == to_planes(records[3].reference).data);

  const auto dwi = assemble_dataset(records, {0}, {BreathHoldBudget::one()}, {SchemeVariant::First}, InputKind::Dwi);
  CHECK(dwi[0].input.channels == 7); // b0 plus 6 directions at b600; 1BH keeps no b150
  const auto dwi_1bh = fitting::average_repetitions(
      fitting::select_repetitions(records[0].stack, {SchemeVariant::First, 0}, BreathHoldBudget::one()));
  CHECK(dwi[0].input.channels == static_cast<int>(dwi_1bh.size()));
  CHECK_THROWS_AS(assemble_dataset(records, {10}, {BreathHoldBudget::one()}, {SchemeVariant::First}, InputKind::Tensor),
                  ValidationError);

  const Split s = split_subjects(100, {0.8, 0.1, 0.1}, 42);
  CHECK(s.train.size() == 80);
  CHECK(s.validation.size() == 10);
  CHECK(s.test.size() == 10);
  std::set<int> seen;
  for (const auto *part : {&s.train, &s.validation, &s.test})
    for (int v : *part)
      CHECK(seen.insert(v).second);
  CHECK(seen.size() == 100);
  const Split again = split_subjects(100, {0.8, 0.1, 0.1}, 42);
  CHECK(again.train == s.train);
  CHECK(split_subjects(100, {0.8, 0.1, 0.1}, 43).train != s.train);
  CHECK_THROWS_AS(split_subjects(10, {0.5, 0.1, 0.1}, 1), ValidationError);

  const auto boot = bootstrap(s.train, 9);
  CHECK(boot.size() == s.train.size());
  for (int v : boot)
    CHECK(std::binary_search(s.train.begin(), s.train.end(), v));
}

TEST_CASE("augmentation identity and full turns") {
  const auto records = small_records(1);
  const auto ex =
      assemble_dataset(records, {0}, {BreathHoldBudget::one()}, {SchemeVariant::First}, InputKind::Tensor)[0];
  const auto id = transform_pair(ex.input, ex.target, ex.mask, 0.0, 0, 0, 48, 48, true, true);
  CHECK(id.input.data == ex.input.data);
  CHECK(id.target.data == ex.target.data);
  CHECK(id.mask.data == ex.mask.data);

  const auto turn = transform_pair(ex.input, ex.target, ex.mask, 360.0, 0, 0, 48, 48, true, true);
  CHECK(max_abs_diff(turn.input.data, ex.input.data) < 1e-6 * 1e-3);
  CHECK(turn.mask.data == ex.mask.data);

  const auto crop = transform_pair(ex.input, ex.target, ex.mask, 0.0, 8, 4, 32, 32, true, true);
  CHECK(crop.input.at(2, 0, 0) == ex.input.at(2, 8, 4));
  CHECK(crop.target.at(5, 31, 31) == ex.target.at(5, 39, 35));

  CHECK_THROWS_AS(transform_pair(ex.input, ex.target, ex.mask, 0.0, 20, 0, 32, 32, true, true), ValidationError);
  CHECK_THROWS_AS(transform_pair(ex.input, ex.target, ex.mask, 0.0, -1, 0, 32, 32, true, true), ValidationError);
  AugmentConfig big;
  big.crop_rows = 64;
  CHECK_THROWS_AS(augment(ex, big, 1), ValidationError);
}

TEST_CASE("90 degree rotation against an array oracle") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const int n = 12;
  Planes in(6, n, n), tgt(6, n, n);
  for (double &v : in.data)
    v = g(rng);
  for (double &v : tgt.data)
    v = g(rng);
  Mask m({n, n});
  for (int r = 2; r < 9; ++r)
    for (int c = 3; c < 11; ++c)
      m.set(r, c, true);
  const auto out = transform_pair(in, tgt, m, 90.0, 0, 0, n, n, true, false);
  // Counter-clockwise quarter turn: out(i, j) = in(j, n - 1 - i).
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int sr = j, sc = n - 1 - i;
      CHECK(out.mask.at(i, j) == m.at(sr, sc));
      CHECK(out.target.at(0, i, j) == tgt.at(0, sr, sc));
      // R = [[0, -1, 0], [1, 0, 0], [0, 0, 1]].
      CHECK(out.input.at(0, i, j) == doctest::Approx(in.at(1, sr, sc)));
      CHECK(out.input.at(1, i, j) == doctest::Approx(in.at(0, sr, sc)));
      CHECK(out.input.at(2, i, j) == doctest::Approx(in.at(2, sr, sc)));
      CHECK(out.input.at(3, i, j) == doctest::Approx(-in.at(3, sr, sc)));
      CHECK(out.input.at(4, i, j) == doctest::Approx(-in.at(5, sr, sc)));
      CHECK(out.input.at(5, i, j) == doctest::Approx(in.at(4, sr, sc)));
    }
  CHECK(out.mask.count() == m.count());
}

TEST_CASE("rotating a cylindrically symmetric phantom preserves its maps") {
  phantom::PhantomConfig cfg;
  cfg.image_size = {48, 48};
  cfg.lv_centre = {23.5, 23.5};
  cfg.endo_radius = 8.0;
  cfg.epi_radius = 18.0;
  const auto ph = phantom::generate_phantom(cfg);
  const Planes t = to_planes(ph.tensors);
  const auto rotated = transform_pair(t, t, ph.mask, 37.0, 0, 0, 48, 48, true, false);

  const auto truth_maps = maps::compute_maps(ph.tensors, ph.basis);
  const auto basis = maps::local_basis(rotated.mask, maps::PixelPoint{23.5, 23.5});
  const auto rot_maps = maps::compute_maps(to_tensor_field(rotated.input, rotated.mask), basis);
  const auto raw_maps = maps::compute_maps(to_tensor_field(rotated.target, rotated.mask), basis);

  std::vector<double> err, raw_err;
  for (std::size_t p = 0; p < ph.mask.size.pixels(); ++p)
    if (rotated.mask.data[p] && basis.valid.data[p]) {
      err.push_back(std::abs(rot_maps.ha.data[p] - truth_maps.ha.data[p]));
      raw_err.push_back(std::abs(raw_maps.ha.data[p] - truth_maps.ha.data[p]));
    }
  REQUIRE(err.size() > 300);
  std::sort(err.begin(), err.end());
  std::sort(raw_err.begin(), raw_err.end());
  const double median = err[err.size() / 2], raw_median = raw_err[raw_err.size() / 2];
  INFO("median HA error " << median << ", without reorientation " << raw_median);
  CHECK(median < 1.0);
  CHECK(raw_median > 5.0 * median);
}

TEST_CASE("network forward behaviour") {
  const auto records = small_records(2);
  const auto ex =
      assemble_dataset(records, {0}, {BreathHoldBudget::one()}, {SchemeVariant::First}, InputKind::Tensor)[0];
  const NormStats norm = compute_norm_stats({&records[0].reference, &records[1].reference}, NormMode::ZScore);
  nn::UNetSpec spec;
  spec.levels = 2;
  spec.width = 4;
  DenoiserModel model{nn::UNet(spec, 3), norm, InputKind::Tensor, 3, 0};

  // A residual network with a zero head passes its input through.
  const TensorField out = predict(model, ex.input, ex.mask);
  CHECK(max_abs_diff(out.components, ex.input.data) < 1e-15);

  const TensorField again = predict(model, ex.input, ex.mask);
  CHECK(again.components == out.components);
  DenoiserModel twin{nn::UNet(spec, 3), norm, InputKind::Tensor, 3, 0};
  CHECK(weights(twin) == weights(model));
  DenoiserModel other{nn::UNet(spec, 4), norm, InputKind::Tensor, 4, 0};
  CHECK(weights(other) != weights(model));

  // Away from activation kinks the network is locally linear: doubling a tiny
  // perturbation doubles the response.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 0.3);
  DenoiserModel live{nn::UNet(spec, 9), norm, InputKind::Tensor, 9, 0};
  for (nn::Param *p : live.network.params())
    if (p->name.rfind("head", 0) == 0)
      for (double &v : p->value)
        v = g(rng);
  const Planes x = live.normalize_input(ex.input, ex.mask);
  Planes dir(x.channels, x.rows, x.cols);
  for (double &v : dir.data)
    v = g(rng);
  auto response = [&](double eps) {
    Planes xp = x;
    for (std::size_t i = 0; i < xp.data.size(); ++i)
      xp.data[i] += eps * dir.data[i];
    const Planes y = forward(live, xp), y0 = forward(live, x);
    std::vector<double> d(y.data.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = y.data[i] - y0.data[i];
    return d;
  };
  const auto r1 = response(1e-7), r2 = response(2e-7);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < r1.size(); ++i) {
    num += (r2[i] - 2.0 * r1[i]) * (r2[i] - 2.0 * r1[i]);
    den += r2[i] * r2[i];
  }
  CHECK(std::sqrt(num / den) < 1e-6);
  CHECK_THROWS_AS(forward(live, Planes(6, 31, 32)), ValidationError);

  CHECK_THROWS_AS(ladder_row("BL+XYZ"), ValidationError);
  CHECK(ladder_row("BL").input == InputKind::Dwi);
  CHECK(ladder_row("BL").norm == NormMode::Fixed);
  CHECK_FALSE(ladder_row("BL+CN").residual);
  CHECK(ladder_row("BL+CN+T2T").schemes.size() == 1);
  CHECK(ladder_row("BL+CN+multiT2T").schemes.size() == 3);
  CHECK(ladder_row("WGUF").objective == Objective::Wgan);
  CHECK(ladder_row("WGUFx5").members == 5);
}

TEST_CASE("training overfits a single pair") {
  const auto records = small_records(1);
  const auto data =
      assemble_dataset(records, {0}, {BreathHoldBudget::one()}, {SchemeVariant::First}, InputKind::Tensor);
  const NormStats norm = compute_norm_stats({&records[0].reference}, NormMode::ZScore);
  TrainConfig cfg = tiny_config();
  cfg.levels = 3;
  cfg.width = 16;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 1;
  cfg.epochs = 500;
  cfg.augment.max_rotation_deg = 0.0;
  cfg.augment.centre_jitter = 0;
  const auto r = train(cfg, data, {}, norm, InputKind::Tensor, true, Objective::L1);
  REQUIRE(r.train_loss.size() == 500);
  CHECK(r.generator_steps == 500);
  INFO("first " << r.train_loss.front() << " best " << r.validation_loss[r.best_epoch]);
  CHECK(r.validation_loss[r.best_epoch] < 0.1 * r.train_loss.front());
}

TEST_CASE("adversarial training keeps critic weights clipped") {
  const auto records = small_records(3);
  const auto data = assemble_dataset(records, {0, 1, 2}, {BreathHoldBudget::one()}, {SchemeVariant::First},
                                     InputKind::Tensor);
  const NormStats norm = compute_norm_stats({&records[0].reference}, NormMode::ZScore);
  TrainConfig cfg = tiny_config();
  cfg.clip = 0.05;
  cfg.critic_learning_rate = 0.05; // large steps push weights against the clip
  const auto r = train(cfg, data, {}, norm, InputKind::Tensor, true, Objective::Wgan);
  REQUIRE(r.critic.has_value());
  CHECK(r.critic_updates == r.generator_steps * cfg.critic_steps);
  CHECK(r.max_critic_weight <= cfg.clip);
  nn::Critic critic = *r.critic;
  CHECK(critic.max_abs_weight() == doctest::Approx(cfg.clip));
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto records = small_records(3);
  const auto data = assemble_dataset(records, {0, 1, 2}, {BreathHoldBudget::one()}, {SchemeVariant::First},
                                     InputKind::Tensor);
  const NormStats norm = compute_norm_stats({&records[0].reference}, NormMode::ZScore);
  const TrainConfig cfg = tiny_config();
  const auto a = train(cfg, data, {data[0]}, norm, InputKind::Tensor, true, Objective::Wgan);
  const auto b = train(cfg, data, {data[0]}, norm, InputKind::Tensor, true, Objective::Wgan);
  CHECK(weights(a.model) == weights(b.model));
  CHECK(a.train_loss == b.train_loss);
  CHECK(a.validation_loss == b.validation_loss);
  TrainConfig other = cfg;
  other.seed = 6;
  CHECK(weights(train(other, data, {data[0]}, norm, InputKind::Tensor, true, Objective::Wgan).model) !=
        weights(a.model));

  auto poisoned = data;
  for (std::size_t q = 0; q < poisoned[1].mask.data.size(); ++q)
    if (poisoned[1].mask.data[q])
      poisoned[1].input.data[q] = std::nan("");
  CHECK_THROWS_AS(train(cfg, poisoned, {}, norm, InputKind::Tensor, true, Objective::L1), NumericalError);
}

TEST_CASE("ensemble averaging") {
  const auto records = small_records(2);
  const auto ex =
      assemble_dataset(records, {0}, {BreathHoldBudget::one()}, {SchemeVariant::First}, InputKind::Tensor)[0];
  const NormStats norm = compute_norm_stats({&records[0].reference, &records[1].reference}, NormMode::ZScore);
  nn::UNetSpec spec;
  spec.levels = 2;
  spec.width = 4;
  std::vector<DenoiserModel> members;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 0.2);
  for (int k = 0; k < 4; ++k) {
    DenoiserModel m{nn::UNet(spec, 20 + k), norm, InputKind::Tensor, 0, 0};
    for (nn::Param *p : m.network.params())
      if (p->name.rfind("head", 0) == 0)
        for (double &v : p->value)
          v = g(rng);
    members.push_back(std::move(m));
  }

  CHECK(ensemble_predict({&members[0]}, ex.input, ex.mask).components ==
        predict(members[0], ex.input, ex.mask).components);

  const auto one = predict(members[1], ex.input, ex.mask);
  const auto same = ensemble_predict({&members[1], &members[1], &members[1]}, ex.input, ex.mask);
  CHECK(max_abs_diff(same.components, one.components) < 1e-15);

  // The ensemble's error never exceeds the members' average error.
  std::vector<const DenoiserModel *> ptrs;
  double member_err = 0.0;
  for (const auto &m : members) {
    ptrs.push_back(&m);
    member_err += nn::l1_loss(to_planes(predict(m, ex.input, ex.mask)), ex.target, ex.mask);
  }
  member_err /= static_cast<double>(members.size());
  const double ens_err = nn::l1_loss(to_planes(ensemble_predict(ptrs, ex.input, ex.mask)), ex.target, ex.mask);
  CHECK(ens_err <= member_err + 1e-18);
  CHECK(ens_err < member_err);

  DenoiserModel mismatched{nn::UNet(spec, 1), NormStats{}, InputKind::Tensor, 0, 0};
  CHECK_THROWS_AS(ensemble_predict({&members[0], &mismatched}, ex.input, ex.mask), ValidationError);
  CHECK_THROWS_AS(ensemble_predict({}, ex.input, ex.mask), ValidationError);
}

TEST_CASE("checkpoint round trip") {
  const auto records = small_records(3);
  const auto data = assemble_dataset(records, {0, 1, 2}, {BreathHoldBudget::one()}, {SchemeVariant::First},
                                     InputKind::Tensor);
  const NormStats norm = compute_norm_stats({&records[0].reference}, NormMode::ZScore);
  const auto r = train(tiny_config(), data, {}, norm, InputKind::Tensor, true, Objective::L1);

  const auto dir = std::filesystem::temp_directory_path() / "dtcmr_test_denoise";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.dtdn";
  save_model(path, r.model, {{"row", "BL+CN+T2T"}});
  const DenoiserModel loaded = load_model(path);
  CHECK(weights(loaded) == weights(r.model));
  CHECK(loaded.norm == r.model.norm);
  CHECK(loaded.seed == r.model.seed);
  CHECK(loaded.config_hash == r.model.config_hash);
  CHECK(predict(loaded, data[1].input, data[1].mask).components ==
        predict(r.model, data[1].input, data[1].mask).components);

  std::ifstream js(dir / "model.json");
  const auto manifest = nlohmann::json::parse(js);
  CHECK(manifest.at("row") == "BL+CN+T2T");
  CHECK(manifest.at("kind") == "denoiser");

  {
    std::ofstream bad(dir / "bad.dtdn", std::ios::binary);
    bad << "NOPE";
  }
  CHECK_THROWS_AS(load_model(dir / "bad.dtdn"), ValidationError);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(load_model(path), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("ensemble rows share normalisation and the first member matches the single model") {
  const auto records = small_records(6);
  const Split split = split_subjects(6, {0.67, 0.165, 0.165}, 3);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  const auto single = train_row(ladder_row("WGUF"), cfg, records, split, BreathHoldBudget::one());
  const auto five = train_row(ladder_row("WGUFx5"), cfg, records, split, BreathHoldBudget::one());
  REQUIRE(five.members.size() == 5);
  CHECK(single.training_pairs == split.train.size() * 3);
  CHECK(weights(five.members[0].model) == weights(single.members[0].model));
  for (const auto &m : five.members)
    CHECK(m.model.norm == single.members[0].model.norm);
  CHECK(weights(five.members[1].model) != weights(five.members[0].model));

  const auto bl = train_row(ladder_row("BL"), cfg, records, split, BreathHoldBudget::one());
  CHECK(bl.members[0].model.input_kind == InputKind::Dwi);
  CHECK(bl.members[0].model.norm.input_scale > 100.0);
}
