#include "dtcmr/harness.hpp"
#include "dtcmr/io.hpp"

#include "parallel.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace dtcmr::harness {

std::string fmt(double v, int precision) {
  if (std::isnan(v))
    return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + '"';
}

namespace {

std::ofstream open_csv(const fs::path &path) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw ValidationError("cannot write " + path.string());
  return os;
}

void write_row(std::ostream &os, const std::vector<std::string> &fields) {
  for (std::size_t i = 0; i < fields.size(); ++i)
    os << (i ? "," : "") << csv_field(fields[i]);
  os << "\r\n";
}

std::vector<double> column(const std::vector<MapErrors> &errors, int metric) {
  std::vector<double> v;
  v.reserve(errors.size());
  for (const auto &e : errors)
    v.push_back(e[metric]);
  return v;
}

std::string median_iqr_text(const std::vector<double> &v) {
  return fmt(metrics::quantile(v, 0.5), 2) + " [" + fmt(metrics::quantile(v, 0.25), 2) + ", " +
         fmt(metrics::quantile(v, 0.75), 2) + "]";
}

nlohmann::json errors_json(const std::vector<MapErrors> &errors) {
  nlohmann::json j = nlohmann::json::object();
  for (int m = 0; m < kMetricCount; ++m)
    j[kMetricNames[m]] = column(errors, m);
  return j;
}

} // namespace

std::uint64_t subject_seed(std::uint64_t study_seed, int subject_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(study_seed), static_cast<std::uint32_t>(study_seed >> 32),
                    static_cast<std::uint32_t>(subject_id)};
  std::mt19937_64 rng(seq);
  return rng();
}

const std::vector<MapErrors> &RepetitionStudy::errors_for(const std::string &budget,
                                                          fitting::SchemeVariant scheme) const {
  for (std::size_t b = 0; b < config.budgets.size(); ++b)
    if (config.budgets[b].name == budget)
      for (std::size_t s = 0; s < config.schemes.size(); ++s)
        if (config.schemes[s] == scheme)
          return errors[b][s];
  throw ValidationError("study has no " + budget + "/" + fitting::scheme_label(scheme) + " results");
}

RepetitionStudy run_repetition_study(const std::vector<PreparedSubject> &subjects,
                                     const RepetitionStudyConfig &config) {
  if (subjects.empty())
    throw ValidationError("repetition study: no subjects");
  if (config.budgets.empty() || config.schemes.empty())
    throw ValidationError("repetition study: no budgets or schemes");
  RepetitionStudy study;
  study.config = config;
  const std::size_t nb = config.budgets.size(), ns = config.schemes.size(), n = subjects.size();
  study.errors.assign(nb, std::vector<std::vector<MapErrors>>(ns, std::vector<MapErrors>(n)));
  for (const auto &s : subjects)
    study.subjects.push_back(s.name);

  detail::parallel_for(n, config.jobs, [&](std::size_t i) {
    const PreparedSubject &subj = subjects[i];
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t s = 0; s < ns; ++s) {
        const fitting::SamplingScheme scheme{config.schemes[s], subject_seed(config.seed, subj.id)};
        const DwiStack sub = fitting::select_repetitions(subj.registered, scheme, config.budgets[b]);
        study.errors[b][s][i] = tensor_errors(fitting::fit_stack(sub).tensors, subj);
      }
  });

  for (std::size_t b = 0; b < nb; ++b)
    for (int m = 0; m < kMetricCount; ++m) {
      for (std::size_t s = 0; s < ns; ++s) {
        const auto v = column(study.errors[b][s], m);
        study.summary.push_back({config.budgets[b].name, fitting::scheme_label(config.schemes[s]), kMetricNames[m],
                                 metrics::quantile(v, 0.5), metrics::quantile(v, 0.25), metrics::quantile(v, 0.75),
                                 v.size()});
      }
      for (std::size_t s1 = 0; s1 < ns; ++s1)
        for (std::size_t s2 = s1 + 1; s2 < ns; ++s2) {
          const auto a = column(study.errors[b][s1], m), c = column(study.errors[b][s2], m);
          study.ks.push_back({config.budgets[b].name, kMetricNames[m], fitting::scheme_label(config.schemes[s1]),
                              fitting::scheme_label(config.schemes[s2]), metrics::ks_two_sample(a, c)});
        }
    }
  return study;
}

void write_repetition_csv(const fs::path &path, const RepetitionStudy &study) {
  auto os = open_csv(path);
  write_row(os, {"budget", "scheme", "metric", "error", "unit", "median", "q1", "q3", "iqr", "n", "median_iqr"});
  for (const SummaryRow &r : study.summary) {
    int m = 0;
    while (r.metric != kMetricNames[m])
      ++m;
    const std::string fmt_cell = fmt(r.median, 2) + " [" + fmt(r.q1, 2) + ", " + fmt(r.q3, 2) + "]";
    write_row(os, {r.budget, r.scheme, r.metric, m < 2 ? "MAAE" : "MAE", kMetricUnits[m], fmt(r.median), fmt(r.q1),
                   fmt(r.q3), fmt(r.q3 - r.q1), std::to_string(r.n), fmt_cell});
  }
}

void write_ks_csv(const fs::path &path, const RepetitionStudy &study) {
  auto os = open_csv(path);
  write_row(os, {"budget", "metric", "scheme_a", "scheme_b", "ks_d", "p_value", "significant"});
  for (const KsCell &c : study.ks)
    write_row(os, {c.budget, c.metric, c.scheme_a, c.scheme_b, fmt(c.test.statistic), fmt(c.test.p_value, 8),
                   c.test.p_value < metrics::kSignificance ? "yes" : "no"});
}

nlohmann::json repetition_json(const RepetitionStudy &study) {
  nlohmann::json budgets = nlohmann::json::array();
  for (std::size_t b = 0; b < study.config.budgets.size(); ++b) {
    nlohmann::json schemes = nlohmann::json::object();
    for (std::size_t s = 0; s < study.config.schemes.size(); ++s)
      schemes[fitting::scheme_label(study.config.schemes[s])] = errors_json(study.errors[b][s]);
    budgets.push_back({{"budget", study.config.budgets[b].name}, {"per_subject", schemes}});
  }
  nlohmann::json ks = nlohmann::json::array();
  for (const KsCell &c : study.ks)
    ks.push_back({{"budget", c.budget},
                  {"metric", c.metric},
                  {"a", c.scheme_a},
                  {"b", c.scheme_b},
                  {"d", c.test.statistic},
                  {"p", c.test.p_value}});
  nlohmann::json units = nlohmann::json::object();
  for (int m = 0; m < kMetricCount; ++m)
    units[kMetricNames[m]] = kMetricUnits[m];
  return {{"kind", "repetition_study"},
          {"seed", study.config.seed},
          {"subjects", study.subjects},
          {"units", units},
          {"budgets", budgets},
          {"ks", ks},
          {"significance", metrics::kSignificance}};
}

// ---- de-noising ------------------------------------------------------------

DenoiseStudy run_denoise_study(const std::vector<PreparedSubject> &subjects, const DenoiseStudyConfig &config,
                               const Log &log) {
  config.train.validate();
  if (subjects.size() < 3)
    throw ValidationError("de-noising study needs at least 3 subjects");
  std::vector<denoise::LadderRow> rows;
  for (const auto &name : config.ladder)
    rows.push_back(denoise::ladder_row(name));

  DenoiseStudy study;
  study.config = config;
  study.split = denoise::split_subjects(static_cast<int>(subjects.size()), config.train.split, config.train.seed);
  if (study.split.train.empty() || study.split.validation.empty() || study.split.test.empty())
    throw ValidationError("split leaves an empty train, validation or test set");
  for (int t : study.split.test)
    study.test_subjects.push_back(subjects[t].name);

  std::vector<denoise::SubjectRecord> records;
  records.reserve(subjects.size());
  for (const auto &s : subjects)
    records.push_back({s.id, s.registered, s.reference});

  const fitting::SamplingScheme first{fitting::SchemeVariant::First, 0};
  std::vector<DwiStack> test_inputs;
  for (int t : study.split.test)
    test_inputs.push_back(fitting::select_repetitions(subjects[t].registered, first, config.budget));

  LadderResult baseline;
  baseline.name = kBaselineRow;
  for (std::size_t i = 0; i < test_inputs.size(); ++i)
    baseline.errors.push_back(tensor_errors(fitting::fit_stack(test_inputs[i]).tensors, subjects[study.split.test[i]]));
  study.rows.push_back(baseline);

  std::vector<denoise::RowModels> trained;
  for (const auto &row : rows) {
    const denoise::RowModels *reuse = nullptr;
    for (const auto &prev : trained)
      if (denoise::same_members(prev.row, row) && (!reuse || prev.members.size() > reuse->members.size()))
        reuse = &prev;
    if (log)
      log("training " + row.name + " (" + std::to_string(row.members) + " member" + (row.members > 1 ? "s" : "") +
          ")");
    const auto t0 = std::chrono::steady_clock::now();
    denoise::TrainConfig train_cfg = config.train;
    if (log && !train_cfg.progress)
      train_cfg.progress = log;
    denoise::RowModels models = denoise::train_row(row, train_cfg, records, study.split, config.budget, reuse);
    LadderResult r;
    r.name = row.name;
    r.members = row.members;
    r.training_pairs = models.training_pairs;
    r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::vector<const denoise::DenoiserModel *> ptrs;
    for (const auto &m : models.members) {
      ptrs.push_back(&m.model);
      r.member_seeds.push_back(m.model.seed);
    }
    r.member_errors.assign(ptrs.size(), {});
    for (std::size_t i = 0; i < test_inputs.size(); ++i) {
      const PreparedSubject &subj = subjects[study.split.test[i]];
      const denoise::Planes input = denoise::make_input(test_inputs[i], row.input);
      r.errors.push_back(tensor_errors(denoise::ensemble_predict(ptrs, input, subj.reference.mask), subj));
      if (ptrs.size() > 1)
        for (std::size_t k = 0; k < ptrs.size(); ++k)
          r.member_errors[k].push_back(tensor_errors(denoise::predict(*ptrs[k], input, subj.reference.mask), subj));
    }
    if (ptrs.size() == 1)
      r.member_errors[0] = r.errors;
    for (int m = 0; m < kMetricCount; ++m) {
      std::vector<double> d;
      for (std::size_t i = 0; i < r.errors.size(); ++i)
        d.push_back(r.errors[i][m] - baseline.errors[i][m]);
      r.vs_baseline[m] = metrics::wilcoxon_signed_rank(d);
    }
    if (log)
      log(row.name + ": median HA MAAE " + fmt(metrics::quantile(column(r.errors, kHa), 0.5), 2) + " deg (" +
          kBaselineRow + " " + fmt(metrics::quantile(column(baseline.errors, kHa), 0.5), 2) + "), " +
          fmt(r.train_seconds, 1) + " s");

    if (!config.model_dir.empty()) {
      fs::create_directories(config.model_dir);
      for (std::size_t k = 0; k < models.members.size(); ++k) {
        const auto &m = models.members[k];
        nlohmann::json manifest{{"row", row.name},
                                {"member", k},
                                {"budget", config.budget.name},
                                {"train_config", denoise::train_config_to_json(config.train)},
                                {"training_pairs", m.training_pairs},
                                {"best_epoch", m.best_epoch},
                                {"train_loss", m.train_loss},
                                {"validation_loss", m.validation_loss},
                                {"generator_steps", m.generator_steps},
                                {"critic_updates", m.critic_updates},
                                {"max_critic_weight", m.max_critic_weight}};
        std::string file = row.name + "_" + std::to_string(k) + ".dtdn";
        std::replace(file.begin(), file.end(), '+', '-');
        denoise::save_model(config.model_dir / file, m.model, manifest);
      }
    }
    study.rows.push_back(std::move(r));
    trained.push_back(std::move(models));
  }
  return study;
}

void write_denoise_csv(const fs::path &path, const DenoiseStudy &study) {
  auto os = open_csv(path);
  write_row(os, {"row", "budget", "metric", "error", "unit", "median", "q1", "q3", "iqr", "n_test", "median_iqr",
                 "wilcoxon_w", "p_vs_lls", "members", "training_pairs"});
  for (const LadderResult &r : study.rows)
    for (int m = 0; m < kMetricCount; ++m) {
      const auto v = column(r.errors, m);
      const bool base = r.name == kBaselineRow;
      const double q1 = metrics::quantile(v, 0.25), q3 = metrics::quantile(v, 0.75);
      write_row(os, {r.name, study.config.budget.name, kMetricNames[m], m < 2 ? "MAAE" : "MAE", kMetricUnits[m],
                     fmt(metrics::quantile(v, 0.5)), fmt(q1), fmt(q3), fmt(q3 - q1), std::to_string(v.size()),
                     median_iqr_text(v), base ? "" : fmt(r.vs_baseline[m].statistic, 1),
                     base ? "" : fmt(r.vs_baseline[m].p_value, 8), std::to_string(r.members),
                     std::to_string(r.training_pairs)});
    }
}

nlohmann::json denoise_json(const DenoiseStudy &study) {
  nlohmann::json rows = nlohmann::json::array();
  for (const LadderResult &r : study.rows) {
    nlohmann::json members = nlohmann::json::array();
    for (const auto &me : r.member_errors)
      members.push_back(errors_json(me));
    nlohmann::json p = nlohmann::json::object();
    for (int m = 0; m < kMetricCount; ++m)
      p[kMetricNames[m]] = r.vs_baseline[m].p_value;
    rows.push_back({{"row", r.name},
                    {"members", r.members},
                    {"training_pairs", r.training_pairs},
                    {"member_seeds", r.member_seeds},
                    {"per_subject", errors_json(r.errors)},
                    {"member_errors", members},
                    {"p_vs_lls", p}});
  }
  nlohmann::json units = nlohmann::json::object();
  for (int m = 0; m < kMetricCount; ++m)
    units[kMetricNames[m]] = kMetricUnits[m];
  return {{"kind", "denoise_study"},
          {"budget", study.config.budget.name},
          {"train_config", denoise::train_config_to_json(study.config.train)},
          {"split", {{"train", study.split.train}, {"validation", study.split.validation}, {"test", study.split.test}}},
          {"test_subjects", study.test_subjects},
          {"units", units},
          {"rows", rows}};
}

} // namespace dtcmr::harness
