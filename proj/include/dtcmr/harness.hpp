#pragma once

#include "dtcmr/core.hpp"
#include "dtcmr/denoise.hpp"
#include "dtcmr/fitting.hpp"
#include "dtcmr/maps.hpp"
#include "dtcmr/metrics.hpp"
#include "dtcmr/phantom.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dtcmr::harness {

namespace fs = std::filesystem;

/// Progress sink; the CLI prints to stderr, tests pass nothing.
using Log = std::function<void(const std::string &)>;

// ---- cohorts ---------------------------------------------------------------

/// Writes cohort.json plus subject_NNN/{dwi,truth}.dtcf (with JSON sidecars)
/// and subject_NNN/manifest.json for subjects 0..n-1.
void generate_cohort(const phantom::CohortConfig &config, int n, std::uint64_t seed, const fs::path &out,
                     const Log &log = {});

/// Subject directories of a cohort in name order; throws when none exist.
std::vector<fs::path> list_subjects(const fs::path &cohort);

/// A subject after registration, with its all-repetition reference fit.
struct PreparedSubject {
  int id = 0;
  std::string name;
  DwiStack registered;
  TensorField reference;
  maps::LocalBasis basis;
  MapSet reference_maps;
};

PreparedSubject prepare_subject(int id, std::string name, const DwiStack &raw);

/// Loads and prepares every subject; `jobs` worker threads (0 = hardware).
std::vector<PreparedSubject> load_cohort(const fs::path &cohort, int jobs = 1, const Log &log = {});

// ---- errors ----------------------------------------------------------------

enum Metric { kHa = 0, kE2a, kMd, kFa };
inline constexpr int kMetricCount = 4;
inline const std::array<const char *, kMetricCount> kMetricNames{"HA", "E2A", "MD", "FA"};
/// Reported units: MAAE in degrees, MD MAE x1e5 mm^2/s, FA MAE x1e2.
inline const std::array<const char *, kMetricCount> kMetricUnits{"deg", "deg", "1e-5 mm^2/s", "1e-2"};
inline constexpr std::array<double, kMetricCount> kMetricScale{1.0, 1.0, metrics::kMdReportScale,
                                                               metrics::kFaReportScale};

using MapErrors = std::array<double, kMetricCount>;

/// HA/E2A MAAE over voxels with defined angles in both, MD/FA MAE over the
/// shared mask, all against the subject's reference maps and in report units.
MapErrors map_errors(const MapSet &test, const PreparedSubject &subject);
MapErrors tensor_errors(const TensorField &test, const PreparedSubject &subject);

// ---- repetition study ------------------------------------------------------

struct RepetitionStudyConfig {
  std::vector<fitting::BreathHoldBudget> budgets;
  std::vector<fitting::SchemeVariant> schemes;
  std::uint64_t seed = 0; // for the Random scheme
  int jobs = 1;
};

struct SummaryRow {
  std::string budget, scheme, metric;
  double median = 0.0, q1 = 0.0, q3 = 0.0;
  std::size_t n = 0;
};

struct KsCell {
  std::string budget, metric, scheme_a, scheme_b;
  metrics::TestResult test;
};

struct RepetitionStudy {
  RepetitionStudyConfig config;
  std::vector<std::string> subjects;
  /// errors[budget][scheme][subject]
  std::vector<std::vector<std::vector<MapErrors>>> errors;
  std::vector<SummaryRow> summary;
  std::vector<KsCell> ks;

  const std::vector<MapErrors> &errors_for(const std::string &budget, fitting::SchemeVariant scheme) const;
};

/// Random-scheme seed for one subject.
std::uint64_t subject_seed(std::uint64_t study_seed, int subject_id);

RepetitionStudy run_repetition_study(const std::vector<PreparedSubject> &subjects,
                                     const RepetitionStudyConfig &config);

void write_repetition_csv(const fs::path &path, const RepetitionStudy &study);
void write_ks_csv(const fs::path &path, const RepetitionStudy &study);
nlohmann::json repetition_json(const RepetitionStudy &study);

// ---- de-noising study ------------------------------------------------------

struct DenoiseStudyConfig {
  std::vector<std::string> ladder;
  fitting::BreathHoldBudget budget = fitting::BreathHoldBudget::one();
  denoise::TrainConfig train;
  fs::path model_dir; // checkpoints are written here when non-empty
};

struct LadderResult {
  std::string name;
  int members = 0;
  std::size_t training_pairs = 0;
  std::vector<MapErrors> errors; // per test subject
  /// member_errors[k][subject]; empty for the least-squares row.
  std::vector<std::vector<MapErrors>> member_errors;
  std::array<metrics::TestResult, kMetricCount> vs_baseline{};
  double train_seconds = 0.0;
  std::vector<std::uint64_t> member_seeds;
};

struct DenoiseStudy {
  DenoiseStudyConfig config;
  denoise::Split split;
  std::vector<std::string> test_subjects;
  std::vector<LadderResult> rows; // rows[0] is the least-squares baseline
};

inline constexpr const char *kBaselineRow = "LLS";

DenoiseStudy run_denoise_study(const std::vector<PreparedSubject> &subjects, const DenoiseStudyConfig &config,
                               const Log &log = {});

void write_denoise_csv(const fs::path &path, const DenoiseStudy &study);
nlohmann::json denoise_json(const DenoiseStudy &study);

// ---- figures ---------------------------------------------------------------

/// RGB for a value on the map's fixed scale (HA/E2A cyclic -90..90,
/// MD 0..2.5e-3 mm^2/s, FA 0..1).
std::array<int, 3> map_colour(int metric, double value);

/// Four panels (HA, E2A, MD, FA) with colour bars and a footer line.
std::string render_maps_svg(const MapSet &maps, const std::string &footer);

// ---- formatting ------------------------------------------------------------

/// Fixed-precision number for CSV output ("nan" for NaN).
std::string fmt(double v, int precision = 6);

/// RFC 4180 quoting when the field needs it.
std::string csv_field(const std::string &s);

} // namespace dtcmr::harness
