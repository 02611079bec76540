// Command-line driver for the phantom cohort studies.

#include "dtcmr/harness.hpp"
#include "dtcmr/io.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using namespace dtcmr;
namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty())
      out.push_back(item);
  if (out.empty())
    throw ValidationError("empty list '" + s + "'");
  return out;
}

fs::path with_suffix(const fs::path &csv, const std::string &suffix, const std::string &ext) {
  fs::path p = csv;
  p.replace_filename(csv.stem().string() + suffix + ext);
  return p;
}

harness::Log stderr_log(bool quiet) {
  if (quiet)
    return {};
  return [](const std::string &msg) { std::cerr << msg << '\n'; };
}

void write_text(const fs::path &path, const std::string &text) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw ValidationError("cannot write " + path.string());
  os << text;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"DT-CMR phantom studies: repetition sampling and tensor de-noising"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

  // phantom generate
  auto *phantom_cmd = app.add_subcommand("phantom", "Synthetic cohorts");
  phantom_cmd->require_subcommand(1);
  auto *generate = phantom_cmd->add_subcommand("generate", "Write a cohort of simulated subjects");
  std::string gen_config, gen_out;
  int gen_n = 50;
  std::uint64_t gen_seed = 7;
  generate->add_option("--config", gen_config, "Cohort configuration (JSON)")->check(CLI::ExistingFile);
  generate->add_option("--out", gen_out, "Output directory")->required();
  generate->add_option("--n", gen_n, "Number of subjects")->check(CLI::PositiveNumber);
  generate->add_option("--seed", gen_seed, "Cohort seed");

  // study repetitions / study denoise
  auto *study_cmd = app.add_subcommand("study", "Cohort studies");
  study_cmd->require_subcommand(1);
  auto *reps = study_cmd->add_subcommand("repetitions", "Errors of repetition-sampling schemes vs the reference");
  std::string rep_cohort, rep_out, rep_budgets = "1BH,3BH,5BH", rep_schemes = "F,C,L,R,F1";
  std::uint64_t rep_seed = 0;
  int rep_jobs = 1;
  reps->add_option("--cohort", rep_cohort, "Cohort directory")->required();
  reps->add_option("--budgets", rep_budgets, "Comma-separated breath-hold budgets");
  reps->add_option("--schemes", rep_schemes, "Comma-separated schemes (F, C, L, R, F1)");
  reps->add_option("--out", rep_out, "Summary CSV; the KS grid and JSON are written next to it")->required();
  reps->add_option("--seed", rep_seed, "Seed for the random scheme");
  reps->add_option("--jobs", rep_jobs, "Worker threads (0 = all cores)");

  auto *den = study_cmd->add_subcommand("denoise", "Train and evaluate the de-noising ladder");
  std::string den_cohort, den_out, den_ladder = "BL,BL+CN,BL+CN+T2T,BL+CN+multiT2T,WGUF,WGUFx5", den_budget = "1BH",
                                   den_config, den_models;
  std::optional<std::uint64_t> den_seed;
  std::optional<int> den_epochs;
  int den_jobs = 1;
  den->add_option("--cohort", den_cohort, "Cohort directory")->required();
  den->add_option("--ladder", den_ladder, "Comma-separated ladder rows");
  den->add_option("--budget", den_budget, "Breath-hold budget of the network input");
  den->add_option("--out", den_out, "Summary CSV; a JSON manifest is written next to it")->required();
  den->add_option("--train-config", den_config, "Training configuration (JSON)")->check(CLI::ExistingFile);
  den->add_option("--seed", den_seed, "Override the training seed");
  den->add_option("--epochs", den_epochs, "Override the number of epochs");
  den->add_option("--models", den_models, "Directory for model checkpoints");
  den->add_option("--jobs", den_jobs, "Worker threads for cohort preparation (0 = all cores)");

  // report render
  auto *report_cmd = app.add_subcommand("report", "Figures");
  report_cmd->require_subcommand(1);
  auto *render = report_cmd->add_subcommand("render", "Render HA, E2A, MD and FA maps to SVG");
  std::string ren_maps, ren_out, ren_budget;
  render->add_option("--maps", ren_maps, "Map container (.dtcf) or subject directory")->required();
  render->add_option("--out", ren_out, "Output SVG")->required();
  render->add_option("--budget", ren_budget,
                     "For a subject directory: render the First-scheme fit of this budget instead of the reference");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  const harness::Log log = stderr_log(quiet);
  try {
    if (generate->parsed()) {
      phantom::CohortConfig cfg;
      if (!gen_config.empty())
        cfg = phantom::cohort_config_from_json(io::read_json(gen_config));
      harness::generate_cohort(cfg, gen_n, gen_seed, gen_out, log);
    } else if (reps->parsed()) {
      harness::RepetitionStudyConfig cfg;
      for (const auto &b : split_list(rep_budgets))
        cfg.budgets.push_back(fitting::BreathHoldBudget::parse(b));
      for (const auto &s : split_list(rep_schemes))
        cfg.schemes.push_back(fitting::parse_scheme(s));
      cfg.seed = rep_seed;
      cfg.jobs = rep_jobs;
      const auto subjects = harness::load_cohort(rep_cohort, rep_jobs, log);
      const auto study = harness::run_repetition_study(subjects, cfg);
      harness::write_repetition_csv(rep_out, study);
      harness::write_ks_csv(with_suffix(rep_out, "_ks", ".csv"), study);
      io::write_json(with_suffix(rep_out, "", ".json"), harness::repetition_json(study));
    } else if (den->parsed()) {
      harness::DenoiseStudyConfig cfg;
      cfg.ladder = split_list(den_ladder);
      cfg.budget = fitting::BreathHoldBudget::parse(den_budget);
      if (!den_config.empty())
        cfg.train = denoise::train_config_from_json(io::read_json(den_config));
      if (den_seed)
        cfg.train.seed = *den_seed;
      if (den_epochs)
        cfg.train.epochs = *den_epochs;
      cfg.model_dir = den_models;
      const auto subjects = harness::load_cohort(den_cohort, den_jobs, log);
      const auto study = harness::run_denoise_study(subjects, cfg, log);
      harness::write_denoise_csv(den_out, study);
      io::write_json(with_suffix(den_out, "", ".json"), harness::denoise_json(study));
    } else if (render->parsed()) {
      const fs::path src = ren_maps;
      MapSet maps;
      std::string what;
      if (fs::is_directory(src) && fs::exists(src / "maps.dtcf") && ren_budget.empty()) {
        maps = io::load_map_set(src / "maps.dtcf");
        what = "maps.dtcf";
      } else if (fs::is_directory(src)) {
        const auto subj = harness::prepare_subject(0, src.filename().string(), io::load_dwi_stack(src / "dwi.dtcf"));
        if (ren_budget.empty()) {
          maps = subj.reference_maps;
          what = "all-repetition LLS reference";
        } else {
          const auto budget = fitting::BreathHoldBudget::parse(ren_budget);
          const auto sub = fitting::select_repetitions(subj.registered, {fitting::SchemeVariant::First, 0}, budget);
          maps = maps::compute_maps(fitting::fit_stack(sub).tensors, subj.basis);
          what = "LLS " + budget.name + " First";
        }
      } else {
        maps = io::load_map_set(src);
        what = "map container";
      }
      const std::string footer = "dtcmr " DTCMR_VERSION " | " + src.string() + " | " + what +
                                 " | HA, E2A -90..90 deg (cyclic); MD 0..2.5e-3 mm^2/s; FA 0..1";
      write_text(ren_out, harness::render_maps_svg(maps, footer));
    }
  } catch (const ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError &e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
