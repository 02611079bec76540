#include "dtcmr/harness.hpp"
#include "dtcmr/io.hpp"
#include "dtcmr/registration.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <cstdio>

namespace dtcmr::harness {

namespace {

std::string subject_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "subject_%03d", i);
  return buf;
}

} // namespace

void generate_cohort(const phantom::CohortConfig &config, int n, std::uint64_t seed, const fs::path &out,
                     const Log &log) {
  if (n < 1)
    throw ValidationError("cohort size must be positive");
  config.base.validate();
  config.noise.validate();
  config.protocol.validate();
  fs::create_directories(out);
  io::write_json(out / "cohort.json",
                 {{"kind", "cohort"}, {"subjects", n}, {"seed", seed}, {"config", phantom::cohort_config_to_json(config)}});
  for (int i = 0; i < n; ++i) {
    const phantom::Subject s = phantom::make_subject(config, seed, i);
    const fs::path dir = out / subject_name(i);
    fs::create_directories(dir);
    io::save_dwi_stack(dir / "dwi.dtcf", s.dwi);
    io::save_tensor_field(dir / "truth.dtcf", s.truth.tensors);
    io::write_json(dir / "manifest.json", {{"kind", "subject"},
                                           {"index", i},
                                           {"cohort_seed", seed},
                                           {"phantom", phantom::config_to_json(s.config)},
                                           {"noise", phantom::noise_to_json(s.noise)}});
    if (log)
      log("generated " + dir.string());
  }
}

std::vector<fs::path> list_subjects(const fs::path &cohort) {
  if (!fs::is_directory(cohort))
    throw ValidationError("cohort directory not found: " + cohort.string());
  std::vector<fs::path> out;
  for (const auto &e : fs::directory_iterator(cohort))
    if (e.is_directory() && fs::exists(e.path() / "dwi.dtcf"))
      out.push_back(e.path());
  if (out.empty())
    throw ValidationError("no subjects in " + cohort.string());
  std::sort(out.begin(), out.end());
  return out;
}

PreparedSubject prepare_subject(int id, std::string name, const DwiStack &raw) {
  PreparedSubject s;
  s.id = id;
  s.name = std::move(name);
  s.registered = registration::register_stack(raw);
  s.reference = fitting::fit_stack(s.registered).tensors;
  s.basis = maps::local_basis(s.reference.mask);
  s.reference_maps = maps::compute_maps(s.reference, s.basis);
  return s;
}

std::vector<PreparedSubject> load_cohort(const fs::path &cohort, int jobs, const Log &log) {
  const auto dirs = list_subjects(cohort);
  std::vector<PreparedSubject> out(dirs.size());
  detail::parallel_for(dirs.size(), jobs, [&](std::size_t i) {
    out[i] = prepare_subject(static_cast<int>(i), dirs[i].filename().string(), io::load_dwi_stack(dirs[i] / "dwi.dtcf"));
  });
  if (log)
    log("prepared " + std::to_string(out.size()) + " subjects from " + cohort.string());
  return out;
}

MapErrors map_errors(const MapSet &test, const PreparedSubject &subject) {
  const MapSet &ref = subject.reference_maps;
  const Mask shared = mask_and(test.mask, ref.mask);
  const Mask angles = mask_and(maps::angle_mask(test), maps::angle_mask(ref));
  if (shared.count() == 0 || angles.count() == 0)
    throw NumericalError("no shared voxels between test and reference maps for " + subject.name);
  MapErrors e;
  e[kHa] = metrics::maae(test.ha, ref.ha, angles);
  e[kE2a] = metrics::maae(test.e2a, ref.e2a, angles);
  e[kMd] = metrics::mae(test.md, ref.md, shared) * kMetricScale[kMd];
  e[kFa] = metrics::mae(test.fa, ref.fa, shared) * kMetricScale[kFa];
  return e;
}

MapErrors tensor_errors(const TensorField &test, const PreparedSubject &subject) {
  return map_errors(maps::compute_maps(test, subject.basis), subject);
}

} // namespace dtcmr::harness
