#include "dtcmr/denoise.hpp"
#include "dtcmr/io.hpp"

#include <cstring>
#include <fstream>

namespace dtcmr::denoise {
namespace {

constexpr char kMagic[4] = {'D', 'T', 'D', 'N'};
constexpr std::uint16_t kVersion = 1;

template <typename T> void put(std::ostream &os, T v) { os.write(reinterpret_cast<const char *>(&v), sizeof(T)); }

template <typename T> T get(std::istream &is) {
  T v{};
  is.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!is)
    throw ValidationError("truncated checkpoint");
  return v;
}

} // namespace

void save_model(const std::filesystem::path &path, const DenoiserModel &model, const nlohmann::json &manifest) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw ValidationError("cannot write " + path.string());
  const nn::UNetSpec &spec = model.network.spec();
  os.write(kMagic, 4);
  put<std::uint16_t>(os, kVersion);
  put<std::int32_t>(os, spec.levels);
  put<std::int32_t>(os, spec.width);
  put<std::int32_t>(os, spec.in_channels);
  put<std::int32_t>(os, spec.out_channels);
  put<std::uint8_t>(os, spec.residual ? 1 : 0);
  put<double>(os, spec.slope);
  put<std::uint8_t>(os, model.input_kind == InputKind::Dwi ? 1 : 0);
  put<std::uint8_t>(os, model.norm.mode == NormMode::Fixed ? 1 : 0);
  for (double v : model.norm.mean)
    put<double>(os, v);
  for (double v : model.norm.std)
    put<double>(os, v);
  put<double>(os, model.norm.fixed_scale);
  put<double>(os, model.norm.input_scale);
  put<std::uint64_t>(os, model.seed);
  put<std::uint64_t>(os, model.config_hash);
  const auto params = model.network.params();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const nn::Param *p : params) {
    put<std::uint64_t>(os, p->value.size());
    os.write(reinterpret_cast<const char *>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os)
    throw ValidationError("failed writing " + path.string());
  nlohmann::json m = manifest;
  m["kind"] = "denoiser";
  m["norm"] = norm_to_json(model.norm);
  m["input"] = model.input_kind == InputKind::Dwi ? "dwi" : "tensor";
  m["seed"] = model.seed;
  m["config_hash"] = model.config_hash;
  m["unet"] = {{"levels", spec.levels}, {"width", spec.width},       {"in_channels", spec.in_channels},
               {"out_channels", spec.out_channels}, {"residual", spec.residual}, {"slope", spec.slope}};
  io::write_json(io::sidecar_path(path), m);
}

DenoiserModel load_model(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw ValidationError("cannot read " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("bad checkpoint magic in " + path.string());
  const auto version = get<std::uint16_t>(is);
  if (version != kVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  nn::UNetSpec spec;
  spec.levels = get<std::int32_t>(is);
  spec.width = get<std::int32_t>(is);
  spec.in_channels = get<std::int32_t>(is);
  spec.out_channels = get<std::int32_t>(is);
  spec.residual = get<std::uint8_t>(is) != 0;
  spec.slope = get<double>(is);
  if (spec.levels < 1 || spec.levels > 8 || spec.width < 1 || spec.in_channels < 1 || spec.out_channels < 1)
    throw ValidationError("implausible network shape in " + path.string());
  const InputKind kind = get<std::uint8_t>(is) != 0 ? InputKind::Dwi : InputKind::Tensor;
  NormStats norm;
  norm.mode = get<std::uint8_t>(is) != 0 ? NormMode::Fixed : NormMode::ZScore;
  for (double &v : norm.mean)
    v = get<double>(is);
  for (double &v : norm.std)
    v = get<double>(is);
  norm.fixed_scale = get<double>(is);
  norm.input_scale = get<double>(is);
  norm.validate();
  DenoiserModel model{nn::UNet(spec, 0), norm, kind, 0, 0};
  model.seed = get<std::uint64_t>(is);
  model.config_hash = get<std::uint64_t>(is);
  const auto params = model.network.params();
  if (get<std::uint32_t>(is) != params.size())
    throw ValidationError("checkpoint parameter count mismatch");
  for (nn::Param *p : params) {
    if (get<std::uint64_t>(is) != p->value.size())
      throw ValidationError("checkpoint tensor size mismatch for " + p->name);
    is.read(reinterpret_cast<char *>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!is)
      throw ValidationError("truncated checkpoint " + path.string());
  }
  return model;
}

} // namespace dtcmr::denoise
