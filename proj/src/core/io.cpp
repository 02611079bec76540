#include "dtcmr/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dtcmr::io {
namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

constexpr char kMagic[4] = {'D', 'T', 'C', 'F'};

template <typename T> void put(std::ostream &os, T v) { os.write(reinterpret_cast<const char *>(&v), sizeof(T)); }

template <typename T> T get(std::istream &is) {
  T v{};
  is.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!is)
    throw ValidationError("truncated container");
  return v;
}

std::vector<double> mask_plane(const Mask &m) { return {m.data.begin(), m.data.end()}; }

Mask plane_mask(ImageSize size, const std::vector<double> &plane) {
  Mask m(size);
  for (std::size_t i = 0; i < plane.size(); ++i)
    m.data[i] = plane[i] != 0.0 ? 1 : 0;
  return m;
}

Image plane_image(ImageSize size, std::vector<double> plane) {
  Image img;
  img.size = size;
  img.data = std::move(plane);
  return img;
}

const char *const kTensorNames[kTensorChannels] = {"Dxx", "Dyy", "Dzz", "Dxy", "Dxz", "Dyz"};

void expect_kind(const nlohmann::json &j, const char *kind) {
  if (j.value("kind", "") != kind)
    throw ValidationError(std::string("sidecar is not a ") + kind);
}

} // namespace

void write_container(const std::filesystem::path &path, const Container &c) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw ValidationError("cannot write " + path.string());
  os.write(kMagic, 4);
  put<std::uint16_t>(os, kContainerVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.size.rows));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.size.cols));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.planes.size()));
  for (const auto &plane : c.planes) {
    if (plane.size() != c.size.pixels())
      throw ValidationError("container plane size mismatch");
    os.write(reinterpret_cast<const char *>(plane.data()), static_cast<std::streamsize>(plane.size() * sizeof(double)));
  }
}

Container read_container(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw ValidationError("cannot read " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("bad container magic in " + path.string());
  const auto version = get<std::uint16_t>(is);
  if (version != kContainerVersion)
    throw ValidationError("unsupported container version " + std::to_string(version));
  Container c;
  c.size.rows = static_cast<int>(get<std::uint32_t>(is));
  c.size.cols = static_cast<int>(get<std::uint32_t>(is));
  const auto channels = get<std::uint32_t>(is);
  c.planes.resize(channels);
  for (auto &plane : c.planes) {
    plane.resize(c.size.pixels());
    is.read(reinterpret_cast<char *>(plane.data()), static_cast<std::streamsize>(plane.size() * sizeof(double)));
    if (!is)
      throw ValidationError("truncated container " + path.string());
  }
  return c;
}

std::filesystem::path sidecar_path(const std::filesystem::path &container) {
  auto p = container;
  p.replace_extension(".json");
  return p;
}

void write_json(const std::filesystem::path &path, const nlohmann::json &j) {
  std::ofstream os(path);
  if (!os)
    throw ValidationError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is)
    throw ValidationError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

nlohmann::json protocol_to_json(const AcquisitionProtocol &p) {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto &[b, n] : p.reps_per_weighting)
    reps.push_back({{"b", b}, {"reps", n}});
  return {{"b_values", p.b_values},
          {"directions", p.directions},
          {"reps_per_weighting", reps},
          {"image_size", {p.image_size.rows, p.image_size.cols}},
          {"pixel_spacing_mm", p.pixel_spacing_mm}};
}

AcquisitionProtocol protocol_from_json(const nlohmann::json &j) {
  AcquisitionProtocol p = AcquisitionProtocol::standard();
  try {
    if (j.contains("b_values"))
      p.b_values = j.at("b_values").get<std::vector<double>>();
    if (j.contains("directions")) {
      p.directions = j.at("directions").get<std::vector<Vec3>>();
    }
    if (j.contains("reps_per_weighting")) {
      p.reps_per_weighting.clear();
      for (const auto &r : j.at("reps_per_weighting"))
        p.reps_per_weighting[r.at("b").get<double>()] = r.at("reps").get<int>();
    }
    if (j.contains("image_size")) {
      p.image_size.rows = j.at("image_size").at(0).get<int>();
      p.image_size.cols = j.at("image_size").at(1).get<int>();
    }
    p.pixel_spacing_mm = j.value("pixel_spacing_mm", p.pixel_spacing_mm);
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("bad protocol: ") + e.what());
  }
  p.validate();
  return p;
}

void save_tensor_field(const std::filesystem::path &path, const TensorField &t) {
  Container c;
  c.size = t.size;
  for (int ch = 0; ch < kTensorChannels; ++ch)
    c.planes.emplace_back(t.channel(ch), t.channel(ch) + t.size.pixels());
  c.planes.push_back(mask_plane(t.mask));
  write_container(path, c);
  nlohmann::json names(kTensorNames);
  names.push_back("mask");
  write_json(sidecar_path(path), {{"kind", "tensor_field"}, {"channels", names}, {"units", "mm^2/s"}});
}

TensorField load_tensor_field(const std::filesystem::path &path) {
  expect_kind(read_json(sidecar_path(path)), "tensor_field");
  Container c = read_container(path);
  if (c.planes.size() != kTensorChannels + 1)
    throw ValidationError("tensor container must hold 7 planes");
  TensorField t(c.size, plane_mask(c.size, c.planes.back()));
  for (int ch = 0; ch < kTensorChannels; ++ch)
    std::copy(c.planes[ch].begin(), c.planes[ch].end(), t.channel(ch));
  return t;
}

void save_dwi_stack(const std::filesystem::path &path, const DwiStack &s) {
  Container c;
  c.size = s.protocol.image_size;
  nlohmann::json keys = nlohmann::json::array();
  for (const auto &f : s.frames) {
    c.planes.push_back(f.image.data);
    keys.push_back({{"b", f.key.b}, {"direction", f.key.direction}, {"repetition", f.key.repetition}});
  }
  c.planes.push_back(mask_plane(s.mask));
  write_container(path, c);
  nlohmann::json shifts = nlohmann::json::array();
  for (const auto &sh : s.registration)
    shifts.push_back({{"b", sh.key.b},
                      {"direction", sh.key.direction},
                      {"repetition", sh.key.repetition},
                      {"dy", sh.dy},
                      {"dx", sh.dx}});
  write_json(sidecar_path(path), {{"kind", "dwi_stack"},
                                  {"protocol", protocol_to_json(s.protocol)},
                                  {"frames", keys},
                                  {"mask_plane", s.frames.size()},
                                  {"registration", shifts}});
}

DwiStack load_dwi_stack(const std::filesystem::path &path) {
  const auto meta = read_json(sidecar_path(path));
  expect_kind(meta, "dwi_stack");
  Container c = read_container(path);
  DwiStack s;
  s.protocol = protocol_from_json(meta.at("protocol"));
  const auto &keys = meta.at("frames");
  if (c.planes.size() != keys.size() + 1)
    throw ValidationError("dwi container plane count does not match sidecar");
  for (std::size_t i = 0; i < keys.size(); ++i) {
    Frame f;
    f.key = {keys[i].at("b").get<double>(), keys[i].at("direction").get<int>(), keys[i].at("repetition").get<int>()};
    f.image = plane_image(c.size, std::move(c.planes[i]));
    s.frames.push_back(std::move(f));
  }
  s.mask = plane_mask(c.size, c.planes.back());
  for (const auto &sh : meta.value("registration", nlohmann::json::array()))
    s.registration.push_back({{sh.at("b").get<double>(), sh.at("direction").get<int>(), sh.at("repetition").get<int>()},
                              sh.at("dy").get<double>(),
                              sh.at("dx").get<double>()});
  s.validate();
  return s;
}

void save_map_set(const std::filesystem::path &path, const MapSet &m) {
  Container c;
  c.size = m.mask.size;
  c.planes = {m.md.data, m.fa.data, m.ha.data, m.e2a.data, mask_plane(m.mask),
              std::vector<double>(m.flags.begin(), m.flags.end())};
  write_container(path, c);
  write_json(sidecar_path(path), {{"kind", "map_set"},
                                  {"channels", {"MD", "FA", "HA", "E2A", "mask", "flags"}},
                                  {"units", {"mm^2/s", "1", "deg", "deg", "", ""}}});
}

MapSet load_map_set(const std::filesystem::path &path) {
  expect_kind(read_json(sidecar_path(path)), "map_set");
  Container c = read_container(path);
  if (c.planes.size() != 6)
    throw ValidationError("map container must hold 6 planes");
  MapSet m;
  m.md = plane_image(c.size, c.planes[0]);
  m.fa = plane_image(c.size, c.planes[1]);
  m.ha = plane_image(c.size, c.planes[2]);
  m.e2a = plane_image(c.size, c.planes[3]);
  m.mask = plane_mask(c.size, c.planes[4]);
  m.flags.assign(c.planes[5].begin(), c.planes[5].end());
  return m;
}

} // namespace dtcmr::io
