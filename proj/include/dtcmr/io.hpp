#pragma once

// Flat binary container shared by every stage.
//
// Layout (little-endian):
//   "DTCF"            4 bytes magic
//   version           u16 (currently 1)
//   rows, cols        u32, u32
//   channels          u32
//   planes            channels * rows * cols float64, channel-major, row-major
//
// Each container is accompanied by a JSON sidecar (same stem, ".json") that
// names the channels and carries protocol metadata.

#include "dtcmr/core.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace dtcmr::io {

inline constexpr std::uint16_t kContainerVersion = 1;

struct Container {
  ImageSize size;
  std::vector<std::vector<double>> planes;
};

void write_container(const std::filesystem::path &path, const Container &c);
Container read_container(const std::filesystem::path &path);

std::filesystem::path sidecar_path(const std::filesystem::path &container);
void write_json(const std::filesystem::path &path, const nlohmann::json &j);
nlohmann::json read_json(const std::filesystem::path &path);

nlohmann::json protocol_to_json(const AcquisitionProtocol &p);
AcquisitionProtocol protocol_from_json(const nlohmann::json &j);

void save_tensor_field(const std::filesystem::path &path, const TensorField &t);
TensorField load_tensor_field(const std::filesystem::path &path);

void save_dwi_stack(const std::filesystem::path &path, const DwiStack &s);
DwiStack load_dwi_stack(const std::filesystem::path &path);

void save_map_set(const std::filesystem::path &path, const MapSet &m);
MapSet load_map_set(const std::filesystem::path &path);

} // namespace dtcmr::io
