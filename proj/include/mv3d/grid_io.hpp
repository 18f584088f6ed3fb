#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mv3d/error.hpp"
#include "mv3d/kitti_io.hpp"
#include "mv3d/view_encode.hpp"

// Flat little-endian binary payload (<base>.bin) with a JSON sidecar header
// (<base>.json). Grids use f32; parameter blobs use f64.

namespace mv3d {

using Json = nlohmann::ordered_json;

inline std::filesystem::path with_suffix(std::filesystem::path base, const char* suffix) {
  base += suffix;
  return base;
}

template <typename T>
  requires std::is_same_v<T, float> || std::is_same_v<T, double>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename T>
void write_flat_binary(const std::filesystem::path& base, std::span<const T> values, Json header) {
  std::string bytes;
  bytes.reserve(values.size() * sizeof(T));
  for (const T v : values) detail::store_le(v, bytes);
  header["dtype"] = dtype_name<T>();
  header["count"] = values.size();
  detail::write_file_bytes(with_suffix(base, ".bin"), bytes);
  detail::write_file_bytes(with_suffix(base, ".json"), header.dump(2) + "\n");
}

template <typename T>
std::vector<T> read_flat_binary(const std::filesystem::path& base, Json* header_out = nullptr) {
  Json header;
  try {
    header = Json::parse(detail::read_file_bytes(with_suffix(base, ".json")));
  } catch (const Json::exception& e) {
    fail(ErrorKind::format, with_suffix(base, ".json").string() + ": " + e.what());
  }
  if (header.value("dtype", std::string{}) != dtype_name<T>()) {
    fail(ErrorKind::format, base.string() + ": expected dtype " + dtype_name<T>());
  }
  const std::string bytes = detail::read_file_bytes(with_suffix(base, ".bin"));
  const auto count = header.value("count", std::size_t{0});
  if (bytes.size() != count * sizeof(T)) {
    fail(ErrorKind::format, base.string() + ": payload size does not match header count");
  }
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = detail::load_le<T>(bytes.data() + i * sizeof(T));
  if (header_out) *header_out = std::move(header);
  return out;
}

inline void write_grid(const std::filesystem::path& base, const Grid& grid, Json header = Json::object()) {
  header["format"] = "mv3d-grid";
  header["dims"] = {grid.channels, grid.rows, grid.cols};
  write_flat_binary<float>(base, grid.data, std::move(header));
}

inline Grid read_grid(const std::filesystem::path& base, Json* header_out = nullptr) {
  Json header;
  auto data = read_flat_binary<float>(base, &header);
  const auto dims = header.at("dims").get<std::vector<std::size_t>>();
  if (dims.size() != 3 || dims[0] * dims[1] * dims[2] != data.size()) {
    fail(ErrorKind::format, base.string() + ": dims do not match payload");
  }
  Grid g;
  g.channels = dims[0];
  g.rows = dims[1];
  g.cols = dims[2];
  g.data = std::move(data);
  if (header_out) *header_out = std::move(header);
  return g;
}

inline Json bev_header(const BevConfig& cfg) {
  Json channels = Json::array();
  for (int m = 0; m < cfg.slices; ++m) channels.push_back("height_" + std::to_string(m));
  channels.push_back("intensity");
  channels.push_back("density");
  return {{"view", "bev"},
          {"channels", channels},
          {"x_range", {cfg.x_min, cfg.x_max}},
          {"y_range", {cfg.y_min, cfg.y_max}},
          {"z_range", {cfg.z_min, cfg.z_max}},
          {"resolution", cfg.resolution}};
}

inline Json front_view_header(const FrontViewConfig& cfg, std::size_t dropped) {
  return {{"view", "front"},
          {"channels", {"height", "distance", "intensity"}},
          {"dtheta", cfg.dtheta},
          {"dphi", cfg.dphi},
          {"row_offset", cfg.row_offset},
          {"col_offset", cfg.col_offset},
          {"dropped_points", dropped}};
}

}  // namespace mv3d
