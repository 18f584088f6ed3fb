#pragma once

#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mv3d/error.hpp"
#include "mv3d/geom3d.hpp"
#include "mv3d/kitti_io.hpp"

namespace mv3d {

/// A scored oriented box. `index` is the source anchor for proposals and the
/// running detection number for detections.
struct ScoredBox {
  std::size_t index = 0;
  double score = 0.0;
  Box3D box;

  friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

inline constexpr const char* kBoxCsvHeader = "index,score,cx,cy,cz,l,w,h,yaw";

inline void write_box_csv(const std::filesystem::path& path, std::span<const ScoredBox> boxes) {
  std::string out = std::string(kBoxCsvHeader) + "\n";
  char buf[512];
  for (const auto& b : boxes) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", b.index,
                  b.score, b.box.cx, b.box.cy, b.box.cz, b.box.l, b.box.w, b.box.h, b.box.yaw);
    out += buf;
  }
  detail::write_file_bytes(path, out);
}

inline std::vector<ScoredBox> read_box_csv(const std::filesystem::path& path) {
  const auto lines = detail::read_lines(path);
  std::vector<ScoredBox> out;
  bool header_seen = false;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(ln + 1);
    if (!header_seen) {
      if (lines[ln] != kBoxCsvHeader) fail(ErrorKind::format, where + ": expected header '" + kBoxCsvHeader + "'");
      header_seen = true;
      continue;
    }
    std::vector<std::string_view> fields;
    std::string_view rest = lines[ln];
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 9) fail(ErrorKind::format, where + ": expected 9 fields");
    double v[9];
    for (std::size_t i = 0; i < 9; ++i) {
      const auto d = detail::parse_double(fields[i]);
      if (!d) fail(ErrorKind::format, where + ": bad number '" + std::string(fields[i]) + "'");
      v[i] = *d;
    }
    if (v[0] < 0 || v[0] != static_cast<double>(static_cast<std::size_t>(v[0]))) {
      fail(ErrorKind::format, where + ": index must be a non-negative integer");
    }
    ScoredBox b{static_cast<std::size_t>(v[0]), v[1], {v[2], v[3], v[4], v[5], v[6], v[7], v[8]}};
    if (!std::isfinite(b.score) || !is_valid(b.box)) fail(ErrorKind::format, where + ": invalid box or score");
    out.push_back(b);
  }
  if (!header_seen) fail(ErrorKind::format, path.string() + ": missing header");
  return out;
}

}  // namespace mv3d
