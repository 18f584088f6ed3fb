#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mv3d/error.hpp"
#include "mv3d/geom3d.hpp"

namespace mv3d {

// ---------------------------------------------------------------------------
// Point clouds

struct Point {
  float x = 0.0f, y = 0.0f, z = 0.0f;
  float intensity = 0.0f;  // reflectance in [0, 1]

  friend bool operator==(const Point&, const Point&) = default;
};

struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

namespace detail {

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::io, "read failed for " + path.string());
  return std::move(ss).str();
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

template <typename T>
T load_le(const char* src) {
  T value;
  std::memcpy(&value, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bits.begin(), bits.end());
    value = std::bit_cast<T>(bits);
  }
  return value;
}

template <typename T>
void store_le(T value, std::string& dst) {
  auto bits = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  dst.append(bits.data(), bits.size());
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view tok) {
  double value = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) return std::nullopt;
  return value;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  std::vector<std::string> lines;
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  return lines;
}

inline std::string format_double(double v, const char* fmt = "%.12e") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace detail

/// Flat little-endian float32 quads (x, y, z, intensity), no header.
inline PointCloud read_velodyne(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() % 16 != 0) {
    fail(ErrorKind::format, path.string() + ": byte length " + std::to_string(bytes.size()) +
                                " is not a multiple of 16");
  }
  PointCloud pc;
  pc.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const char* rec = bytes.data() + 16 * i;
    pc.points[i] = {detail::load_le<float>(rec), detail::load_le<float>(rec + 4),
                    detail::load_le<float>(rec + 8), detail::load_le<float>(rec + 12)};
  }
  return pc;
}

inline void write_velodyne(const std::filesystem::path& path, const PointCloud& pc) {
  std::string bytes;
  bytes.reserve(pc.size() * 16);
  for (const Point& p : pc.points) {
    detail::store_le(p.x, bytes);
    detail::store_le(p.y, bytes);
    detail::store_le(p.z, bytes);
    detail::store_le(p.intensity, bytes);
  }
  detail::write_file_bytes(path, bytes);
}

// ---------------------------------------------------------------------------
// Calibration

using Matrix34 = Eigen::Matrix<double, 3, 4>;

struct Calibration {
  Matrix34 P = Matrix34::Zero();            // camera projection
  Eigen::Matrix3d R_rect = Eigen::Matrix3d::Identity();
  Matrix34 T_velo_to_cam = Matrix34::Zero();  // [R | t]

  static Calibration identity() {
    Calibration c;
    c.P.leftCols<3>().setIdentity();
    c.T_velo_to_cam.leftCols<3>().setIdentity();
    return c;
  }

  /// A KITTI-like rig: camera axes x right, y down, z forward; the sensor
  /// sits 0.27 m behind and 0.08 m above the rectified left color camera.
  static Calibration kitti_like() {
    Calibration c;
    c.P << 721.5377, 0.0, 609.5593, 44.85728,  //
        0.0, 721.5377, 172.854, 0.2163791,     //
        0.0, 0.0, 1.0, 0.002745884;
    c.R_rect.setIdentity();
    c.T_velo_to_cam << 0.0, -1.0, 0.0, 0.0,  //
        0.0, 0.0, -1.0, -0.08,               //
        1.0, 0.0, 0.0, -0.27;
    return c;
  }

  Eigen::Matrix3d rotation() const { return T_velo_to_cam.leftCols<3>(); }
  Eigen::Vector3d translation() const { return T_velo_to_cam.col(3); }

  /// Throws when R_rect or the velo-to-camera rotation is not invertible.
  void check_invertible() const {
    if (!(std::abs(R_rect.determinant()) > 1e-9) || !(std::abs(rotation().determinant()) > 1e-9)) {
      fail(ErrorKind::degenerate, "singular calibration");
    }
  }

  Eigen::Vector3d velo_to_rect(const Eigen::Vector3d& p) const {
    return R_rect * (rotation() * p + translation());
  }

  Eigen::Vector3d rect_to_velo(const Eigen::Vector3d& p) const {
    check_invertible();
    const Eigen::Vector3d ref = R_rect.partialPivLu().solve(p);
    return rotation().partialPivLu().solve(ref - translation());
  }

  friend bool operator==(const Calibration& a, const Calibration& b) {
    return a.P == b.P && a.R_rect == b.R_rect && a.T_velo_to_cam == b.T_velo_to_cam;
  }
};

/// Reads a KITTI object calib file. `camera_key` selects the projection
/// matrix (P2 is the left color camera).
inline Calibration read_calib(const std::filesystem::path& path, std::string_view camera_key = "P2") {
  const auto lines = detail::read_lines(path);
  std::optional<std::vector<double>> p, r, t;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto toks = detail::split_ws(lines[ln]);
    if (toks.empty()) continue;
    std::string_view key = toks[0];
    if (key.empty() || key.back() != ':') {
      fail(ErrorKind::format, path.string() + ":" + std::to_string(ln + 1) + ": expected 'KEY: values'");
    }
    key.remove_suffix(1);
    std::optional<std::vector<double>>* slot = nullptr;
    std::size_t expected = 0;
    if (key == camera_key) {
      slot = &p;
      expected = 12;
    } else if (key == "R0_rect") {
      slot = &r;
      expected = 9;
    } else if (key == "Tr_velo_to_cam") {
      slot = &t;
      expected = 12;
    } else {
      continue;
    }
    if (toks.size() - 1 != expected) {
      fail(ErrorKind::format, path.string() + ":" + std::to_string(ln + 1) + ": key " +
                                  std::string(key) + " expects " + std::to_string(expected) +
                                  " values, got " + std::to_string(toks.size() - 1));
    }
    std::vector<double> vals;
    for (std::size_t i = 1; i < toks.size(); ++i) {
      const auto v = detail::parse_double(toks[i]);
      if (!v) {
        fail(ErrorKind::format, path.string() + ":" + std::to_string(ln + 1) + ": bad number '" +
                                    std::string(toks[i]) + "'");
      }
      vals.push_back(*v);
    }
    *slot = std::move(vals);
  }
  if (!p) fail(ErrorKind::format, path.string() + ": missing key " + std::string(camera_key));
  if (!r) fail(ErrorKind::format, path.string() + ": missing key R0_rect");
  if (!t) fail(ErrorKind::format, path.string() + ": missing key Tr_velo_to_cam");

  Calibration c;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      c.P(i, j) = (*p)[4 * i + j];
      c.T_velo_to_cam(i, j) = (*t)[4 * i + j];
    }
    for (int j = 0; j < 3; ++j) c.R_rect(i, j) = (*r)[3 * i + j];
  }
  return c;
}

inline void write_calib(const std::filesystem::path& path, const Calibration& c,
                        std::string_view camera_key = "P2") {
  std::string out;
  auto emit = [&](std::string_view key, auto&& m) {
    out += key;
    out += ':';
    for (int i = 0; i < m.rows(); ++i) {
      for (int j = 0; j < m.cols(); ++j) out += ' ' + detail::format_double(m(i, j));
    }
    out += '\n';
  };
  emit(camera_key, c.P);
  emit("R0_rect", c.R_rect);
  emit("Tr_velo_to_cam", c.T_velo_to_cam);
  detail::write_file_bytes(path, out);
}

// ---------------------------------------------------------------------------
// Labels

struct LabelRecord {
  std::string type = "Car";
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  Box2D bbox;
  double h = 0.0, w = 0.0, l = 0.0;  // meters
  double x = 0.0, y = 0.0, z = 0.0;  // camera frame, bottom center
  double rotation_y = 0.0;

  bool is_dont_care() const { return type == "DontCare"; }
  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

inline std::vector<LabelRecord> read_labels(const std::filesystem::path& path) {
  const auto lines = detail::read_lines(path);
  std::vector<LabelRecord> out;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto toks = detail::split_ws(lines[ln]);
    if (toks.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(ln + 1);
    if (toks.size() != 15) {
      fail(ErrorKind::format, where + ": expected 15 fields, got " + std::to_string(toks.size()));
    }
    std::array<double, 14> v{};
    for (std::size_t i = 1; i < 15; ++i) {
      const auto d = detail::parse_double(toks[i]);
      if (!d) fail(ErrorKind::format, where + ": bad number '" + std::string(toks[i]) + "'");
      v[i - 1] = *d;
    }
    LabelRecord rec;
    rec.type = std::string(toks[0]);
    rec.truncation = v[0];
    rec.occlusion = static_cast<int>(v[1]);
    if (rec.occlusion != v[1]) fail(ErrorKind::format, where + ": occlusion must be an integer");
    rec.alpha = v[2];
    rec.bbox = {v[3], v[4], v[5], v[6]};
    rec.h = v[7];
    rec.w = v[8];
    rec.l = v[9];
    rec.x = v[10];
    rec.y = v[11];
    rec.z = v[12];
    rec.rotation_y = v[13];
    if (!rec.is_dont_care() && !(rec.h > 0.0 && rec.w > 0.0 && rec.l > 0.0)) {
      fail(ErrorKind::format, where + ": non-positive dimensions");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::string format_label(const LabelRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%s %.2f %d %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f",
                r.type.c_str(), r.truncation, r.occlusion, r.alpha, r.bbox.x1, r.bbox.y1,
                r.bbox.x2, r.bbox.y2, r.h, r.w, r.l, r.x, r.y, r.z, r.rotation_y);
  return buf;
}

inline void write_labels(const std::filesystem::path& path, std::span<const LabelRecord> recs) {
  std::string out;
  for (const auto& r : recs) {
    out += format_label(r);
    out += '\n';
  }
  detail::write_file_bytes(path, out);
}

// KITTI rotation_y turns about the camera's down axis, zero along camera +x
// (sensor -y). Sensor yaw turns about +z, zero along sensor +x.
inline double rotation_y_to_yaw(double rotation_y) {
  return normalize_yaw(-rotation_y - 0.5 * std::numbers::pi);
}
inline double yaw_to_rotation_y(double yaw) {
  return normalize_yaw(-yaw - 0.5 * std::numbers::pi);
}

inline Box3D label_to_box3d(const LabelRecord& rec, const Calibration& calib) {
  if (rec.is_dont_care()) fail(ErrorKind::contract, "label_to_box3d: DontCare record has no box");
  const Eigen::Vector3d bottom = calib.rect_to_velo({rec.x, rec.y, rec.z});
  Box3D box;
  box.cx = bottom.x();
  box.cy = bottom.y();
  box.cz = bottom.z() + 0.5 * rec.h;
  box.l = rec.l;
  box.w = rec.w;
  box.h = rec.h;
  box.yaw = rotation_y_to_yaw(rec.rotation_y);
  return box;
}

/// Inverse of label_to_box3d for the geometric fields. Fills alpha from the
/// viewing ray; bbox, truncation and occlusion are left to the caller.
inline LabelRecord box3d_to_label(const Box3D& box, const Calibration& calib,
                                  std::string type = "Car") {
  const Eigen::Vector3d bottom = calib.velo_to_rect({box.cx, box.cy, box.cz - 0.5 * box.h});
  LabelRecord rec;
  rec.type = std::move(type);
  rec.h = box.h;
  rec.w = box.w;
  rec.l = box.l;
  rec.x = bottom.x();
  rec.y = bottom.y();
  rec.z = bottom.z();
  rec.rotation_y = yaw_to_rotation_y(box.yaw);
  rec.alpha = normalize_yaw(rec.rotation_y - std::atan2(rec.x, rec.z));
  return rec;
}

// ---------------------------------------------------------------------------
// Projection

struct ImagePoint {
  double u = 0.0, v = 0.0;
  double depth = 0.0;  // rectified camera z
  bool in_front = false;
};

inline constexpr double kMinDepth = 1e-6;

inline ImagePoint project_point(const Vec3& p, const Calibration& calib) {
  const Eigen::Vector3d cam = calib.velo_to_rect({p.x, p.y, p.z});
  const Eigen::Vector3d img = calib.P * cam.homogeneous();
  ImagePoint out;
  out.depth = cam.z();
  out.in_front = cam.z() > kMinDepth && img.z() > kMinDepth;
  if (out.in_front) {
    out.u = img.x() / img.z();
    out.v = img.y() / img.z();
  }
  return out;
}

/// Pinhole projection through T_velo_to_cam, R_rect and P. Points behind the
/// camera are flagged, not dropped.
inline std::vector<ImagePoint> project_to_image(std::span<const Vec3> points, const Calibration& calib) {
  std::vector<ImagePoint> out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(project_point(p, calib));
  return out;
}

inline std::vector<ImagePoint> project_to_image(const Corners3D& corners, const Calibration& calib) {
  return project_to_image(std::span<const Vec3>(corners), calib);
}

/// Axis-aligned hull of a box's projected corners, clipped to a
/// width x height image. Empty when any corner is behind the camera or the
/// hull misses the image.
inline std::optional<Box2D> image_box(const Box3D& box, const Calibration& calib, double width,
                                      double height) {
  const auto pts = project_to_image(box_to_corners(box), calib);
  Box2D b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& p : pts) {
    if (!p.in_front) return std::nullopt;
    b.x1 = std::min(b.x1, p.u);
    b.y1 = std::min(b.y1, p.v);
    b.x2 = std::max(b.x2, p.u);
    b.y2 = std::max(b.y2, p.v);
  }
  b.x1 = std::clamp(b.x1, 0.0, width);
  b.x2 = std::clamp(b.x2, 0.0, width);
  b.y1 = std::clamp(b.y1, 0.0, height);
  b.y2 = std::clamp(b.y2, 0.0, height);
  if (!(b.x2 > b.x1) || !(b.y2 > b.y1)) return std::nullopt;
  return b;
}

/// Drops points that are behind the camera or project outside the image.
inline PointCloud filter_to_image(const PointCloud& pc, const Calibration& calib, double width,
                                  double height) {
  PointCloud out;
  for (const Point& p : pc.points) {
    const auto ip = project_point({p.x, p.y, p.z}, calib);
    if (ip.in_front && ip.u >= 0.0 && ip.u < width && ip.v >= 0.0 && ip.v < height) {
      out.points.push_back(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Images (binary PPM, 8-bit RGB)

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, interleaved

  std::uint8_t& at(int row, int col, int ch) {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }
  std::uint8_t at(int row, int col, int ch) const {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  detail::write_file_bytes(path, out);
}

inline Image read_ppm(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string_view {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string_view(bytes).substr(start, pos - start);
  };
  if (next_token() != "P6") fail(ErrorKind::format, path.string() + ": not a binary PPM");
  int dims[3] = {0, 0, 0};
  for (int& d : dims) {
    const auto tok = next_token();
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), d);
    if (res.ec != std::errc{} || d <= 0) fail(ErrorKind::format, path.string() + ": bad PPM header");
  }
  if (dims[2] != 255) fail(ErrorKind::format, path.string() + ": only 8-bit PPM supported");
  ++pos;  // single whitespace before raster
  Image img;
  img.width = dims[0];
  img.height = dims[1];
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
  if (bytes.size() < pos + n) fail(ErrorKind::format, path.string() + ": truncated PPM raster");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

}  // namespace mv3d
