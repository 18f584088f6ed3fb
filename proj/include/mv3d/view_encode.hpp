#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mv3d/error.hpp"
#include "mv3d/geom3d.hpp"
#include "mv3d/kitti_io.hpp"

namespace mv3d {

/// Dense channels x rows x cols float32 grid, row-major within a channel.
struct Grid {
  std::size_t channels = 0, rows = 0, cols = 0;
  std::vector<float> data;

  Grid() = default;
  Grid(std::size_t c, std::size_t r, std::size_t w) : channels(c), rows(r), cols(w), data(c * r * w, 0.0f) {}

  float& at(std::size_t c, std::size_t r, std::size_t col) { return data[(c * rows + r) * cols + col]; }
  float at(std::size_t c, std::size_t r, std::size_t col) const { return data[(c * rows + r) * cols + col]; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

// ---------------------------------------------------------------------------
// Grid geometry

namespace detail {
// Snaps values within 1e-9 cells of an integer so that decimal resolutions
// like 0.1 m land on the intended cell boundary.
inline double cell_units(double v, double origin, double resolution) {
  const double u = (v - origin) / resolution;
  const double r = std::round(u);
  return std::abs(u - r) < 1e-9 ? r : u;
}

inline std::size_t integral_extent(double lo, double hi, double resolution, const char* what) {
  if (!(resolution > 0.0) || !(hi > lo)) fail(ErrorKind::config, std::string(what) + ": empty range or non-positive resolution");
  const double n = (hi - lo) / resolution;
  const double r = std::round(n);
  if (std::abs(n - r) > 1e-6 * std::max(1.0, r) || r < 1.0) {
    fail(ErrorKind::config, std::string(what) + ": range is not an integral number of cells");
  }
  return static_cast<std::size_t>(r);
}
}  // namespace detail

/// Inclusive cell index range; empty when lo > hi.
struct CellSpan {
  long lo = 0, hi = -1;
  bool empty() const { return lo > hi; }
  long count() const { return empty() ? 0 : hi - lo + 1; }
};

/// Cells whose extent overlaps the open interval (lo, hi) along one axis.
inline CellSpan cell_span(double lo, double hi, double origin, double resolution) {
  const double u0 = detail::cell_units(lo, origin, resolution);
  const double u1 = detail::cell_units(hi, origin, resolution);
  return {static_cast<long>(std::floor(u0)), static_cast<long>(std::ceil(u1)) - 1};
}

struct BevConfig {
  double x_min = 0.0, x_max = 70.4;
  double y_min = -40.0, y_max = 40.0;
  double resolution = 0.1;
  double z_min = -2.4, z_max = 1.0;
  int slices = 4;

  std::size_t rows() const { return detail::integral_extent(x_min, x_max, resolution, "bev x"); }
  std::size_t cols() const { return detail::integral_extent(y_min, y_max, resolution, "bev y"); }
  std::size_t channels() const { return static_cast<std::size_t>(slices) + 2; }

  void validate() const {
    rows();
    cols();
    if (slices < 1) fail(ErrorKind::config, "bev slices must be >= 1");
    if (!(z_max > z_min)) fail(ErrorKind::config, "bev z range is empty");
  }

  friend bool operator==(const BevConfig&, const BevConfig&) = default;
};

/// Row index grows with x, column index with y.
inline long bev_row(double x, const BevConfig& cfg) {
  return static_cast<long>(std::floor(detail::cell_units(x, cfg.x_min, cfg.resolution)));
}
inline long bev_col(double y, const BevConfig& cfg) {
  return static_cast<long>(std::floor(detail::cell_units(y, cfg.y_min, cfg.resolution)));
}

struct OccupancyMap {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> cells;

  OccupancyMap() = default;
  OccupancyMap(std::size_t r, std::size_t c) : rows(r), cols(c), cells(r * c, 0) {}

  bool at(std::size_t r, std::size_t c) const { return cells[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { cells[r * cols + c] = v ? 1 : 0; }
  friend bool operator==(const OccupancyMap&, const OccupancyMap&) = default;
};

/// Normalized point density of a cell holding n points.
inline double density_feature(std::size_t n) {
  return std::min(1.0, std::log(static_cast<double>(n) + 1.0) / std::log(64.0));
}

struct BevEncoding {
  Grid grid;  // slices height maps, then intensity, then density
  OccupancyMap occupancy;
};

/// Bird's-eye-view encoding. Only points inside the configured x/y/z volume
/// contribute. Height channels store (z - z_min) of the highest point in each
/// slice, 0 for empty cells; intensity is taken from the highest point of the
/// cell (larger reflectance wins ties).
inline BevEncoding encode_bev(const PointCloud& pc, const BevConfig& cfg) {
  cfg.validate();
  const std::size_t rows = cfg.rows();
  const std::size_t cols = cfg.cols();
  const std::size_t m = static_cast<std::size_t>(cfg.slices);
  const double slice_h = (cfg.z_max - cfg.z_min) / static_cast<double>(m);

  BevEncoding out{Grid(m + 2, rows, cols), OccupancyMap(rows, cols)};
  std::vector<std::uint32_t> count(rows * cols, 0);
  std::vector<float> top_z(rows * cols, -std::numeric_limits<float>::infinity());
  std::vector<float> top_i(rows * cols, 0.0f);

  for (const Point& p : pc.points) {
    if (!(p.z >= cfg.z_min && p.z <= cfg.z_max)) continue;
    const long r = bev_row(p.x, cfg);
    const long c = bev_col(p.y, cfg);
    if (r < 0 || c < 0 || r >= static_cast<long>(rows) || c >= static_cast<long>(cols)) continue;
    const std::size_t cell = static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c);

    const double rel = static_cast<double>(p.z) - cfg.z_min;
    const auto slice = std::min(m - 1, static_cast<std::size_t>(std::floor(rel / slice_h)));
    float& h = out.grid.at(slice, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    h = std::max(h, static_cast<float>(rel));

    ++count[cell];
    if (p.z > top_z[cell] || (p.z == top_z[cell] && p.intensity > top_i[cell])) {
      top_z[cell] = p.z;
      top_i[cell] = p.intensity;
    }
  }

  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t cell = r * cols + c;
      if (count[cell] == 0) continue;
      out.occupancy.set(r, c);
      out.grid.at(m, r, c) = top_i[cell];
      out.grid.at(m + 1, r, c) = static_cast<float>(density_feature(count[cell]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Front view (cylindrical projection)

inline double degrees(double d) { return d * std::numbers::pi / 180.0; }

struct FrontViewConfig {
  int rows = 64;
  int cols = 512;
  double dtheta = degrees(90.0) / 512.0;           // horizontal, rad/cell
  double dphi = degrees(2.0 + 24.9) / 64.0;        // vertical, rad/cell
  long col_offset = 256;                           // maps +-45 deg onto [0, cols)
  long row_offset = 60;                            // ceil(24.9 deg / dphi): lowest beam -> row 0

  void validate() const {
    if (rows < 1 || cols < 1) fail(ErrorKind::config, "front view grid must be non-empty");
    if (!(dtheta > 0.0) || !(dphi > 0.0)) fail(ErrorKind::config, "front view resolutions must be positive");
  }
  friend bool operator==(const FrontViewConfig&, const FrontViewConfig&) = default;
};

struct FrontViewCoords {
  long r = 0, c = 0;  // before offsets
};

inline FrontViewCoords front_view_coords(double x, double y, double z, const FrontViewConfig& cfg) {
  return {static_cast<long>(std::floor(std::atan2(z, std::hypot(x, y)) / cfg.dphi)),
          static_cast<long>(std::floor(std::atan2(y, x) / cfg.dtheta))};
}

struct FrontViewEncoding {
  Grid grid;  // channels: height, distance, intensity
  std::size_t dropped = 0;
};

/// Collisions keep the nearest point; equal ranges prefer larger intensity,
/// then larger z, so the result does not depend on input order.
inline FrontViewEncoding encode_front_view(const PointCloud& pc, const FrontViewConfig& cfg) {
  cfg.validate();
  const auto rows = static_cast<std::size_t>(cfg.rows);
  const auto cols = static_cast<std::size_t>(cfg.cols);
  FrontViewEncoding out{Grid(3, rows, cols), 0};
  std::vector<std::uint8_t> filled(rows * cols, 0);

  for (const Point& p : pc.points) {
    const auto fc = front_view_coords(p.x, p.y, p.z, cfg);
    const long r = fc.r + cfg.row_offset;
    const long c = fc.c + cfg.col_offset;
    if (r < 0 || c < 0 || r >= cfg.rows || c >= cfg.cols) {
      ++out.dropped;
      continue;
    }
    const auto ur = static_cast<std::size_t>(r);
    const auto uc = static_cast<std::size_t>(c);
    const float dist = static_cast<float>(std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z));
    const std::size_t cell = ur * cols + uc;
    if (filled[cell]) {
      const float d0 = out.grid.at(1, ur, uc);
      const float i0 = out.grid.at(2, ur, uc);
      const float z0 = out.grid.at(0, ur, uc);
      const bool better = dist < d0 || (dist == d0 && (p.intensity > i0 || (p.intensity == i0 && p.z > z0)));
      if (!better) continue;
    }
    filled[cell] = 1;
    out.grid.at(0, ur, uc) = p.z;
    out.grid.at(1, ur, uc) = dist;
    out.grid.at(2, ur, uc) = p.intensity;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summed-area table

class SummedAreaTable {
 public:
  SummedAreaTable() = default;
  explicit SummedAreaTable(const OccupancyMap& occ) : rows_(occ.rows), cols_(occ.cols), sums_((occ.rows + 1) * (occ.cols + 1), 0) {
    for (std::size_t r = 0; r < rows_; ++r) {
      std::uint32_t row_acc = 0;
      for (std::size_t c = 0; c < cols_; ++c) {
        row_acc += occ.at(r, c) ? 1u : 0u;
        raw(r + 1, c + 1) = raw(r, c + 1) + row_acc;
      }
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  /// Occupied cells in [0..i] x [0..j].
  std::uint32_t at(std::size_t i, std::size_t j) const { return raw(i + 1, j + 1); }

  /// Occupied cells in the inclusive rectangle, clipped to the map.
  std::uint32_t rect_sum(long r0, long c0, long r1, long c1) const {
    r0 = std::max(r0, 0L);
    c0 = std::max(c0, 0L);
    r1 = std::min(r1, static_cast<long>(rows_) - 1);
    c1 = std::min(c1, static_cast<long>(cols_) - 1);
    if (r0 > r1 || c0 > c1) return 0;
    const auto a = static_cast<std::size_t>(r0), b = static_cast<std::size_t>(c0);
    const auto e = static_cast<std::size_t>(r1) + 1, f = static_cast<std::size_t>(c1) + 1;
    return raw(e, f) - raw(a, f) - raw(e, b) + raw(a, b);
  }

 private:
  std::uint32_t& raw(std::size_t i, std::size_t j) { return sums_[i * (cols_ + 1) + j]; }
  std::uint32_t raw(std::size_t i, std::size_t j) const { return sums_[i * (cols_ + 1) + j]; }

  std::size_t rows_ = 0, cols_ = 0;
  std::vector<std::uint32_t> sums_;
};

inline SummedAreaTable integral_image(const OccupancyMap& occ) { return SummedAreaTable(occ); }

}  // namespace mv3d
