#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <tuple>
#include <vector>

#include "mv3d/error.hpp"

// Sensor frame: x forward, y left, z up. Yaw rotates about +z, zero along +x,
// counter-clockwise positive.

namespace mv3d {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

/// Wraps an angle into (-pi, pi].
inline double normalize_yaw(double yaw) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::remainder(yaw, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  return a;
}

/// Oriented cuboid. (cx, cy, cz) is the geometric center; l runs along the
/// heading, w across it, h along z.
struct Box3D {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;

  double volume() const { return l * w * h; }
  double diagonal() const { return std::sqrt(l * l + w * w + h * h); }
  double z_min() const { return cz - 0.5 * h; }
  double z_max() const { return cz + 0.5 * h; }

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

/// Oriented rectangle on the ground plane.
struct BevBox {
  double cx = 0.0, cy = 0.0;
  double l = 1.0, w = 1.0;
  double yaw = 0.0;

  double area() const { return l * w; }

  friend bool operator==(const BevBox&, const BevBox&) = default;
  friend auto operator<=>(const BevBox& a, const BevBox& b) {
    return std::tie(a.cx, a.cy, a.l, a.w, a.yaw) <=> std::tie(b.cx, b.cy, b.l, b.w, b.yaw);
  }
};

inline bool is_valid(const Box3D& b) {
  return std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.cz) &&
         b.l > 0.0 && b.w > 0.0 && b.h > 0.0 && std::isfinite(b.l) &&
         std::isfinite(b.w) && std::isfinite(b.h) && std::isfinite(b.yaw);
}

inline void check_box(const Box3D& b) {
  if (!is_valid(b)) fail(ErrorKind::contract, "invalid Box3D (non-finite or non-positive size)");
}

inline BevBox bev_footprint(const Box3D& b) { return {b.cx, b.cy, b.l, b.w, b.yaw}; }

/// Axis-aligned image-plane box in pixels, [x1, x2] x [y1, y2].
struct Box2D {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
  double height() const { return y2 - y1; }
  friend bool operator==(const Box2D&, const Box2D&) = default;
};

inline double iou_2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------
// Corners

/// Corner ordering: 0-3 bottom face counter-clockwise seen from +z, starting
/// at the (+l/2, +w/2) corner in the box frame; 4-7 the top face, same order.
using Corners3D = std::array<Vec3, 8>;

namespace detail {
inline constexpr std::array<std::array<double, 2>, 4> kFootprintSigns = {
    {{+1.0, +1.0}, {-1.0, +1.0}, {-1.0, -1.0}, {+1.0, -1.0}}};
}

inline std::array<Vec2, 4> footprint_corners(const BevBox& b) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  std::array<Vec2, 4> out;
  for (std::size_t k = 0; k < 4; ++k) {
    const double lx = 0.5 * b.l * detail::kFootprintSigns[k][0];
    const double ly = 0.5 * b.w * detail::kFootprintSigns[k][1];
    out[k] = {b.cx + c * lx - s * ly, b.cy + s * lx + c * ly};
  }
  return out;
}

inline Corners3D box_to_corners(const Box3D& box) {
  const auto fp = footprint_corners(bev_footprint(box));
  Corners3D out;
  for (std::size_t k = 0; k < 4; ++k) {
    out[k] = {fp[k].x, fp[k].y, box.z_min()};
    out[k + 4] = {fp[k].x, fp[k].y, box.z_max()};
  }
  return out;
}

/// Closed-form fit of an oriented box to eight (possibly noisy) corners that
/// follow the Corners3D ordering. Exact cuboids round-trip.
inline Box3D corners_to_box(const Corners3D& c) {
  double z_bottom = 0.0, z_top = 0.0;
  std::array<Vec2, 4> fp;
  for (std::size_t k = 0; k < 4; ++k) {
    z_bottom += c[k].z;
    z_top += c[k + 4].z;
    fp[k] = {0.5 * (c[k].x + c[k + 4].x), 0.5 * (c[k].y + c[k + 4].y)};
  }
  z_bottom *= 0.25;
  z_top *= 0.25;

  // Length edges run 1->0 and 2->3 along +heading; width edges 3->0 and 2->1.
  const Vec2 e_l0 = fp[0] - fp[1];
  const Vec2 e_l1 = fp[3] - fp[2];
  const Vec2 e_w0 = fp[0] - fp[3];
  const Vec2 e_w1 = fp[1] - fp[2];
  const double l = 0.5 * (norm(e_l0) + norm(e_l1));
  const double w = 0.5 * (norm(e_w0) + norm(e_w1));
  const double h = z_top - z_bottom;
  constexpr double kMinExtent = 1e-9;
  if (!(l > kMinExtent) || !(w > kMinExtent) || !(h > kMinExtent)) {
    fail(ErrorKind::degenerate, "degenerate corners");
  }
  const Vec2 heading = e_l0 + e_l1;
  if (!(norm(heading) > kMinExtent)) fail(ErrorKind::degenerate, "degenerate corners");

  Box3D box;
  box.cx = 0.25 * (fp[0].x + fp[1].x + fp[2].x + fp[3].x);
  box.cy = 0.25 * (fp[0].y + fp[1].y + fp[2].y + fp[3].y);
  box.cz = 0.5 * (z_bottom + z_top);
  box.l = l;
  box.w = w;
  box.h = h;
  box.yaw = normalize_yaw(std::atan2(heading.y, heading.x));
  return box;
}

// ---------------------------------------------------------------------------
// Convex polygons

struct ConvexPolygon {
  std::vector<Vec2> vertices;  // counter-clockwise

  bool empty() const { return vertices.size() < 3; }
};

inline ConvexPolygon to_polygon(const BevBox& b) {
  const auto fp = footprint_corners(b);
  return {{fp.begin(), fp.end()}};
}

inline double signed_area(std::span<const Vec2> pts) {
  if (pts.size() < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0, n = pts.size(); i < n; ++i) {
    acc += cross(pts[i], pts[(i + 1) % n]);
  }
  return 0.5 * acc;
}

inline double polygon_area(const ConvexPolygon& p) { return std::abs(signed_area(p.vertices)); }

inline constexpr double kEdgeEpsilon = 1e-12;

/// Clips `subject` against every edge of the convex `clip` polygon.
inline std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  std::vector<Vec2> in;
  const std::size_t n = clip.size();
  for (std::size_t e = 0; e < n && !out.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % n];
    const Vec2 edge = b - a;
    in.swap(out);
    out.clear();
    const std::size_t m = in.size();
    for (std::size_t i = 0; i < m; ++i) {
      const Vec2 p = in[i];
      const Vec2 q = in[(i + 1) % m];
      const double sp = cross(edge, p - a);
      const double sq = cross(edge, q - a);
      const bool p_in = sp >= -kEdgeEpsilon;
      const bool q_in = sq >= -kEdgeEpsilon;
      if (p_in) out.push_back(p);
      if (p_in != q_in) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

inline double polygon_intersection_area(const ConvexPolygon& a, const ConvexPolygon& b) {
  if (a.empty() || b.empty()) return 0.0;
  const auto clipped = clip_convex(a.vertices, b.vertices);
  return std::max(0.0, signed_area(clipped));
}

// ---------------------------------------------------------------------------
// IoU

inline double bev_intersection_area(const BevBox& a, const BevBox& b) {
  const double reach = 0.5 * (std::hypot(a.l, a.w) + std::hypot(b.l, b.w));
  const double dx = a.cx - b.cx;
  const double dy = a.cy - b.cy;
  if (dx * dx + dy * dy >= reach * reach) return 0.0;
  // Fixed argument order makes the result exactly symmetric.
  if (b < a) return polygon_intersection_area(to_polygon(b), to_polygon(a));
  return polygon_intersection_area(to_polygon(a), to_polygon(b));
}

inline double iou_bev(const BevBox& a, const BevBox& b) {
  if (a == b) return 1.0;
  const double inter = bev_intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double iou_3d(const Box3D& a, const Box3D& b) {
  if (a == b) return 1.0;
  const double dz = std::min(a.z_max(), b.z_max()) - std::max(a.z_min(), b.z_min());
  if (dz <= 0.0) return 0.0;
  const double area = bev_intersection_area(bev_footprint(a), bev_footprint(b));
  if (area <= 0.0) return 0.0;
  const double inter = area * dz;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// NMS

/// Indices of `scores` sorted by descending score, lower index first on ties.
inline std::vector<std::size_t> score_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  return order;
}

/// Greedy NMS on rotated ground-plane boxes. A box is suppressed when its
/// IoU with an already kept box exceeds `iou_threshold`. Stops after
/// `max_keep` survivors, which equals running NMS and truncating.
inline std::vector<std::size_t> nms_bev(std::span<const BevBox> boxes, std::span<const double> scores,
                                        double iou_threshold,
                                        std::size_t max_keep = std::numeric_limits<std::size_t>::max()) {
  if (boxes.size() != scores.size()) fail(ErrorKind::shape, "nms_bev: boxes/scores size mismatch");
  std::vector<std::size_t> kept;
  if (max_keep == 0) return kept;
  for (const std::size_t i : score_order(scores)) {
    bool suppressed = false;
    for (const std::size_t k : kept) {
      if (iou_bev(boxes[k], boxes[i]) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(i);
      if (kept.size() >= max_keep) break;
    }
  }
  return kept;
}

}  // namespace mv3d
