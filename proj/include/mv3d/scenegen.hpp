#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mv3d/error.hpp"
#include "mv3d/geom3d.hpp"
#include "mv3d/kitti_io.hpp"
#include "mv3d/rng.hpp"

namespace mv3d {

struct SceneSpec {
  std::uint64_t seed = 0;
  int num_objects = 5;
  double length = 3.9, width = 1.6, height = 1.56;
  double size_jitter = 0.05;  // relative, uniform
  double yaw_jitter = 0.15;   // radians around the nearest multiple of 90 deg
  bool free_yaw = false;      // uniform yaw instead of road-aligned
  double ground_z = -1.73;
  int points_per_object = 200;
  int clutter_points = 2000;
  bool ray_drop = false;
  double ray_drop_probability = 0.1;
  // Placement region: in front of the camera, inside the default BEV range.
  double x_min = 5.0, x_max = 40.0;
  double max_bearing = 0.6;  // |atan2(y, x)| limit, radians
  double min_gap = 0.5;      // clearance between circumscribed circles
  int max_retries = 1000;
  int image_width = 1242, image_height = 375;

  void validate() const {
    if (num_objects < 0 || points_per_object < 0 || clutter_points < 0) fail(ErrorKind::config, "scene counts must be >= 0");
    if (!(length > 0.0 && width > 0.0 && height > 0.0)) fail(ErrorKind::config, "object sizes must be positive");
    if (!(size_jitter >= 0.0 && size_jitter < 1.0)) fail(ErrorKind::config, "size jitter must be in [0, 1)");
    if (!(x_max > x_min) || image_width < 1 || image_height < 1) fail(ErrorKind::config, "invalid placement region or image size");
  }
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct Scene {
  PointCloud cloud;
  std::vector<int> point_object;  // per point: object index, -1 for clutter
  std::vector<Box3D> boxes;
  std::vector<LabelRecord> labels;
  Calibration calib;
  Image image;
};

namespace detail {

inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Vec2& p : pts) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

struct Face {
  Vec3 origin, edge_a, edge_b, normal;
};

inline std::array<Face, 6> box_faces(const Box3D& b) {
  const auto c = box_to_corners(b);
  const Vec3 fwd{std::cos(b.yaw), std::sin(b.yaw), 0.0};
  const Vec3 left{-std::sin(b.yaw), std::cos(b.yaw), 0.0};
  const Vec3 up{0.0, 0.0, 1.0};
  const Vec3 e_l = c[0] - c[1], e_w = c[0] - c[3], e_h = c[4] - c[0];
  return {{{c[3], e_w, e_h, fwd},                    // front (+l/2)
           {c[2], e_w, e_h, -1.0 * fwd},             // back
           {c[1], e_l, e_h, left},                   // left (+w/2)
           {c[2], e_l, e_h, -1.0 * left},            // right
           {c[6], e_l, e_w, up},                     // top
           {c[2], e_l, e_w, -1.0 * up}}};            // bottom
}

}  // namespace detail

/// Seed of the index-th scene of a dataset generated from `seed`.
inline std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> w{};
  seq.generate(w.begin(), w.end());
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

/// Generates one synthetic scene. Object surfaces facing the sensor origin
/// are sampled uniformly; ground clutter covers the BEV range.
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Scene scene;
  scene.calib = Calibration::kitti_like();

  // Placement.
  for (int i = 0; i < spec.num_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      Box3D b;
      b.l = spec.length * (1.0 + uniform(rng, -spec.size_jitter, spec.size_jitter));
      b.w = spec.width * (1.0 + uniform(rng, -spec.size_jitter, spec.size_jitter));
      b.h = spec.height * (1.0 + uniform(rng, -spec.size_jitter, spec.size_jitter));
      b.cx = uniform(rng, spec.x_min, spec.x_max);
      b.cy = b.cx * std::tan(uniform(rng, -spec.max_bearing, spec.max_bearing));
      b.cz = spec.ground_z + 0.5 * b.h;
      if (spec.free_yaw) {
        b.yaw = normalize_yaw(uniform(rng, -std::numbers::pi, std::numbers::pi));
      } else {
        const double base = 0.5 * std::numbers::pi * static_cast<double>(uniform_index(rng, 4));
        b.yaw = normalize_yaw(base + uniform(rng, -spec.yaw_jitter, spec.yaw_jitter));
      }
      const double r = 0.5 * std::hypot(b.l, b.w);
      bool ok = b.cy - r > -40.0 && b.cy + r < 40.0 && b.cx - r > 0.0 && b.cx + r < 70.4;
      for (const Box3D& o : scene.boxes) {
        const double ro = 0.5 * std::hypot(o.l, o.w);
        ok = ok && std::hypot(b.cx - o.cx, b.cy - o.cy) > r + ro + spec.min_gap;
      }
      ok = ok && image_box(b, scene.calib, spec.image_width, spec.image_height).has_value();
      if (ok) {
        scene.boxes.push_back(b);
        placed = true;
      }
    }
    if (!placed) fail(ErrorKind::placement, "cannot place object " + std::to_string(i) + " without overlap");
  }

  // Object surface points.
  for (std::size_t oi = 0; oi < scene.boxes.size(); ++oi) {
    const Box3D& b = scene.boxes[oi];
    const float reflect = static_cast<float>(uniform(rng, 0.2, 0.9));
    std::vector<detail::Face> visible;
    std::vector<double> areas;
    for (const auto& f : detail::box_faces(b)) {
      const Vec3 center = f.origin + 0.5 * f.edge_a + 0.5 * f.edge_b;
      const double facing = -(f.normal.x * center.x + f.normal.y * center.y + f.normal.z * center.z);
      if (facing > 0.0) {
        visible.push_back(f);
        const Vec3 a = f.edge_a, c = f.edge_b;
        areas.push_back(std::sqrt(std::pow(a.y * c.z - a.z * c.y, 2) + std::pow(a.z * c.x - a.x * c.z, 2) +
                                  std::pow(a.x * c.y - a.y * c.x, 2)));
      }
    }
    double total = 0.0;
    for (const double a : areas) total += a;
    for (int k = 0; k < spec.points_per_object && total > 0.0; ++k) {
      double pick = uniform(rng, 0.0, total);
      std::size_t fi = 0;
      while (fi + 1 < areas.size() && pick >= areas[fi]) pick -= areas[fi++];
      const auto& f = visible[fi];
      const double s = uniform01(rng), t = uniform01(rng);
      const Vec3 p = f.origin + s * f.edge_a + t * f.edge_b;
      const float inten = std::clamp(reflect + static_cast<float>(uniform(rng, -0.05, 0.05)), 0.0f, 1.0f);
      if (spec.ray_drop && coin(rng, spec.ray_drop_probability)) continue;
      scene.cloud.points.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z), inten});
      scene.point_object.push_back(static_cast<int>(oi));
    }
  }

  // Ground clutter.
  for (int k = 0; k < spec.clutter_points; ++k) {
    const double x = uniform(rng, 0.0, 70.4);
    const double y = uniform(rng, -40.0, 40.0);
    const double z = spec.ground_z + uniform(rng, -0.02, 0.02);
    if (spec.ray_drop && coin(rng, spec.ray_drop_probability)) continue;
    scene.cloud.points.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z),
                                  static_cast<float>(uniform(rng, 0.0, 0.3))});
    scene.point_object.push_back(-1);
  }

  // Labels.
  for (const Box3D& b : scene.boxes) {
    LabelRecord rec = box3d_to_label(b, scene.calib, "Car");
    rec.bbox = *image_box(b, scene.calib, spec.image_width, spec.image_height);
    const auto unclipped = image_box(b, scene.calib, 1e9, 1e9);
    rec.truncation = unclipped ? std::clamp(1.0 - rec.bbox.area() / unclipped->area(), 0.0, 1.0) : 1.0;
    rec.occlusion = 0;
    scene.labels.push_back(rec);
  }

  // Flat-shaded RGB rendering: sky above the horizon row, road below, objects
  // painted far to near as the convex hull of their projected corners.
  Image& img = scene.image;
  img.width = spec.image_width;
  img.height = spec.image_height;
  img.rgb.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);
  const double horizon = scene.calib.P(1, 2);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const bool sky = r < horizon;
      img.at(r, c, 0) = sky ? 135 : 90;
      img.at(r, c, 1) = sky ? 180 : 90;
      img.at(r, c, 2) = sky ? 235 : 95;
    }
  std::vector<std::size_t> order(scene.boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::hypot(scene.boxes[a].cx, scene.boxes[a].cy) > std::hypot(scene.boxes[b].cx, scene.boxes[b].cy);
  });
  for (const std::size_t oi : order) {
    std::vector<Vec2> pts;
    for (const auto& p : project_to_image(box_to_corners(scene.boxes[oi]), scene.calib)) pts.push_back({p.u, p.v});
    const auto hull = detail::convex_hull(pts);
    const auto bb = scene.labels[oi].bbox;
    const std::uint8_t shade[3] = {static_cast<std::uint8_t>(60 + (oi * 53) % 180),
                                   static_cast<std::uint8_t>(40 + (oi * 97) % 180),
                                   static_cast<std::uint8_t>(30 + (oi * 151) % 180)};
    for (int r = static_cast<int>(bb.y1); r < std::min(img.height, static_cast<int>(std::ceil(bb.y2))); ++r) {
      for (int c = static_cast<int>(bb.x1); c < std::min(img.width, static_cast<int>(std::ceil(bb.x2))); ++c) {
        const Vec2 q{c + 0.5, r + 0.5};
        bool inside = hull.size() >= 3;
        for (std::size_t e = 0; e < hull.size() && inside; ++e) {
          inside = cross(hull[(e + 1) % hull.size()] - hull[e], q - hull[e]) >= 0.0;
        }
        if (inside)
          for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = shade[ch];
      }
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// KITTI directory layout

inline std::string frame_name(std::size_t frame) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", frame);
  return buf;
}

struct FramePaths {
  std::filesystem::path velodyne, calib, label, image;
};

inline FramePaths frame_paths(const std::filesystem::path& root, const std::string& name) {
  return {root / "velodyne" / (name + ".bin"), root / "calib" / (name + ".txt"), root / "label_2" / (name + ".txt"),
          root / "image_2" / (name + ".ppm")};
}

inline void write_scene(const std::filesystem::path& root, const std::string& name, const Scene& scene) {
  const auto p = frame_paths(root, name);
  write_velodyne(p.velodyne, scene.cloud);
  write_calib(p.calib, scene.calib);
  write_labels(p.label, scene.labels);
  write_ppm(p.image, scene.image);
}

/// Frame names (file stems) present under root/velodyne, sorted.
inline std::vector<std::string> list_frames(const std::filesystem::path& root) {
  const auto dir = root / "velodyne";
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::io, "no velodyne directory under " + root.string());
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".bin") names.push_back(e.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

/// Reads a frame back. The image is optional on disk.
inline Scene read_scene(const std::filesystem::path& root, const std::string& name) {
  const auto p = frame_paths(root, name);
  Scene s;
  s.cloud = read_velodyne(p.velodyne);
  s.point_object.assign(s.cloud.size(), -1);
  s.calib = read_calib(p.calib);
  if (std::filesystem::exists(p.label)) s.labels = read_labels(p.label);
  for (const auto& rec : s.labels)
    if (!rec.is_dont_care()) s.boxes.push_back(label_to_box3d(rec, s.calib));
  if (std::filesystem::exists(p.image)) s.image = read_ppm(p.image);
  return s;
}

}  // namespace mv3d
