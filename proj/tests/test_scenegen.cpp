#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "mv3d/scenegen.hpp"

using namespace mv3d;
namespace fs = std::filesystem;

namespace {

/// Sensor-frame point inside the box inflated by `margin` on every side.
bool inside(const Box3D& b, const Point& p, double margin) {
  const double dx = p.x - b.cx, dy = p.y - b.cy;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  return std::abs(u) <= 0.5 * b.l + margin && std::abs(v) <= 0.5 * b.w + margin && std::abs(p.z - b.cz) <= 0.5 * b.h + margin;
}

}  // namespace

TEST(Scenegen, EmptyInputsGiveEmptyScene) {
  SceneSpec spec;
  spec.num_objects = 0;
  spec.clutter_points = 0;
  const Scene s = generate_scene(spec);
  EXPECT_EQ(s.cloud.size(), 0u);
  EXPECT_TRUE(s.boxes.empty());
  EXPECT_TRUE(s.labels.empty());
}

TEST(Scenegen, SingleObjectPointsLieOnTheObject) {
  SceneSpec spec;
  spec.num_objects = 1;
  spec.clutter_points = 0;
  spec.seed = 17;
  const Scene s = generate_scene(spec);
  ASSERT_EQ(s.boxes.size(), 1u);
  ASSERT_EQ(s.cloud.size(), static_cast<std::size_t>(spec.points_per_object));
  for (const auto& p : s.cloud.points) EXPECT_TRUE(inside(s.boxes[0], p, 0.02));
}

TEST(Scenegen, EveryObjectMeetsDensityAndConsistency) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SceneSpec spec;
    spec.seed = seed;
    const Scene s = generate_scene(spec);
    ASSERT_EQ(s.boxes.size(), 5u);
    ASSERT_EQ(s.point_object.size(), s.cloud.size());
    std::vector<int> total(s.boxes.size(), 0), in(s.boxes.size(), 0);
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
      const int o = s.point_object[i];
      if (o < 0) continue;
      ++total[o];
      in[o] += inside(s.boxes[o], s.cloud.points[i], 0.02) ? 1 : 0;
    }
    for (std::size_t o = 0; o < s.boxes.size(); ++o) {
      EXPECT_GE(total[o], spec.points_per_object);
      EXPECT_GE(in[o], 0.95 * total[o]);
    }
  }
}

TEST(Scenegen, BoxesDoNotOverlapAndStayInRange) {
  for (std::uint64_t seed = 100; seed < 150; ++seed) {
    SceneSpec spec;
    spec.seed = seed;
    spec.num_objects = 8;
    spec.free_yaw = seed % 2 == 0;
    const Scene s = generate_scene(spec);
    for (std::size_t i = 0; i < s.boxes.size(); ++i) {
      for (const auto& corner : box_to_corners(s.boxes[i])) {
        EXPECT_GE(corner.x, 0.0);
        EXPECT_LE(corner.x, 70.4);
        EXPECT_GE(corner.y, -40.0);
        EXPECT_LE(corner.y, 40.0);
      }
      for (std::size_t j = i + 1; j < s.boxes.size(); ++j) {
        EXPECT_EQ(iou_bev(bev_footprint(s.boxes[i]), bev_footprint(s.boxes[j])), 0.0);
      }
    }
  }
}

TEST(Scenegen, DeterministicForFixedSeed) {
  SceneSpec spec;
  spec.seed = 42;
  const Scene a = generate_scene(spec), b = generate_scene(spec);
  ASSERT_EQ(a.cloud.size(), b.cloud.size());
  EXPECT_EQ(0, std::memcmp(a.cloud.points.data(), b.cloud.points.data(), a.cloud.size() * sizeof(Point)));
  EXPECT_EQ(a.boxes, b.boxes);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.image.rgb, b.image.rgb);

  const fs::path d1 = fs::temp_directory_path() / "mv3d_scene_a", d2 = fs::temp_directory_path() / "mv3d_scene_b";
  fs::remove_all(d1);
  fs::remove_all(d2);
  write_scene(d1, frame_name(0), a);
  write_scene(d2, frame_name(0), b);
  for (const char* sub : {"velodyne/000000.bin", "calib/000000.txt", "label_2/000000.txt", "image_2/000000.ppm"}) {
    EXPECT_EQ(detail::read_file_bytes(d1 / sub), detail::read_file_bytes(d2 / sub)) << sub;
  }
}

TEST(Scenegen, DifferentSeedsDiffer) {
  SceneSpec a, b;
  a.seed = 1;
  b.seed = 2;
  EXPECT_NE(generate_scene(a).boxes, generate_scene(b).boxes);
}

TEST(Scenegen, ImpossiblePlacementIsAnError) {
  SceneSpec spec;
  spec.num_objects = 200;
  spec.x_min = 5.0;
  spec.x_max = 8.0;
  spec.max_retries = 50;
  try {
    generate_scene(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::placement);
  }
}

TEST(Scenegen, InvalidSceneParametersRejected) {
  SceneSpec spec;
  spec.length = -1.0;
  EXPECT_THROW(generate_scene(spec), Error);
  spec = SceneSpec{};
  spec.num_objects = -1;
  EXPECT_THROW(generate_scene(spec), Error);
}

TEST(Scenegen, LabelsDescribeTheBoxes) {
  SceneSpec spec;
  spec.seed = 9;
  const Scene s = generate_scene(spec);
  ASSERT_EQ(s.labels.size(), s.boxes.size());
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    const Box3D back = label_to_box3d(s.labels[i], s.calib);
    EXPECT_NEAR(back.cx, s.boxes[i].cx, 1e-9);
    EXPECT_NEAR(back.cy, s.boxes[i].cy, 1e-9);
    EXPECT_NEAR(back.cz, s.boxes[i].cz, 1e-9);
    EXPECT_GT(s.labels[i].bbox.height(), 0.0);
    EXPECT_GE(s.labels[i].truncation, 0.0);
    EXPECT_LE(s.labels[i].truncation, 1.0);
  }
}

TEST(Scenegen, WrittenSceneReadsBack) {
  SceneSpec spec;
  spec.seed = 4;
  const Scene s = generate_scene(spec);
  const fs::path d = fs::temp_directory_path() / "mv3d_scene_rt";
  fs::remove_all(d);
  write_scene(d, "000003", s);
  EXPECT_EQ(list_frames(d), std::vector<std::string>{"000003"});
  const Scene r = read_scene(d, "000003");
  EXPECT_EQ(r.cloud.size(), s.cloud.size());
  ASSERT_EQ(r.boxes.size(), s.boxes.size());
  for (std::size_t i = 0; i < s.boxes.size(); ++i) EXPECT_GT(iou_3d(r.boxes[i], s.boxes[i]), 0.999);
  EXPECT_EQ(r.image.rgb, s.image.rgb);
}

TEST(Scenegen, RayDropRemovesSomePoints) {
  SceneSpec spec;
  spec.seed = 5;
  spec.ray_drop = true;
  spec.ray_drop_probability = 0.5;
  const Scene s = generate_scene(spec);
  EXPECT_LT(s.cloud.size(), 5u * 200u + 2000u);
  EXPECT_GT(s.cloud.size(), 0u);
}
