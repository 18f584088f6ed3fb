#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mv3d/geom3d.hpp"
#include "oracles.hpp"

using namespace mv3d;
constexpr double kPi = std::numbers::pi;

TEST(NormalizeYaw, WrapsIntoHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(normalize_yaw(kPi), kPi);
  EXPECT_DOUBLE_EQ(normalize_yaw(-kPi), kPi);
  EXPECT_NEAR(normalize_yaw(3 * kPi), kPi, 1e-12);
  EXPECT_NEAR(normalize_yaw(0.5 + 4 * kPi), 0.5, 1e-12);
  EXPECT_NEAR(normalize_yaw(-0.5 - 2 * kPi), -0.5, 1e-12);
}

TEST(BoxToCorners, AxisAlignedOrdering) {
  const Box3D b{1.0, 2.0, 3.0, 4.0, 2.0, 1.0, 0.0};
  const auto c = box_to_corners(b);
  // Bottom face counter-clockwise from (+l/2, +w/2), then the top face.
  const double expect[8][3] = {{3, 3, 2.5}, {-1, 3, 2.5}, {-1, 1, 2.5}, {3, 1, 2.5},
                               {3, 3, 3.5}, {-1, 3, 3.5}, {-1, 1, 3.5}, {3, 1, 3.5}};
  for (int k = 0; k < 8; ++k) {
    EXPECT_DOUBLE_EQ(c[k].x, expect[k][0]) << k;
    EXPECT_DOUBLE_EQ(c[k].y, expect[k][1]) << k;
    EXPECT_DOUBLE_EQ(c[k].z, expect[k][2]) << k;
  }
}

TEST(BoxToCorners, QuarterTurnSwapsAxes) {
  const Box3D b{0, 0, 0, 4.0, 2.0, 1.0, kPi / 2};
  const auto c = box_to_corners(b);
  EXPECT_NEAR(c[0].x, -1.0, 1e-12);
  EXPECT_NEAR(c[0].y, 2.0, 1e-12);
}

TEST(CornersToBox, RoundTripsRandomBoxes) {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const Box3D b = oracle::random_box3d(rng, 30.0);
    const Box3D r = corners_to_box(box_to_corners(b));
    EXPECT_NEAR(r.cx, b.cx, 1e-9);
    EXPECT_NEAR(r.cy, b.cy, 1e-9);
    EXPECT_NEAR(r.cz, b.cz, 1e-9);
    EXPECT_NEAR(r.l, b.l, 1e-9);
    EXPECT_NEAR(r.w, b.w, 1e-9);
    EXPECT_NEAR(r.h, b.h, 1e-9);
    EXPECT_NEAR(std::abs(normalize_yaw(r.yaw - b.yaw)), 0.0, 1e-9);
  }
}

TEST(CornersToBox, NoisyCornersStayClose) {
  Rng rng(6);
  const Box3D b{10.0, -3.0, -0.9, 3.9, 1.6, 1.56, 0.7};
  const double sigma = 0.01;
  double worst_center = 0.0, worst_yaw = 0.0;
  for (int t = 0; t < 500; ++t) {
    auto c = box_to_corners(b);
    for (auto& p : c) p = p + Vec3{normal(rng, 0, sigma), normal(rng, 0, sigma), normal(rng, 0, sigma)};
    const Box3D r = corners_to_box(c);
    worst_center = std::max(worst_center, std::hypot(r.cx - b.cx, r.cy - b.cy, r.cz - b.cz));
    worst_yaw = std::max(worst_yaw, std::abs(normalize_yaw(r.yaw - b.yaw)));
  }
  // Averaging eight corners shrinks the noise; 5 sigma is far outside the
  // plausible range of a correct fit.
  EXPECT_LT(worst_center, 5 * sigma);
  EXPECT_LT(worst_yaw, 0.05);
}

TEST(CornersToBox, CollapsedCornersAreDegenerate) {
  Corners3D c{};
  try {
    corners_to_box(c);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate);
  }
}

TEST(IouBev, IdenticalBoxesGiveExactlyOne) {
  const BevBox a{1.3, -2.1, 3.9, 1.6, 0.37};
  EXPECT_EQ(iou_bev(a, a), 1.0);
  const Box3D b{1.3, -2.1, 0.4, 3.9, 1.6, 1.5, 0.37};
  EXPECT_EQ(iou_3d(b, b), 1.0);
}

TEST(IouBev, HalfOverlapOfUnitSquares) {
  const BevBox a{0.0, 0.0, 2.0, 2.0, 0.0}, b{1.0, 0.0, 2.0, 2.0, 0.0};
  EXPECT_NEAR(iou_bev(a, b), 2.0 / 6.0, 1e-12);
}

TEST(IouBev, DisjointAndTouchingAreZero) {
  const BevBox a{0.0, 0.0, 2.0, 2.0, 0.0};
  EXPECT_EQ(iou_bev(a, {10.0, 0.0, 2.0, 2.0, 0.0}), 0.0);
  EXPECT_EQ(iou_bev(a, {2.0, 0.0, 2.0, 2.0, 0.0}), 0.0);
}

TEST(IouBev, SquareAgainstEighthTurnedCopy) {
  // A unit square rotated 45 degrees against itself: the overlap is a regular
  // octagon of area 2 (sqrt(2) - 1).
  const BevBox a{0, 0, 1, 1, 0}, b{0, 0, 1, 1, kPi / 4};
  const double inter = 2.0 * (std::sqrt(2.0) - 1.0);
  EXPECT_NEAR(iou_bev(a, b), inter / (2.0 - inter), 1e-12);
}

TEST(IouBev, SymmetricAndBounded) {
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const auto a = oracle::random_bev_box(rng), b = oracle::random_bev_box(rng);
    const double ab = iou_bev(a, b), ba = iou_bev(b, a);
    EXPECT_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(IouBev, MatchesRasterOracle) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto a = oracle::random_bev_box(rng), b = oracle::random_bev_box(rng);
    EXPECT_NEAR(iou_bev(a, b), oracle::raster_iou_bev(a, b), 1e-3);
  }
}

TEST(Iou3d, HalfHeightOverlap) {
  const Box3D a{0, 0, 0.0, 2, 2, 2, 0}, b{0, 0, 1.0, 2, 2, 2, 0};
  EXPECT_NEAR(iou_3d(a, b), 1.0 / 3.0, 1e-12);
  const Box3D c{0, 0, 2.0, 2, 2, 2, 0};
  EXPECT_EQ(iou_3d(a, c), 0.0);
}

TEST(Iou3d, MatchesVoxelOracle) {
  Rng rng(9);
  for (int i = 0; i < 30; ++i) {
    const auto a = oracle::random_box3d(rng), b = oracle::random_box3d(rng);
    EXPECT_NEAR(iou_3d(a, b), oracle::voxel_iou_3d(a, b), 2e-3);
  }
}

TEST(Iou3d, NeverExceedsBevIou) {
  Rng rng(10);
  for (int i = 0; i < 500; ++i) {
    const auto a = oracle::random_box3d(rng), b = oracle::random_box3d(rng);
    const double v = iou_3d(a, b);
    EXPECT_LE(v, 1.0);
    EXPECT_GE(v, 0.0);
    EXPECT_EQ(v, iou_3d(b, a));
  }
}

TEST(Iou2d, AxisAlignedBoxes) {
  EXPECT_NEAR(iou_2d({0, 0, 2, 2}, {1, 0, 3, 2}), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(iou_2d({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
}

TEST(ClipConvex, SquareAgainstShiftedSquare) {
  const std::vector<Vec2> a{{0, 0}, {2, 0}, {2, 2}, {0, 2}}, b{{1, 1}, {3, 1}, {3, 3}, {1, 3}};
  const auto c = clip_convex(a, b);
  EXPECT_NEAR(std::abs(signed_area(c)), 1.0, 1e-12);
}

TEST(NmsBev, SingleBoxKept) {
  const std::vector<BevBox> boxes{{0, 0, 1, 1, 0}};
  const std::vector<double> scores{0.3};
  EXPECT_EQ(nms_bev(boxes, scores, 0.7), std::vector<std::size_t>{0});
}

TEST(NmsBev, ThresholdIsStrict) {
  // IoU of these two is exactly 1/3.
  const std::vector<BevBox> boxes{{0, 0, 2, 2, 0}, {1, 0, 2, 2, 0}};
  const std::vector<double> scores{0.9, 0.8};
  EXPECT_EQ(nms_bev(boxes, scores, 0.5).size(), 2u);
  EXPECT_EQ(nms_bev(boxes, scores, 0.3), std::vector<std::size_t>{0});
}

TEST(NmsBev, MatchesBruteForce) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<BevBox> boxes;
    std::vector<double> scores;
    for (int i = 0; i < 60; ++i) {
      boxes.push_back(oracle::random_bev_box(rng, 4.0));
      scores.push_back(std::floor(uniform01(rng) * 20) / 20);  // plenty of ties
    }
    for (const double thr : {0.0, 0.05, 0.3, 0.7}) {
      const auto expect = oracle::brute_force_nms(boxes.size(), scores, thr,
                                                  [&](std::size_t i, std::size_t j) { return iou_bev(boxes[i], boxes[j]); });
      EXPECT_EQ(nms_bev(boxes, scores, thr), expect);
      const auto capped = nms_bev(boxes, scores, thr, 5);
      EXPECT_EQ(capped, std::vector<std::size_t>(expect.begin(), expect.begin() + std::min<std::size_t>(5, expect.size())));
    }
  }
}
