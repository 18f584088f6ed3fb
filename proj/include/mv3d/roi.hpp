#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string_view>

#include "mv3d/autodiff.hpp"
#include "mv3d/error.hpp"
#include "mv3d/geom3d.hpp"
#include "mv3d/kitti_io.hpp"
#include "mv3d/proposal.hpp"
#include "mv3d/view_encode.hpp"

namespace mv3d {

enum class View { bev = 0, front = 1, rgb = 2 };

inline constexpr std::array<View, 3> kViews = {View::bev, View::front, View::rgb};

inline std::string_view view_name(View v) {
  switch (v) {
    case View::bev: return "bev";
    case View::front: return "fv";
    case View::rgb: return "rgb";
  }
  return "?";
}

/// Everything needed to map a sensor-frame box into each view's grid.
struct ViewGeometry {
  BevConfig bev;
  FrontViewConfig front;
  Calibration calib = Calibration::kitti_like();
  int image_width = 1242;
  int image_height = 375;
};

namespace detail {
inline RoiRect clamp_roi(double r0, double c0, double r1, double c1, long rows, long cols) {
  RoiRect roi{static_cast<long>(std::floor(r0)), static_cast<long>(std::floor(c0)),
              static_cast<long>(std::floor(r1)), static_cast<long>(std::floor(c1)), false};
  if (roi.r1 < 0 || roi.c1 < 0 || roi.r0 >= rows || roi.c0 >= cols) {
    fail(ErrorKind::empty_roi, "box projects outside the view");
  }
  const RoiRect raw = roi;
  roi.r0 = std::max(roi.r0, 0L);
  roi.c0 = std::max(roi.c0, 0L);
  roi.r1 = std::min(roi.r1, rows - 1);
  roi.c1 = std::min(roi.c1, cols - 1);
  roi.clamped = !(roi == raw);
  return roi;
}
}  // namespace detail

/// Projects a 3D box to an inclusive cell rectangle on one view, clamped to
/// the view extent. Throws ErrorKind::empty_roi when nothing is left.
inline RoiRect roi_project(const Box3D& box, View view, const ViewGeometry& geom) {
  switch (view) {
    case View::bev: {
      const auto e = footprint_extent(bev_footprint(box));
      const auto rows = cell_span(e.x0, e.x1, geom.bev.x_min, geom.bev.resolution);
      const auto cols = cell_span(e.y0, e.y1, geom.bev.y_min, geom.bev.resolution);
      if (rows.empty() || cols.empty()) fail(ErrorKind::empty_roi, "box has an empty BEV footprint");
      return detail::clamp_roi(static_cast<double>(rows.lo), static_cast<double>(cols.lo),
                               static_cast<double>(rows.hi), static_cast<double>(cols.hi),
                               static_cast<long>(geom.bev.rows()), static_cast<long>(geom.bev.cols()));
    }
    case View::front: {
      const auto corners = box_to_corners(box);
      double r0 = std::numeric_limits<double>::infinity(), c0 = r0;
      double r1 = -r0, c1 = -r0;
      bool any_ahead = false;
      for (const Vec3& p : corners) {
        any_ahead = any_ahead || p.x > 0.0;
        const auto fc = front_view_coords(p.x, p.y, p.z, geom.front);
        r0 = std::min(r0, static_cast<double>(fc.r + geom.front.row_offset));
        r1 = std::max(r1, static_cast<double>(fc.r + geom.front.row_offset));
        c0 = std::min(c0, static_cast<double>(fc.c + geom.front.col_offset));
        c1 = std::max(c1, static_cast<double>(fc.c + geom.front.col_offset));
      }
      if (!any_ahead) fail(ErrorKind::empty_roi, "box is behind the front-view sensor");
      return detail::clamp_roi(r0, c0, r1, c1, geom.front.rows, geom.front.cols);
    }
    case View::rgb: {
      const auto pts = project_to_image(box_to_corners(box), geom.calib);
      double u0 = std::numeric_limits<double>::infinity(), v0 = u0;
      double u1 = -u0, v1 = -u0;
      for (const auto& p : pts) {
        if (!p.in_front) fail(ErrorKind::empty_roi, "box is behind the camera");
        u0 = std::min(u0, p.u);
        u1 = std::max(u1, p.u);
        v0 = std::min(v0, p.v);
        v1 = std::max(v1, p.v);
      }
      return detail::clamp_roi(v0, u0, v1, u1, geom.image_height, geom.image_width);
    }
  }
  fail(ErrorKind::contract, "unknown view");
}

/// ROIs on all three views, or nothing if any view rejects the box.
inline std::optional<std::array<RoiRect, 3>> roi_project_all(const Box3D& box, const ViewGeometry& geom) {
  std::array<RoiRect, 3> out;
  try {
    for (const View v : kViews) out[static_cast<std::size_t>(v)] = roi_project(box, v, geom);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::empty_roi) return std::nullopt;
    throw;
  }
  return out;
}

}  // namespace mv3d
