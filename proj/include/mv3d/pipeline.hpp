#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "mv3d/geom3d.hpp"
#include "mv3d/kitti_io.hpp"
#include "mv3d/proposal.hpp"
#include "mv3d/roi.hpp"
#include "mv3d/tensor.hpp"
#include "mv3d/view_encode.hpp"

namespace mv3d {

/// [C x H x W] grid as a double tensor.
inline Tensor grid_to_tensor(const Grid& g) {
  Tensor t({g.channels, g.rows, g.cols});
  for (std::size_t i = 0; i < g.data.size(); ++i) t[i] = static_cast<double>(g.data[i]);
  return t;
}

/// Interleaved RGB image as a [3 x H x W] tensor scaled to [0, 1].
inline Tensor image_to_tensor(const Image& img) {
  const auto h = static_cast<std::size_t>(img.height), w = static_cast<std::size_t>(img.width);
  Tensor t({3, h, w});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch)
        t(ch, r, c) = img.at(static_cast<int>(r), static_cast<int>(c), static_cast<int>(ch)) / 255.0;
  return t;
}

/// Network inputs for one frame, ordered as kViews. A frame without an
/// image gets a black image of the geometry's size.
inline std::array<Tensor, 3> view_tensors(const PointCloud& cloud, const Image& image, const ViewGeometry& geom) {
  Image img = image;
  if (img.width == 0 || img.height == 0) {
    img.width = geom.image_width;
    img.height = geom.image_height;
    img.rgb.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);
  }
  return {grid_to_tensor(encode_bev(cloud, geom.bev).grid), grid_to_tensor(encode_front_view(cloud, geom.front).grid),
          image_to_tensor(img)};
}

/// Channel counts of the three network inputs.
inline std::array<std::size_t, 3> view_channels(const ViewGeometry& geom) { return {geom.bev.channels(), 3, 3}; }

/// Anchors that survive empty-anchor removal for one point cloud.
inline std::vector<std::size_t> nonempty_anchors(const PointCloud& cloud, const AnchorSet& anchors) {
  const auto enc = encode_bev(cloud, anchors.bev);
  return filter_empty_anchors(anchors, integral_image(enc.occupancy));
}

/// Full proposal stage for one frame: empty-anchor filtering, scoring,
/// decoding, NMS and the top-of-budget cut.
inline std::vector<Proposal> generate_proposals(const PointCloud& cloud, const AnchorSet& anchors,
                                                const AnchorScorer& scorer, ProposalMode mode,
                                                const ProposalConfig& cfg) {
  const auto kept = nonempty_anchors(cloud, anchors);
  const auto scored = scorer.score(anchors, kept);
  return propose(anchors, kept, scored.scores, scored.targets, mode, cfg);
}

}  // namespace mv3d
