#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "mv3d/box_csv.hpp"
#include "mv3d/error.hpp"
#include "mv3d/geom3d.hpp"
#include "mv3d/view_encode.hpp"

namespace mv3d {

struct PriorSize {
  double l = 3.9, w = 1.6;
  friend bool operator==(const PriorSize&, const PriorSize&) = default;
};

struct AnchorConfig {
  double stride = 0.4;  // feature-map cell size: 4x the 0.1 m BEV resolution
  std::vector<PriorSize> priors = {{3.9, 1.6}, {1.0, 0.6}};
  double height = 1.56;
  bool rotate_90 = true;  // add a 90-degree copy of every prior
  double ground_z = -1.73;  // anchor boxes rest on this plane (road below the sensor)

  friend bool operator==(const AnchorConfig&, const AnchorConfig&) = default;
};

/// Prior boxes tiled over the BEV feature map. Flat index
/// ((row * feature_cols + col) * priors_per_location + prior).
struct AnchorSet {
  BevConfig bev;
  double stride = 0.0;
  std::size_t feature_rows = 0, feature_cols = 0, priors_per_location = 0;
  std::vector<Box3D> boxes;

  std::size_t size() const { return boxes.size(); }
};

inline AnchorSet build_anchors(const BevConfig& bev, const AnchorConfig& cfg) {
  bev.validate();
  const double ratio = cfg.stride / bev.resolution;
  if (!(cfg.stride > 0.0) || std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1.0) {
    fail(ErrorKind::config, "anchor stride must be a positive multiple of the BEV resolution");
  }
  const auto step = static_cast<std::size_t>(std::round(ratio));
  if (bev.rows() % step != 0 || bev.cols() % step != 0) {
    fail(ErrorKind::config, "BEV grid is not divisible by the anchor stride");
  }
  if (cfg.priors.empty() || !(cfg.height > 0.0)) fail(ErrorKind::config, "anchor priors must be non-empty with positive height");

  std::vector<std::pair<PriorSize, double>> shapes;
  for (const auto& p : cfg.priors) {
    if (!(p.l > 0.0 && p.w > 0.0)) fail(ErrorKind::config, "anchor prior sizes must be positive");
    shapes.push_back({p, 0.0});
    if (cfg.rotate_90) shapes.push_back({p, 0.5 * std::numbers::pi});
  }

  AnchorSet set;
  set.bev = bev;
  set.stride = cfg.stride;
  set.feature_rows = bev.rows() / step;
  set.feature_cols = bev.cols() / step;
  set.priors_per_location = shapes.size();
  set.boxes.reserve(set.feature_rows * set.feature_cols * shapes.size());
  const double cz = cfg.ground_z + 0.5 * cfg.height;
  for (std::size_t i = 0; i < set.feature_rows; ++i) {
    const double cx = bev.x_min + (static_cast<double>(i) + 0.5) * cfg.stride;
    for (std::size_t j = 0; j < set.feature_cols; ++j) {
      const double cy = bev.y_min + (static_cast<double>(j) + 0.5) * cfg.stride;
      for (const auto& [prior, yaw] : shapes) {
        set.boxes.push_back({cx, cy, cz, prior.l, prior.w, cfg.height, yaw});
      }
    }
  }
  return set;
}

/// Axis-aligned extent of a footprint.
struct BevExtent {
  double x0, x1, y0, y1;
};

inline BevExtent footprint_extent(const BevBox& b) {
  const auto fp = footprint_corners(b);
  BevExtent e{fp[0].x, fp[0].x, fp[0].y, fp[0].y};
  for (const auto& p : fp) {
    e.x0 = std::min(e.x0, p.x);
    e.x1 = std::max(e.x1, p.x);
    e.y0 = std::min(e.y0, p.y);
    e.y1 = std::max(e.y1, p.y);
  }
  return e;
}

/// BEV cells covered by the anchor's axis-aligned bounding rectangle
/// (unclipped; rows follow x, columns follow y).
struct CellRect {
  CellSpan rows, cols;
};

inline CellRect anchor_cell_rect(const Box3D& anchor, const BevConfig& bev) {
  const auto e = footprint_extent(bev_footprint(anchor));
  return {cell_span(e.x0, e.x1, bev.x_min, bev.resolution), cell_span(e.y0, e.y1, bev.y_min, bev.resolution)};
}

/// Anchors whose footprint rectangle contains at least one occupied cell.
inline std::vector<std::size_t> filter_empty_anchors(const AnchorSet& anchors, const SummedAreaTable& integral) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const auto rect = anchor_cell_rect(anchors.boxes[i], anchors.bev);
    if (integral.rect_sum(rect.rows.lo, rect.cols.lo, rect.rows.hi, rect.cols.hi) > 0) kept.push_back(i);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Center/size regression codec

struct RegressionTarget {
  double dx = 0.0, dy = 0.0, dz = 0.0;
  double dl = 0.0, dw = 0.0, dh = 0.0;

  std::array<double, 6> to_array() const { return {dx, dy, dz, dl, dw, dh}; }
  static RegressionTarget from_array(std::span<const double, 6> a) { return {a[0], a[1], a[2], a[3], a[4], a[5]}; }
  friend bool operator==(const RegressionTarget&, const RegressionTarget&) = default;
};

/// Offsets normalized by the anchor's length (x), width (y) and height (z);
/// sizes as log ratios.
inline RegressionTarget encode_targets(const Box3D& anchor, const Box3D& gt) {
  return {(gt.cx - anchor.cx) / anchor.l, (gt.cy - anchor.cy) / anchor.w, (gt.cz - anchor.cz) / anchor.h,
          std::log(gt.l / anchor.l),      std::log(gt.w / anchor.w),      std::log(gt.h / anchor.h)};
}

inline Box3D decode_targets(const Box3D& anchor, const RegressionTarget& t) {
  for (const double v : t.to_array()) {
    if (!std::isfinite(v)) fail(ErrorKind::contract, "decode_targets: non-finite regression target");
  }
  return {anchor.cx + t.dx * anchor.l, anchor.cy + t.dy * anchor.w, anchor.cz + t.dz * anchor.h,
          anchor.l * std::exp(t.dl),   anchor.w * std::exp(t.dw),   anchor.h * std::exp(t.dh),
          anchor.yaw};
}

// ---------------------------------------------------------------------------
// Training assignment

enum class AnchorLabel { negative = 0, positive = 1, ignore = 2 };

struct AssignConfig {
  double positive_iou = 0.7;  // strictly above -> positive
  double negative_iou = 0.5;  // strictly below -> negative
  bool force_best_match = true;

  friend bool operator==(const AssignConfig&, const AssignConfig&) = default;
};

struct AnchorAssignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> matched_gt;  // -1 when the anchor overlaps nothing
  std::vector<double> max_iou;

  /// Only positives carry a regression target.
  bool has_target(std::size_t i) const { return labels[i] == AnchorLabel::positive; }
};

inline AnchorAssignment assign_anchors(std::span<const Box3D> anchors, std::span<const BevBox> gts,
                                       const AssignConfig& cfg = {}) {
  const std::size_t n = anchors.size();
  AnchorAssignment out{std::vector<AnchorLabel>(n, AnchorLabel::negative), std::vector<int>(n, -1),
                       std::vector<double>(n, 0.0)};
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<std::vector<std::size_t>> gt_argbest(gts.size());

  for (std::size_t i = 0; i < n; ++i) {
    const BevBox a = bev_footprint(anchors[i]);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = iou_bev(a, gts[g]);
      if (iou <= 0.0) continue;
      if (iou > out.max_iou[i]) {
        out.max_iou[i] = iou;
        out.matched_gt[i] = static_cast<int>(g);
      }
      if (iou > gt_best[g]) {
        gt_best[g] = iou;
        gt_argbest[g].assign(1, i);
      } else if (iou == gt_best[g]) {
        gt_argbest[g].push_back(i);
      }
    }
    if (out.max_iou[i] > cfg.positive_iou) {
      out.labels[i] = AnchorLabel::positive;
    } else if (out.max_iou[i] >= cfg.negative_iou) {
      out.labels[i] = AnchorLabel::ignore;
    }
  }
  if (cfg.force_best_match) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      for (const std::size_t i : gt_argbest[g]) {
        out.labels[i] = AnchorLabel::positive;
        out.matched_gt[i] = static_cast<int>(g);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proposal generation

using Proposal = ScoredBox;

enum class ProposalMode { train, test };

struct ProposalConfig {
  double nms_iou = 0.7;
  std::size_t train_budget = 2000;
  std::size_t test_budget = 300;

  std::size_t budget(ProposalMode mode) const { return mode == ProposalMode::train ? train_budget : test_budget; }
  friend bool operator==(const ProposalConfig&, const ProposalConfig&) = default;
};

/// Decodes every kept anchor, runs greedy BEV NMS and keeps the top of the
/// budget. Output is sorted by descending score.
inline std::vector<Proposal> propose(const AnchorSet& anchors, std::span<const std::size_t> kept,
                                     std::span<const double> scores, std::span<const RegressionTarget> targets,
                                     ProposalMode mode, const ProposalConfig& cfg = {}) {
  if (kept.size() != scores.size() || kept.size() != targets.size()) {
    fail(ErrorKind::shape, "propose: kept anchors, scores and targets must align");
  }
  std::vector<Box3D> decoded(kept.size());
  std::vector<BevBox> footprints(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    if (!std::isfinite(scores[k])) fail(ErrorKind::contract, "propose: non-finite score");
    decoded[k] = decode_targets(anchors.boxes.at(kept[k]), targets[k]);
    footprints[k] = bev_footprint(decoded[k]);
  }
  const auto survivors = nms_bev(footprints, scores, cfg.nms_iou, cfg.budget(mode));
  std::vector<Proposal> out;
  out.reserve(survivors.size());
  for (const std::size_t k : survivors) out.push_back({kept[k], scores[k], decoded[k]});
  return out;
}

// ---------------------------------------------------------------------------
// Scorers

struct AnchorScores {
  std::vector<double> scores;
  std::vector<RegressionTarget> targets;
};

/// Supplies objectness scores and regression targets for non-empty anchors.
class AnchorScorer {
 public:
  virtual ~AnchorScorer() = default;
  virtual AnchorScores score(const AnchorSet& anchors, std::span<const std::size_t> kept) const = 0;
};

/// Ground-truth scorer: score is the best BEV IoU with any ground truth and
/// the target regresses onto that ground truth. Anchors touching nothing get
/// score 0 and a zero target.
class OracleScorer final : public AnchorScorer {
 public:
  explicit OracleScorer(std::vector<Box3D> gts) : gts_(std::move(gts)) {
    for (const auto& g : gts_) footprints_.push_back(bev_footprint(g));
  }

  AnchorScores score(const AnchorSet& anchors, std::span<const std::size_t> kept) const override {
    AnchorScores out{std::vector<double>(kept.size(), 0.0), std::vector<RegressionTarget>(kept.size())};
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const Box3D& a = anchors.boxes.at(kept[k]);
      const BevBox fa = bev_footprint(a);
      int best = -1;
      for (std::size_t g = 0; g < gts_.size(); ++g) {
        const double iou = iou_bev(fa, footprints_[g]);
        if (iou > out.scores[k]) {
          out.scores[k] = iou;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) out.targets[k] = encode_targets(a, gts_[static_cast<std::size_t>(best)]);
    }
    return out;
  }

 private:
  std::vector<Box3D> gts_;
  std::vector<BevBox> footprints_;
};

}  // namespace mv3d
