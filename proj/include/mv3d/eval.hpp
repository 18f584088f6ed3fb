#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mv3d/box_csv.hpp"
#include "mv3d/error.hpp"
#include "mv3d/geom3d.hpp"
#include "mv3d/grid_io.hpp"
#include "mv3d/kitti_io.hpp"

namespace mv3d {

// ---------------------------------------------------------------------------
// Recall

struct RecallCount {
  std::size_t matched = 0;
  std::size_t total = 0;
  /// 1.0 when there is nothing to recall.
  double ratio() const { return total == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(total); }
};

/// Ground truths matched by the top-`budget` proposals at iou_3d >= threshold.
/// Proposals are visited by descending score; each takes the unmatched gt it
/// overlaps most.
inline RecallCount recall_count(std::span<const ScoredBox> proposals, std::span<const Box3D> gts, double iou_threshold,
                                std::size_t budget) {
  std::vector<double> scores;
  for (const auto& p : proposals) scores.push_back(p.score);
  const auto order = score_order(scores);
  std::vector<bool> used(gts.size(), false);
  RecallCount rc{0, gts.size()};
  for (std::size_t k = 0; k < order.size() && k < budget; ++k) {
    const Box3D& p = proposals[order[k]].box;
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double iou = iou_3d(p, gts[g]);
      if (iou >= best_iou && (best < 0 || iou > best_iou)) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      ++rc.matched;
    }
  }
  return rc;
}

inline double recall_3d(std::span<const ScoredBox> proposals, std::span<const Box3D> gts, double iou_threshold,
                        std::size_t budget) {
  return recall_count(proposals, gts, iou_threshold, budget).ratio();
}

// ---------------------------------------------------------------------------
// Difficulty regimes

enum class Regime { easy, moderate, hard };

inline std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::easy: return "easy";
    case Regime::moderate: return "moderate";
    case Regime::hard: return "hard";
  }
  return "?";
}

inline Regime parse_regime(std::string_view s) {
  if (s == "easy") return Regime::easy;
  if (s == "moderate") return Regime::moderate;
  if (s == "hard") return Regime::hard;
  fail(ErrorKind::config, "unknown difficulty regime '" + std::string(s) + "'");
}

struct RegimeLimits {
  double min_height;  // pixels
  int max_occlusion;
  double max_truncation;
};

/// KITTI devkit thresholds.
inline RegimeLimits regime_limits(Regime r) {
  switch (r) {
    case Regime::easy: return {40.0, 0, 0.15};
    case Regime::moderate: return {25.0, 1, 0.30};
    case Regime::hard: return {25.0, 2, 0.50};
  }
  fail(ErrorKind::contract, "unknown regime");
}

/// Evaluation ground truth. `box` is absent for DontCare regions.
struct EvalGroundTruth {
  std::optional<Box3D> box;
  Box2D image_box;
  bool ignored = false;
};

inline bool in_regime(const LabelRecord& rec, Regime r) {
  const RegimeLimits lim = regime_limits(r);
  return rec.bbox.height() >= lim.min_height && rec.occlusion <= lim.max_occlusion && rec.truncation <= lim.max_truncation;
}

/// Labels of `object_class` inside the regime are retained; everything else
/// (other regimes, other classes, DontCare) is kept as an ignored gt.
inline std::vector<EvalGroundTruth> difficulty_filter(std::span<const LabelRecord> labels, const Calibration& calib,
                                                      Regime regime, std::string_view object_class = "Car") {
  std::vector<EvalGroundTruth> out;
  for (const auto& rec : labels) {
    EvalGroundTruth g;
    g.image_box = rec.bbox;
    if (!rec.is_dont_care()) g.box = label_to_box3d(rec, calib);
    g.ignored = rec.is_dont_care() || rec.type != object_class || !in_regime(rec, regime);
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detection views

struct DetectionViews {
  BevBox bev;
  std::optional<Box2D> image;
};

inline DetectionViews project_detection_views(const Box3D& det, const Calibration& calib, double image_width = 1242,
                                              double image_height = 375) {
  return {bev_footprint(det), image_box(det, calib, image_width, image_height)};
}

// ---------------------------------------------------------------------------
// Average precision

enum class Matcher { bev, box3d, image2d };
enum class Interpolation { eleven_point, all_point };

inline std::string_view matcher_name(Matcher m) {
  switch (m) {
    case Matcher::bev: return "AP_loc";
    case Matcher::box3d: return "AP_3D";
    case Matcher::image2d: return "AP_2D";
  }
  return "?";
}

inline Matcher parse_matcher(std::string_view s) {
  if (s == "bev" || s == "loc") return Matcher::bev;
  if (s == "3d") return Matcher::box3d;
  if (s == "2d") return Matcher::image2d;
  fail(ErrorKind::config, "unknown matcher '" + std::string(s) + "'");
}

struct EvalDetection {
  Box3D box;
  std::optional<Box2D> image_box;
  double score = 0.0;
};

struct EvalFrame {
  std::string id;
  std::vector<EvalDetection> detections;
  std::vector<EvalGroundTruth> gts;
};

struct PrPoint {
  double recall;
  double precision;
};

struct PrCurve {
  std::vector<PrPoint> points;
  double ap = 0.0;
  std::size_t positives = 0;  // non-ignored gts
};

namespace detail {

inline double match_iou(Matcher m, const EvalDetection& d, const EvalGroundTruth& g) {
  switch (m) {
    case Matcher::bev: return g.box ? iou_bev(bev_footprint(d.box), bev_footprint(*g.box)) : 0.0;
    case Matcher::box3d: return g.box ? iou_3d(d.box, *g.box) : 0.0;
    case Matcher::image2d: return d.image_box ? iou_2d(*d.image_box, g.image_box) : 0.0;
  }
  return 0.0;
}

}  // namespace detail

inline double interpolated_ap(std::span<const PrPoint> pts, Interpolation interp) {
  if (pts.empty()) return 0.0;
  if (interp == Interpolation::eleven_point) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      double best = 0.0;
      for (const auto& p : pts)
        if (p.recall >= t) best = std::max(best, p.precision);
      ap += best;
    }
    return ap / 11.0;
  }
  // Area under the monotone precision envelope.
  std::vector<double> env(pts.size());
  double run = 0.0;
  for (std::size_t i = pts.size(); i-- > 0;) env[i] = run = std::max(run, pts[i].precision);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ap += (pts[i].recall - prev_recall) * env[i];
    prev_recall = pts[i].recall;
  }
  return ap;
}

/// Per frame, detections are visited by descending score and each takes the
/// unmatched retained gt it overlaps most at iou >= threshold. A detection
/// that only reaches an ignored gt is dropped from the sweep.
inline PrCurve average_precision(std::span<const EvalFrame> frames, Matcher matcher, double iou_threshold,
                                 Interpolation interp = Interpolation::eleven_point) {
  std::set<std::string> ids;
  struct Hit {
    double score;
    bool tp;
  };
  std::vector<Hit> hits;
  PrCurve curve;
  for (const auto& f : frames) {
    if (!ids.insert(f.id).second) fail(ErrorKind::contract, "duplicate frame id '" + f.id + "'");
    for (const auto& d : f.detections)
      if (!std::isfinite(d.score)) fail(ErrorKind::contract, "non-finite detection score in frame " + f.id);
    for (const auto& g : f.gts) curve.positives += g.ignored ? 0 : 1;
    std::vector<double> scores;
    for (const auto& d : f.detections) scores.push_back(d.score);
    std::vector<bool> used(f.gts.size(), false);
    for (const std::size_t di : score_order(scores)) {
      const auto& d = f.detections[di];
      int best = -1;
      double best_iou = 0.0;
      bool hits_ignored = false;
      for (std::size_t g = 0; g < f.gts.size(); ++g) {
        const double iou = detail::match_iou(matcher, d, f.gts[g]);
        if (iou < iou_threshold) continue;
        if (f.gts[g].ignored) {
          hits_ignored = true;
        } else if (!used[g] && (best < 0 || iou > best_iou)) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      if (best >= 0) {
        used[static_cast<std::size_t>(best)] = true;
        hits.push_back({d.score, true});
      } else if (!hits_ignored) {
        hits.push_back({d.score, false});
      }
    }
  }
  std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.score > b.score; });
  if (curve.positives == 0) return curve;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i].tp ? 1 : 0;
    curve.points.push_back({static_cast<double>(tp) / static_cast<double>(curve.positives),
                            static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  curve.ap = interpolated_ap(curve.points, interp);
  return curve;
}

// ---------------------------------------------------------------------------
// Output

inline void write_pr_csv(const std::filesystem::path& path, const PrCurve& curve) {
  std::string out = "recall,precision\n";
  char buf[96];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.recall, p.precision);
    out += buf;
  }
  detail::write_file_bytes(path, out);
}

inline Json ap_summary(Matcher m, Regime r, double threshold, const PrCurve& curve) {
  return {{"metric", std::string(matcher_name(m))},
          {"regime", std::string(regime_name(r))},
          {"threshold", threshold},
          {"AP", curve.ap}};
}

}  // namespace mv3d
