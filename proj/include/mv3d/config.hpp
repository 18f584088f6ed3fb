#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mv3d/error.hpp"
#include "mv3d/eval.hpp"
#include "mv3d/fusenet.hpp"
#include "mv3d/grid_io.hpp"
#include "mv3d/kitti_io.hpp"
#include "mv3d/proposal.hpp"
#include "mv3d/scenegen.hpp"
#include "mv3d/train.hpp"
#include "mv3d/view_encode.hpp"

namespace mv3d {

struct EvalConfig {
  std::vector<double> recall_iou = {0.25, 0.5};
  std::size_t recall_budget = 300;
  double ap_iou_bev = 0.7;
  double ap_iou_3d = 0.7;
  double ap_iou_2d = 0.7;
  std::string regime = "moderate";
  std::string interpolation = "11-point";  // or "all-point"
  std::string object_class = "Car";
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;

  Interpolation interp() const {
    if (interpolation == "11-point") return Interpolation::eleven_point;
    if (interpolation == "all-point") return Interpolation::all_point;
    fail(ErrorKind::config, "unknown AP interpolation '" + interpolation + "'");
  }
};

/// Every tunable of a run in one document.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data;  // KITTI-layout directory
  std::string out;
  int num_scenes = 20;
  SceneSpec scene;
  BevConfig bev;
  FrontViewConfig front_view;
  AnchorConfig anchors;
  AssignConfig assignment;
  ProposalConfig proposals;
  FusionConfig fusion;
  double final_nms_iou = kFinalNmsIou;
  SgdParams sgd;
  RoiSamplerConfig sampler;
  EvalConfig eval;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  ViewGeometry geometry() const {
    ViewGeometry g;
    g.bev = bev;
    g.front = front_view;
    g.image_width = scene.image_width;
    g.image_height = scene.image_height;
    return g;
  }

  void validate() const {
    scene.validate();
    bev.validate();
    front_view.validate();
    fusion.validate();
    eval.interp();
    parse_regime(eval.regime);
    if (num_scenes < 0) fail(ErrorKind::config, "num_scenes must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// JSON mapping. Each struct lists its fields once; the same list drives both
// directions.

namespace detail {

struct ToJson {
  Json& j;
  template <class T>
  void operator()(const char* key, const T& v) {
    j[key] = v;
  }
};

struct FromJson {
  const Json& j;
  std::string where;
  template <class T>
  void operator()(const char* key, T& v) {
    if (!j.contains(key)) return;
    try {
      v = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, where + "." + key + ": " + e.what());
    }
  }
};

}  // namespace detail

template <class F> void fields(PriorSize& t, F&& f) { f("l", t.l); f("w", t.w); }
template <class F> void fields(LossWeights& t, F&& f) { f("cls", t.cls); f("box", t.box); f("aux", t.aux); }
template <class F>
void fields(SceneSpec& t, F&& f) {
  f("seed", t.seed); f("num_objects", t.num_objects);
  f("length", t.length); f("width", t.width); f("height", t.height);
  f("size_jitter", t.size_jitter); f("yaw_jitter", t.yaw_jitter); f("free_yaw", t.free_yaw);
  f("ground_z", t.ground_z); f("points_per_object", t.points_per_object); f("clutter_points", t.clutter_points);
  f("ray_drop", t.ray_drop); f("ray_drop_probability", t.ray_drop_probability);
  f("x_min", t.x_min); f("x_max", t.x_max); f("max_bearing", t.max_bearing); f("min_gap", t.min_gap);
  f("max_retries", t.max_retries); f("image_width", t.image_width); f("image_height", t.image_height);
}
template <class F>
void fields(BevConfig& t, F&& f) {
  f("x_min", t.x_min); f("x_max", t.x_max); f("y_min", t.y_min); f("y_max", t.y_max);
  f("resolution", t.resolution); f("z_min", t.z_min); f("z_max", t.z_max); f("slices", t.slices);
}
template <class F>
void fields(FrontViewConfig& t, F&& f) {
  f("rows", t.rows); f("cols", t.cols); f("dtheta", t.dtheta); f("dphi", t.dphi);
  f("col_offset", t.col_offset); f("row_offset", t.row_offset);
}
template <class F>
void fields(AnchorConfig& t, F&& f) {
  f("stride", t.stride); f("priors", t.priors); f("height", t.height); f("rotate_90", t.rotate_90); f("ground_z", t.ground_z);
}
template <class F>
void fields(AssignConfig& t, F&& f) {
  f("positive_iou", t.positive_iou); f("negative_iou", t.negative_iou); f("force_best_match", t.force_best_match);
}
template <class F>
void fields(ProposalConfig& t, F&& f) {
  f("nms_iou", t.nms_iou); f("train_budget", t.train_budget); f("test_budget", t.test_budget);
}
template <class F>
void fields(SgdParams& t, F&& f) {
  f("lr", t.lr); f("momentum", t.momentum); f("weight_decay", t.weight_decay); f("iterations", t.iterations); f("seed", t.seed);
}
template <class F>
void fields(RoiSamplerConfig& t, F&& f) {
  f("rois_per_batch", t.rois_per_batch); f("positive_fraction", t.positive_fraction);
  f("positive_iou", t.positive_iou); f("resample_each_iteration", t.resample_each_iteration);
}
template <class F>
void fields(EvalConfig& t, F&& f) {
  f("recall_iou", t.recall_iou); f("recall_budget", t.recall_budget);
  f("ap_iou_bev", t.ap_iou_bev); f("ap_iou_3d", t.ap_iou_3d); f("ap_iou_2d", t.ap_iou_2d);
  f("regime", t.regime); f("interpolation", t.interpolation); f("object_class", t.object_class);
}
template <class F>
void fields(RunConfig& t, F&& f) {
  f("seed", t.seed); f("data", t.data); f("out", t.out); f("num_scenes", t.num_scenes);
  f("scene", t.scene); f("bev", t.bev); f("front_view", t.front_view); f("anchors", t.anchors);
  f("assignment", t.assignment); f("proposals", t.proposals); f("fusion", t.fusion);
  f("final_nms_iou", t.final_nms_iou); f("sgd", t.sgd); f("sampler", t.sampler); f("eval", t.eval);
}

#define MV3D_JSON_VIA_FIELDS(T)                                                  \
  inline void to_json(Json& j, const T& v) {                                     \
    j = Json::object();                                                          \
    fields(const_cast<T&>(v), detail::ToJson{j});                                \
  }                                                                              \
  inline void from_json(const Json& j, T& v) {                                   \
    if (!j.is_object()) fail(ErrorKind::config, #T ": expected a JSON object");  \
    fields(v, detail::FromJson{j, #T});                                          \
  }

MV3D_JSON_VIA_FIELDS(PriorSize)
MV3D_JSON_VIA_FIELDS(LossWeights)
MV3D_JSON_VIA_FIELDS(SceneSpec)
MV3D_JSON_VIA_FIELDS(BevConfig)
MV3D_JSON_VIA_FIELDS(FrontViewConfig)
MV3D_JSON_VIA_FIELDS(AnchorConfig)
MV3D_JSON_VIA_FIELDS(AssignConfig)
MV3D_JSON_VIA_FIELDS(ProposalConfig)
MV3D_JSON_VIA_FIELDS(SgdParams)
MV3D_JSON_VIA_FIELDS(RoiSamplerConfig)
MV3D_JSON_VIA_FIELDS(EvalConfig)

NLOHMANN_JSON_SERIALIZE_ENUM(FusionMode, {{FusionMode::early, "early"}, {FusionMode::late, "late"}, {FusionMode::deep, "deep"}})
NLOHMANN_JSON_SERIALIZE_ENUM(JoinOp, {{JoinOp::concat, "concat"}, {JoinOp::mean, "mean"}})
NLOHMANN_JSON_SERIALIZE_ENUM(BoxHead, {{BoxHead::corners, "corners"}, {BoxHead::center_size, "center_size"}})

// The effective join is written out so the echoed document has no implicit
// defaults.
inline void to_json(Json& j, const FusionConfig& c) {
  j = {{"mode", c.mode}, {"layers", c.layers}, {"widths", c.widths}, {"join", c.effective_join()},
       {"drop_path", c.drop_path}, {"aux_losses", c.aux_losses}, {"loss", c.loss}, {"box_head", c.box_head},
       {"frontend_channels", c.frontend_channels}, {"frontend_kernel", c.frontend_kernel},
       {"pool_h", c.pool_h}, {"pool_w", c.pool_w}, {"num_classes", c.num_classes}};
}

inline void from_json(const Json& j, FusionConfig& c) {
  if (!j.is_object()) fail(ErrorKind::config, "FusionConfig: expected a JSON object");
  detail::FromJson f{j, "FusionConfig"};
  auto enum_field = [&](const char* key, auto& v) {
    if (!j.contains(key)) return;
    const Json& given = j.at(key);
    const auto parsed = given.get<std::remove_reference_t<decltype(v)>>();
    if (!given.is_string() || given != Json(parsed)) {
      fail(ErrorKind::config, std::string("FusionConfig.") + key + ": unknown value " + given.dump());
    }
    v = parsed;
  };
  enum_field("mode", c.mode);
  enum_field("box_head", c.box_head);
  if (j.contains("join")) {
    JoinOp op = JoinOp::concat;
    enum_field("join", op);
    c.join = op;
  }
  f("layers", c.layers);
  f("widths", c.widths);
  f("drop_path", c.drop_path);
  f("aux_losses", c.aux_losses);
  f("loss", c.loss);
  f("frontend_channels", c.frontend_channels);
  f("frontend_kernel", c.frontend_kernel);
  f("pool_h", c.pool_h);
  f("pool_w", c.pool_w);
  f("num_classes", c.num_classes);
}

MV3D_JSON_VIA_FIELDS(RunConfig)

#undef MV3D_JSON_VIA_FIELDS

namespace detail {

/// Rejects keys that the schema does not know, so typos cannot silently fall
/// back to defaults.
inline void check_known_keys(const Json& given, const Json& canonical, const std::string& where) {
  if (!given.is_object() || !canonical.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    if (!canonical.contains(key)) fail(ErrorKind::config, "unknown config key " + where + key);
    check_known_keys(value, canonical.at(key), where + key + ".");
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j) {
  RunConfig cfg = j.get<RunConfig>();
  detail::check_known_keys(j, Json(cfg), "");
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = detail::read_file_bytes(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

inline void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  detail::write_file_bytes(path, Json(cfg).dump(2) + "\n");
}

}  // namespace mv3d
