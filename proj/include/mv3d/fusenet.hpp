#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mv3d/autodiff.hpp"
#include "mv3d/error.hpp"
#include "mv3d/geom3d.hpp"
#include "mv3d/proposal.hpp"
#include "mv3d/rng.hpp"
#include "mv3d/roi.hpp"
#include "mv3d/tensor.hpp"

namespace mv3d {

// ---------------------------------------------------------------------------
// Corner codec

/// 24 offsets laid out x0..x7, y0..y7, z0..z7, normalized by the proposal's
/// 3D diagonal.
using CornerTarget = std::array<double, 24>;

inline CornerTarget encode_corners(const Box3D& proposal, const Box3D& gt) {
  const auto pc = box_to_corners(proposal);
  const auto gc = box_to_corners(gt);
  const double d = proposal.diagonal();
  CornerTarget t{};
  for (std::size_t k = 0; k < 8; ++k) {
    t[k] = (gc[k].x - pc[k].x) / d;
    t[8 + k] = (gc[k].y - pc[k].y) / d;
    t[16 + k] = (gc[k].z - pc[k].z) / d;
  }
  return t;
}

inline Corners3D decode_corners(const Box3D& proposal, std::span<const double, 24> t) {
  auto c = box_to_corners(proposal);
  const double d = proposal.diagonal();
  for (std::size_t k = 0; k < 8; ++k) {
    c[k].x += t[k] * d;
    c[k].y += t[8 + k] * d;
    c[k].z += t[16 + k] * d;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Configuration

enum class FusionMode { early, late, deep };
enum class JoinOp { concat, mean };
enum class BoxHead { corners, center_size };

struct LossWeights {
  double cls = 1.0;
  double box = 1.0;
  double aux = 1.0;  // applied to each auxiliary path's multi-task loss
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct FusionConfig {
  FusionMode mode = FusionMode::deep;
  int layers = 2;
  std::vector<int> widths = {32, 32};  // one per layer
  std::optional<JoinOp> join;  // unset: concat for early/late, mean for deep
  bool drop_path = false;
  bool aux_losses = false;
  LossWeights loss;
  BoxHead box_head = BoxHead::corners;
  int frontend_channels = 4;  // 0 feeds raw view channels to ROI pooling
  int frontend_kernel = 1;
  int pool_h = 2, pool_w = 2;
  int num_classes = 2;

  JoinOp effective_join() const { return join.value_or(mode == FusionMode::deep ? JoinOp::mean : JoinOp::concat); }

  std::size_t box_dim() const { return box_head == BoxHead::corners ? 24 : 6; }

  /// Join nodes in the fusion graph: one for early and late, L+1 for deep.
  std::size_t num_joins() const { return mode == FusionMode::deep ? static_cast<std::size_t>(layers) + 1 : 1; }

  void validate() const {
    if (layers < 1) fail(ErrorKind::config, "fusion needs at least one layer");
    if (widths.size() != static_cast<std::size_t>(layers)) fail(ErrorKind::config, "fusion widths must list one width per layer");
    for (const int w : widths)
      if (w < 1) fail(ErrorKind::config, "fusion widths must be positive");
    if ((drop_path || aux_losses) && effective_join() != JoinOp::mean) {
      fail(ErrorKind::config, "drop-path and auxiliary losses need the mean join");
    }
    if (frontend_channels < 0 || (frontend_channels > 0 && (frontend_kernel < 1 || frontend_kernel % 2 == 0))) {
      fail(ErrorKind::config, "frontend kernel must be odd and positive");
    }
    if (pool_h < 1 || pool_w < 1 || num_classes < 2) fail(ErrorKind::config, "invalid pooling size or class count");
  }

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

// ---------------------------------------------------------------------------
// Drop-path

struct DropMask {
  std::vector<std::array<bool, 3>> alive;  // [join][view]
  bool global = false;
  int global_view = -1;

  static DropMask all_alive(std::size_t joins) { return {std::vector<std::array<bool, 3>>(joins, {true, true, true}), false, -1}; }

  bool valid() const {
    for (const auto& j : alive)
      if (!(j[0] || j[1] || j[2])) return false;
    return true;
  }
};

inline DropMask global_drop_mask(std::size_t joins, int view) {
  DropMask m{std::vector<std::array<bool, 3>>(joins, {false, false, false}), true, view};
  for (auto& j : m.alive) j[static_cast<std::size_t>(view)] = true;
  return m;
}

/// With probability 1/2 keeps a single uniformly chosen view at every join;
/// otherwise drops each join input independently with probability 1/2,
/// resampling a join until at least one input survives.
inline DropMask drop_path_sample(Rng& rng, std::size_t joins) {
  if (coin(rng)) return global_drop_mask(joins, static_cast<int>(uniform_index(rng, 3)));
  DropMask m{std::vector<std::array<bool, 3>>(joins), false, -1};
  for (auto& j : m.alive) {
    do {
      for (bool& a : j) a = coin(rng);
    } while (!(j[0] || j[1] || j[2]));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Network

struct HeadOutputs {
  Var cls;  // [N x classes] logits
  Var box;  // [N x box_dim]
};

/// The region-based fusion network: per-view front-end convolution, ROI
/// pooling, an early/late/deep fusion trunk of fully connected blocks, and
/// classification plus box regression heads. Auxiliary paths reuse the
/// main network's layers.
class FusionNet {
 public:
  FusionNet(FusionConfig cfg, std::array<std::size_t, 3> view_channels, std::uint64_t init_seed)
      : cfg_(std::move(cfg)), view_channels_(view_channels) {
    cfg_.validate();
    Rng rng(init_seed);
    const auto pool = static_cast<std::size_t>(cfg_.pool_h * cfg_.pool_w);
    for (const View v : kViews) {
      const auto vi = static_cast<std::size_t>(v);
      if (cfg_.frontend_channels > 0) {
        const auto k = static_cast<std::size_t>(cfg_.frontend_kernel);
        const auto oc = static_cast<std::size_t>(cfg_.frontend_channels);
        add_param(frontend_name(v, "weight"), {oc, view_channels_[vi], k, k}, view_channels_[vi] * k * k, oc * k * k, rng);
        add_param(frontend_name(v, "bias"), {oc}, 0, 0, rng);
        input_dims_[vi] = oc * pool;
      } else {
        input_dims_[vi] = view_channels_[vi] * pool;
      }
    }

    const auto width = [&](int l) { return static_cast<std::size_t>(cfg_.widths[static_cast<std::size_t>(l)]); };
    std::array<std::size_t, 3> in = input_dims_;
    switch (cfg_.mode) {
      case FusionMode::early: {
        std::size_t d = join_dim(in);
        for (int l = 0; l < cfg_.layers; ++l) {
          add_linear(layer_name("trunk", l), d, width(l), rng);
          d = width(l);
        }
        output_dim_ = d;
        break;
      }
      case FusionMode::late: {
        for (const View v : kViews) {
          std::size_t d = in[static_cast<std::size_t>(v)];
          for (int l = 0; l < cfg_.layers; ++l) {
            add_linear(layer_name(std::string(view_name(v)), l), d, width(l), rng);
            d = width(l);
          }
        }
        const std::size_t w = width(cfg_.layers - 1);
        output_dim_ = join_dim({w, w, w});
        break;
      }
      case FusionMode::deep: {
        std::size_t d = join_dim(in);
        for (int l = 0; l < cfg_.layers; ++l) {
          for (const View v : kViews) add_linear(layer_name(std::string(view_name(v)), l), d, width(l), rng);
          d = join_dim({width(l), width(l), width(l)});
        }
        output_dim_ = d;
        break;
      }
    }
    add_linear("cls", output_dim_, static_cast<std::size_t>(cfg_.num_classes), rng);
    add_linear("box", output_dim_, cfg_.box_dim(), rng);
  }

  const FusionConfig& config() const { return cfg_; }
  std::map<std::string, Parameter>& parameters() { return params_; }
  const std::map<std::string, Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorKind::contract, "no parameter named " + name);
    return it->second;
  }
  const std::array<std::size_t, 3>& view_channels() const { return view_channels_; }
  /// Width of the pooled feature vector of each view.
  const std::array<std::size_t, 3>& input_dims() const { return input_dims_; }
  std::size_t output_dim() const { return output_dim_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  // -------------------------------------------------------------------------

  /// Front-end feature maps for each view. Inputs are [C_v x H_v x W_v].
  std::array<Var, 3> frontend(Graph& g, const std::array<const Tensor*, 3>& maps) {
    std::array<Var, 3> out;
    for (const View v : kViews) {
      const auto vi = static_cast<std::size_t>(v);
      Var x = g.constant(*maps[vi]);
      if (cfg_.frontend_channels > 0) {
        x = g.relu(g.conv2d(x, g.parameter(parameter(frontend_name(v, "weight"))),
                            g.parameter(parameter(frontend_name(v, "bias")))));
      }
      out[vi] = x;
    }
    return out;
  }

  /// ROI-pooled rows per view: [N x input_dim].
  std::array<Var, 3> pool(Graph& g, const std::array<Var, 3>& features, std::span<const std::array<RoiRect, 3>> rois) {
    std::array<Var, 3> out;
    std::vector<RoiRect> per_view(rois.size());
    for (const View v : kViews) {
      const auto vi = static_cast<std::size_t>(v);
      for (std::size_t n = 0; n < rois.size(); ++n) per_view[n] = rois[n][vi];
      out[vi] = g.roi_pool_rows(features[vi], per_view, static_cast<std::size_t>(cfg_.pool_h),
                                static_cast<std::size_t>(cfg_.pool_w));
    }
    return out;
  }

  /// The fusion trunk on pooled features. `mask` (training only) selects the
  /// live inputs of each join; null keeps every path.
  Var fusion_forward(Graph& g, const std::array<Var, 3>& f, const DropMask* mask = nullptr) {
    if (mask) {
      if (mask->alive.size() != cfg_.num_joins()) fail(ErrorKind::contract, "drop mask has the wrong number of joins");
      if (!mask->valid()) fail(ErrorKind::contract, "drop mask leaves a join with no live input");
      if (cfg_.effective_join() != JoinOp::mean) {
        for (const auto& j : mask->alive)
          if (!(j[0] && j[1] && j[2])) fail(ErrorKind::config, "drop-path needs the mean join");
      }
    }
    auto join_at = [&](std::size_t j, const std::array<Var, 3>& xs) {
      std::vector<Var> live;
      for (std::size_t v = 0; v < 3; ++v)
        if (!mask || mask->alive[j][v]) live.push_back(xs[v]);
      return cfg_.effective_join() == JoinOp::mean ? g.mean_of(live) : g.concat_cols(live);
    };

    switch (cfg_.mode) {
      case FusionMode::early: {
        Var x = join_at(0, f);
        for (int l = 0; l < cfg_.layers; ++l) x = block(g, layer_name("trunk", l), x);
        return x;
      }
      case FusionMode::late: {
        std::array<Var, 3> paths = f;
        for (const View v : kViews) {
          const auto vi = static_cast<std::size_t>(v);
          for (int l = 0; l < cfg_.layers; ++l) paths[vi] = block(g, layer_name(std::string(view_name(v)), l), paths[vi]);
        }
        return join_at(0, paths);
      }
      case FusionMode::deep: {
        Var x = join_at(0, f);
        for (int l = 0; l < cfg_.layers; ++l) {
          std::array<Var, 3> branch;
          for (const View v : kViews) {
            const auto vi = static_cast<std::size_t>(v);
            // Dropped branches are never evaluated.
            branch[vi] = (!mask || mask->alive[static_cast<std::size_t>(l) + 1][vi])
                             ? block(g, layer_name(std::string(view_name(v)), l), x)
                             : x;
          }
          x = join_at(static_cast<std::size_t>(l) + 1, branch);
        }
        return x;
      }
    }
    fail(ErrorKind::contract, "unknown fusion mode");
  }

  /// The single-view subnetwork through the shared layers. Requires the mean
  /// join so its width matches the fused trunk.
  Var single_view_forward(Graph& g, View v, Var f) {
    if (cfg_.effective_join() != JoinOp::mean) fail(ErrorKind::config, "single-view paths need the mean join");
    Var x = f;
    const std::string prefix = cfg_.mode == FusionMode::early ? "trunk" : std::string(view_name(v));
    for (int l = 0; l < cfg_.layers; ++l) x = block(g, layer_name(prefix, l), x);
    return x;
  }

  HeadOutputs heads(Graph& g, Var fused) {
    return {g.linear(fused, g.parameter(parameter("cls.weight")), g.parameter(parameter("cls.bias"))),
            g.linear(fused, g.parameter(parameter("box.weight")), g.parameter(parameter("box.bias")))};
  }

  /// Inference output: all paths live, no auxiliary paths.
  HeadOutputs predict(Graph& g, const std::array<Var, 3>& f) { return heads(g, fusion_forward(g, f, nullptr)); }

  /// Main output (under `mask`) plus, when enabled, one auxiliary output per
  /// view.
  std::pair<HeadOutputs, std::vector<HeadOutputs>> training_outputs(Graph& g, const std::array<Var, 3>& f,
                                                                    const DropMask* mask) {
    HeadOutputs main = heads(g, fusion_forward(g, f, mask));
    std::vector<HeadOutputs> aux;
    if (cfg_.aux_losses) {
      for (const View v : kViews) aux.push_back(heads(g, single_view_forward(g, v, f[static_cast<std::size_t>(v)])));
    }
    return {main, aux};
  }

 private:
  static std::string frontend_name(View v, const char* what) { return "frontend." + std::string(view_name(v)) + "." + what; }
  static std::string layer_name(const std::string& prefix, int l) { return prefix + ".h" + std::to_string(l + 1); }

  std::size_t join_dim(const std::array<std::size_t, 3>& dims) const {
    if (cfg_.effective_join() == JoinOp::concat) return dims[0] + dims[1] + dims[2];
    if (dims[0] != dims[1] || dims[0] != dims[2]) fail(ErrorKind::config, "mean join needs equal view widths");
    return dims[0];
  }

  Var block(Graph& g, const std::string& name, Var x) {
    return g.relu(g.linear(x, g.parameter(parameter(name + ".weight")), g.parameter(parameter(name + ".bias"))));
  }

  void add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    add_param(name + ".weight", {out, in}, in, out, rng);
    add_param(name + ".bias", {out}, 0, 0, rng);
  }

  // Glorot-uniform weights; zero biases (fan_in == 0).
  void add_param(const std::string& name, Tensor::Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor t(std::move(shape));
    if (fan_in > 0) {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (double& v : t.values()) v = uniform(rng, -a, a);
    }
    params_.emplace(name, Parameter(std::move(t)));
  }

  FusionConfig cfg_;
  std::array<std::size_t, 3> view_channels_;
  std::array<std::size_t, 3> input_dims_{};
  std::size_t output_dim_ = 0;
  std::map<std::string, Parameter> params_;
};

// ---------------------------------------------------------------------------
// Losses

/// Classification cross-entropy (mean over ROIs) plus smooth-l1 box loss on
/// positive ROIs (summed, divided by the ROI count), for the main output and
/// every auxiliary output. All auxiliary paths share `weights.aux`.
inline Var multitask_loss(Graph& g, const HeadOutputs& main, std::span<const HeadOutputs> aux, std::span<const int> labels,
                          const Tensor& box_targets, const LossWeights& weights) {
  const std::size_t n = labels.size();
  if (n == 0) fail(ErrorKind::shape, "multitask_loss: empty batch");
  std::vector<double> positive(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) positive[i] = labels[i] > 0 ? 1.0 : 0.0;

  auto one = [&](const HeadOutputs& out) {
    const Tensor& box = g.value(out.box);
    if (g.value(out.cls).dim(0) != n || box.shape() != box_targets.shape()) {
      fail(ErrorKind::shape, "multitask_loss: outputs do not match labels/targets");
    }
    Var cls = g.scale(g.softmax_cross_entropy(out.cls, labels), weights.cls);
    Var reg = g.scale(g.smooth_l1_loss(out.box, box_targets, positive, static_cast<double>(n)), weights.box);
    return g.add(cls, reg);
  };

  Var total = one(main);
  for (const auto& a : aux) total = g.add(total, g.scale(one(a), weights.aux));
  return total;
}

// ---------------------------------------------------------------------------
// Post-processing

inline constexpr double kFinalNmsIou = 0.05;

/// Greedy NMS on the ground-plane footprints of final detections.
inline std::vector<ScoredBox> final_nms(std::span<const ScoredBox> detections, double iou_threshold = kFinalNmsIou) {
  std::vector<BevBox> fp;
  std::vector<double> scores;
  for (const auto& d : detections) {
    fp.push_back(bev_footprint(d.box));
    scores.push_back(d.score);
  }
  std::vector<ScoredBox> out;
  for (const std::size_t k : nms_bev(fp, scores, iou_threshold)) out.push_back(detections[k]);
  return out;
}

inline std::array<double, 2> softmax2(double a, double b) {
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  return {ea / (ea + eb), eb / (ea + eb)};
}

}  // namespace mv3d
