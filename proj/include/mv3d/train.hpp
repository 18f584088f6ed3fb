#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mv3d/autodiff.hpp"
#include "mv3d/error.hpp"
#include "mv3d/fusenet.hpp"
#include "mv3d/geom3d.hpp"
#include "mv3d/grid_io.hpp"
#include "mv3d/pipeline.hpp"
#include "mv3d/proposal.hpp"
#include "mv3d/rng.hpp"
#include "mv3d/roi.hpp"
#include "mv3d/scenegen.hpp"

namespace mv3d {

struct SgdParams {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int iterations = 50;
  std::uint64_t seed = 0;
  friend bool operator==(const SgdParams&, const SgdParams&) = default;
};

struct RoiSamplerConfig {
  std::size_t rois_per_batch = 128;
  double positive_fraction = 0.25;
  double positive_iou = 0.5;  // BEV IoU with the best-matching ground truth
  bool resample_each_iteration = false;
  friend bool operator==(const RoiSamplerConfig&, const RoiSamplerConfig&) = default;
};

/// Candidate ROIs of one frame with their labels, ready for sampling.
struct TrainingFrame {
  std::array<Tensor, 3> maps;
  std::vector<Box3D> gts;
  std::vector<Box3D> rois;
  std::vector<std::array<RoiRect, 3>> projections;
  std::vector<int> labels;      // 1 object, 0 background
  std::vector<int> matched_gt;  // best BEV-IoU ground truth, -1 if none

  std::size_t positives() const {
    std::size_t n = 0;
    for (const int l : labels) n += l > 0 ? 1 : 0;
    return n;
  }
};

/// Oracle-scored training-mode proposals projected into all three views.
/// Proposals whose projection misses a view are dropped.
inline TrainingFrame prepare_frame(const Scene& scene, const ViewGeometry& geom, const AnchorSet& anchors,
                                   const ProposalConfig& pcfg, const RoiSamplerConfig& scfg) {
  TrainingFrame f;
  f.maps = view_tensors(scene.cloud, scene.image, geom);
  f.gts = scene.boxes;
  std::vector<BevBox> gt_fp;
  for (const auto& g : f.gts) gt_fp.push_back(bev_footprint(g));
  const OracleScorer scorer(f.gts);
  for (const auto& p : generate_proposals(scene.cloud, anchors, scorer, ProposalMode::train, pcfg)) {
    auto proj = roi_project_all(p.box, geom);
    if (!proj) continue;
    const BevBox fp = bev_footprint(p.box);
    double best = 0.0;
    int match = -1;
    for (std::size_t g = 0; g < gt_fp.size(); ++g) {
      const double iou = iou_bev(fp, gt_fp[g]);
      if (iou > best) {
        best = iou;
        match = static_cast<int>(g);
      }
    }
    f.rois.push_back(p.box);
    f.projections.push_back(*proj);
    f.labels.push_back(match >= 0 && best >= scfg.positive_iou ? 1 : 0);
    f.matched_gt.push_back(match);
  }
  if (f.rois.empty()) fail(ErrorKind::empty_roi, "frame has no projectable proposals");
  return f;
}

/// Indices into frame.rois: up to fraction*batch positives, the rest
/// negatives. Short on positives, the batch is filled with negatives.
inline std::vector<std::size_t> sample_rois(const TrainingFrame& frame, const RoiSamplerConfig& cfg, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < frame.labels.size(); ++i) (frame.labels[i] > 0 ? pos : neg).push_back(i);
  auto take = [&](std::vector<std::size_t>& pool, std::size_t n, std::vector<std::size_t>& out) {
    n = std::min(n, pool.size());
    for (std::size_t k = 0; k < n; ++k) {
      std::swap(pool[k], pool[k + uniform_index(rng, pool.size() - k)]);
      out.push_back(pool[k]);
    }
  };
  const auto want_pos = static_cast<std::size_t>(std::llround(cfg.positive_fraction * static_cast<double>(cfg.rois_per_batch)));
  std::vector<std::size_t> batch;
  take(pos, want_pos, batch);
  take(neg, cfg.rois_per_batch - batch.size(), batch);
  return batch;
}

/// Box regression targets of a batch: [N x box_dim], zero rows for negatives.
inline Tensor batch_box_targets(const TrainingFrame& frame, std::span<const std::size_t> batch, BoxHead head) {
  const std::size_t dim = head == BoxHead::corners ? 24 : 6;
  Tensor t({batch.size(), dim});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const std::size_t i = batch[n];
    if (frame.labels[i] <= 0) continue;
    const Box3D& gt = frame.gts[static_cast<std::size_t>(frame.matched_gt[i])];
    if (head == BoxHead::corners) {
      const auto c = encode_corners(frame.rois[i], gt);
      for (std::size_t k = 0; k < 24; ++k) t(n, k) = c[k];
    } else {
      const auto c = encode_targets(frame.rois[i], gt).to_array();
      for (std::size_t k = 0; k < 6; ++k) t(n, k) = c[k];
    }
  }
  return t;
}

struct TrainResult {
  std::vector<double> loss_trace;  // loss before each update
};

/// Loss of one sampled batch; builds the whole graph into `g`.
inline Var batch_loss(Graph& g, FusionNet& net, const TrainingFrame& frame, std::span<const std::size_t> batch,
                      const DropMask* mask) {
  std::vector<std::array<RoiRect, 3>> rois;
  std::vector<int> labels;
  for (const std::size_t i : batch) {
    rois.push_back(frame.projections[i]);
    labels.push_back(frame.labels[i]);
  }
  const auto feats = net.frontend(g, {&frame.maps[0], &frame.maps[1], &frame.maps[2]});
  const auto pooled = net.pool(g, feats, rois);
  const auto [main, aux] = net.training_outputs(g, pooled, mask);
  const Tensor targets = batch_box_targets(frame, batch, net.config().box_head);
  return multitask_loss(g, main, aux, labels, targets, net.config().loss);
}

/// SGD with momentum over the frames in round-robin order. Deterministic for
/// a fixed seed.
inline TrainResult train_toy(FusionNet& net, std::span<const TrainingFrame> frames, const SgdParams& sgd,
                             const RoiSamplerConfig& sampler) {
  if (frames.empty()) fail(ErrorKind::contract, "train_toy: empty dataset");
  if (!(sgd.lr >= 0.0) || !(sgd.momentum >= 0.0) || sgd.iterations < 0) fail(ErrorKind::config, "invalid SGD parameters");
  Rng rng(sgd.seed);
  std::vector<std::vector<std::size_t>> batches;
  for (const auto& f : frames) batches.push_back(sample_rois(f, sampler, rng));
  std::map<std::string, Tensor> velocity;
  for (const auto& [name, p] : net.parameters()) velocity.emplace(name, Tensor(p.value.shape()));

  TrainResult result;
  for (int it = 0; it < sgd.iterations; ++it) {
    const std::size_t fi = static_cast<std::size_t>(it) % frames.size();
    if (sampler.resample_each_iteration && it >= static_cast<int>(frames.size())) batches[fi] = sample_rois(frames[fi], sampler, rng);
    std::optional<DropMask> mask;
    if (net.config().drop_path) mask = drop_path_sample(rng, net.config().num_joins());

    Graph g;
    const Var loss = batch_loss(g, net, frames[fi], batches[fi], mask ? &*mask : nullptr);
    const double value = g.value(loss).item();
    if (!std::isfinite(value)) fail(ErrorKind::divergence, "loss is not finite at iteration " + std::to_string(it));
    result.loss_trace.push_back(value);

    net.zero_grad();
    g.backward(loss);
    for (auto& [name, p] : net.parameters()) {
      auto v = velocity.at(name).values();
      auto w = p.value.values();
      const auto gr = p.grad.values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = sgd.momentum * v[i] - sgd.lr * (gr[i] + sgd.weight_decay * w[i]);
        w[i] += v[i];
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

/// Scores and regresses every proposal that projects into all views, then
/// applies the final BEV NMS. Proposals whose corners decode to a degenerate
/// box are dropped.
inline std::vector<ScoredBox> infer_frame(FusionNet& net, const std::array<Tensor, 3>& maps,
                                          std::span<const Proposal> proposals, const ViewGeometry& geom,
                                          double final_nms_iou = kFinalNmsIou) {
  std::vector<std::size_t> idx;
  std::vector<std::array<RoiRect, 3>> rois;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (auto proj = roi_project_all(proposals[i].box, geom)) {
      idx.push_back(i);
      rois.push_back(*proj);
    }
  }
  if (idx.empty()) return {};
  Graph g;
  const auto feats = net.frontend(g, {&maps[0], &maps[1], &maps[2]});
  const auto out = net.predict(g, net.pool(g, feats, rois));
  const Tensor& cls = g.value(out.cls);
  const Tensor& box = g.value(out.box);
  std::vector<ScoredBox> dets;
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const Box3D& p = proposals[idx[n]].box;
    const double score = softmax2(cls(n, 0), cls(n, 1))[1];
    std::array<double, 24> t{};
    for (std::size_t k = 0; k < box.dim(1); ++k) t[k] = box(n, k);
    try {
      Box3D b;
      if (net.config().box_head == BoxHead::corners) {
        b = corners_to_box(decode_corners(p, t));
      } else {
        const std::array<double, 6> cs{t[0], t[1], t[2], t[3], t[4], t[5]};
        b = decode_targets(p, RegressionTarget::from_array(cs));
      }
      dets.push_back({proposals[idx[n]].index, score, b});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::degenerate && e.kind() != ErrorKind::contract) throw;
    }
  }
  return final_nms(dets, final_nms_iou);
}

// ---------------------------------------------------------------------------
// Serialization

inline void write_parameters(const std::filesystem::path& base, const FusionNet& net, Json header = Json::object()) {
  std::vector<double> flat;
  Json entries = Json::array();
  for (const auto& [name, p] : net.parameters()) {
    entries.push_back({{"name", name}, {"shape", p.value.shape()}, {"offset", flat.size()}});
    flat.insert(flat.end(), p.value.values().begin(), p.value.values().end());
  }
  header["format"] = "mv3d-params";
  header["parameters"] = entries;
  write_flat_binary<double>(base, flat, header);
}

/// Loads values into an identically configured network.
inline void read_parameters(const std::filesystem::path& base, FusionNet& net) {
  Json header;
  const auto flat = read_flat_binary<double>(base, &header);
  if (header.value("format", std::string{}) != "mv3d-params") fail(ErrorKind::format, base.string() + ": not a parameter file");
  std::size_t seen = 0;
  for (const auto& e : header.at("parameters")) {
    Parameter& p = net.parameter(e.at("name").get<std::string>());
    const auto shape = e.at("shape").get<Tensor::Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    if (shape != p.value.shape() || offset + p.value.size() > flat.size()) {
      fail(ErrorKind::shape, base.string() + ": parameter " + e.at("name").get<std::string>() + " does not match the network");
    }
    std::copy(flat.begin() + static_cast<long>(offset), flat.begin() + static_cast<long>(offset + p.value.size()),
              p.value.values().begin());
    ++seen;
  }
  if (seen != net.parameters().size()) fail(ErrorKind::shape, base.string() + ": parameter count does not match the network");
}

inline void write_loss_trace(const std::filesystem::path& path, std::span<const double> trace) {
  std::string out = "iteration,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, trace[i]);
    out += buf;
  }
  detail::write_file_bytes(path, out);
}

}  // namespace mv3d
