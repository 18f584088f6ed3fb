// mv3d: synthetic data, view encoding, proposals, toy training, inference,
// evaluation and gradient checks from one configuration document.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mv3d/mv3d.hpp"

namespace fs = std::filesystem;
using namespace mv3d;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
};

RunConfig effective_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (!c.data.empty()) cfg.data = c.data;
  if (cfg.out.empty()) fail(ErrorKind::config, "no output directory (--out)");
  cfg.validate();
  fs::create_directories(cfg.out);
  save_run_config(fs::path(cfg.out) / "config.json", cfg);
  return cfg;
}

fs::path require_data(const RunConfig& cfg) {
  if (cfg.data.empty()) fail(ErrorKind::config, "no input data directory (--data)");
  return cfg.data;
}

void write_json(const fs::path& path, const Json& j) { detail::write_file_bytes(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------

void run_synth(const RunConfig& cfg) {
  const fs::path root = cfg.out;
  for (int i = 0; i < cfg.num_scenes; ++i) {
    SceneSpec spec = cfg.scene;
    spec.seed = scene_seed(cfg.seed, static_cast<std::uint64_t>(i));
    write_scene(root, frame_name(static_cast<std::size_t>(i)), generate_scene(spec));
  }
  std::cout << "wrote " << cfg.num_scenes << " scenes to " << root.string() << "\n";
}

void run_encode(const RunConfig& cfg, const std::string& input) {
  std::vector<std::pair<std::string, fs::path>> clouds;
  const fs::path in = input.empty() ? require_data(cfg) : fs::path(input);
  if (fs::is_regular_file(in)) {
    clouds.emplace_back(in.stem().string(), in);
  } else {
    for (const auto& name : list_frames(in)) clouds.emplace_back(name, frame_paths(in, name).velodyne);
  }
  const fs::path out = cfg.out;
  for (const auto& [name, path] : clouds) {
    const PointCloud pc = read_velodyne(path);
    const auto bev = encode_bev(pc, cfg.bev);
    const auto fv = encode_front_view(pc, cfg.front_view);
    write_grid(out / "bev" / name, bev.grid, bev_header(cfg.bev));
    write_grid(out / "fv" / name, fv.grid, front_view_header(cfg.front_view, fv.dropped));
  }
  std::cout << "encoded " << clouds.size() << " frames\n";
}

void run_propose(const RunConfig& cfg, const std::string& mode_name) {
  const fs::path data = require_data(cfg);
  const ProposalMode mode = mode_name == "train" ? ProposalMode::train : ProposalMode::test;
  if (mode_name != "train" && mode_name != "test") fail(ErrorKind::config, "proposal mode must be train or test");
  const AnchorSet anchors = build_anchors(cfg.bev, cfg.anchors);
  const auto frames = list_frames(data);
  for (const auto& name : frames) {
    const Scene s = read_scene(data, name);
    const OracleScorer scorer(s.boxes);
    const auto props = generate_proposals(s.cloud, anchors, scorer, mode, cfg.proposals);
    write_box_csv(fs::path(cfg.out) / "proposals" / (name + ".csv"), props);
  }
  std::cout << "proposed boxes for " << frames.size() << " frames\n";
}

void run_train(const RunConfig& cfg) {
  const fs::path data = require_data(cfg);
  const ViewGeometry geom = cfg.geometry();
  const AnchorSet anchors = build_anchors(cfg.bev, cfg.anchors);
  std::vector<TrainingFrame> frames;
  for (const auto& name : list_frames(data)) frames.push_back(prepare_frame(read_scene(data, name), geom, anchors, cfg.proposals, cfg.sampler));
  FusionNet net(cfg.fusion, view_channels(cfg.geometry()), cfg.seed);
  SgdParams sgd = cfg.sgd;
  const auto result = train_toy(net, frames, sgd, cfg.sampler);
  write_parameters(fs::path(cfg.out) / "params", net, {{"config", Json(cfg.fusion)}});
  write_loss_trace(fs::path(cfg.out) / "loss_trace.csv", result.loss_trace);
  std::cout << "trained " << result.loss_trace.size() << " iterations";
  if (!result.loss_trace.empty()) std::printf(", loss %.6g -> %.6g", result.loss_trace.front(), result.loss_trace.back());
  std::cout << "\n";
}

void run_infer(const RunConfig& cfg, const std::string& params, const std::string& proposals) {
  const fs::path data = require_data(cfg);
  if (params.empty() || proposals.empty()) fail(ErrorKind::config, "infer needs --params and --proposals");
  const ViewGeometry geom = cfg.geometry();
  FusionNet net(cfg.fusion, view_channels(cfg.geometry()), cfg.seed);
  read_parameters(params, net);
  const auto frames = list_frames(data);
  for (const auto& name : frames) {
    const Scene s = read_scene(data, name);
    const auto props = read_box_csv(fs::path(proposals) / (name + ".csv"));
    std::vector<Proposal> top(props.begin(), props.begin() + static_cast<long>(std::min(props.size(), cfg.proposals.test_budget)));
    const auto dets = infer_frame(net, view_tensors(s.cloud, s.image, geom), top, geom, cfg.final_nms_iou);
    write_box_csv(fs::path(cfg.out) / "detections" / (name + ".csv"), dets);
  }
  std::cout << "inferred " << frames.size() << " frames\n";
}

void run_eval(const RunConfig& cfg, const std::string& detections, const std::string& proposals) {
  const fs::path data = require_data(cfg);
  if (detections.empty() && proposals.empty()) fail(ErrorKind::config, "eval needs --detections and/or --proposals");
  const Regime regime = parse_regime(cfg.eval.regime);
  const auto names = list_frames(data);
  Json summary = Json::array();

  if (!proposals.empty()) {
    for (const double thr : cfg.eval.recall_iou) {
      RecallCount total;
      for (const auto& name : names) {
        const Scene s = read_scene(data, name);
        const auto props = read_box_csv(fs::path(proposals) / (name + ".csv"));
        const auto rc = recall_count(props, s.boxes, thr, cfg.eval.recall_budget);
        total.matched += rc.matched;
        total.total += rc.total;
      }
      summary.push_back({{"metric", "recall_3d"}, {"threshold", thr}, {"budget", cfg.eval.recall_budget},
                         {"matched", total.matched}, {"total", total.total}, {"recall", total.ratio()}});
    }
  }

  if (!detections.empty()) {
    std::vector<EvalFrame> frames;
    for (const auto& name : names) {
      const Scene s = read_scene(data, name);
      EvalFrame f;
      f.id = name;
      f.gts = difficulty_filter(s.labels, s.calib, regime, cfg.eval.object_class);
      for (const auto& d : read_box_csv(fs::path(detections) / (name + ".csv"))) {
        const auto views = project_detection_views(d.box, s.calib, cfg.scene.image_width, cfg.scene.image_height);
        f.detections.push_back({d.box, views.image, d.score});
      }
      frames.push_back(std::move(f));
    }
    const std::array<std::pair<Matcher, double>, 3> metrics{
        {{Matcher::bev, cfg.eval.ap_iou_bev}, {Matcher::box3d, cfg.eval.ap_iou_3d}, {Matcher::image2d, cfg.eval.ap_iou_2d}}};
    for (const auto& [m, thr] : metrics) {
      const PrCurve curve = average_precision(frames, m, thr, cfg.eval.interp());
      write_pr_csv(fs::path(cfg.out) / ("pr_" + std::string(matcher_name(m)) + ".csv"), curve);
      summary.push_back(ap_summary(m, regime, thr, curve));
    }
  }
  write_json(fs::path(cfg.out) / "summary.json", summary);
  std::cout << summary.dump(2) << "\n";
}

int run_gradcheck(const RunConfig& cfg) {
  GradcheckOptions opt;
  opt.seed = cfg.seed + 1;
  Json report = Json::array();
  bool all = true;
  for (const auto& r : run_gradcheck_suites(opt)) {
    std::printf("%-24s %s  max_rel_error=%.3e points=%d resampled=%d\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                r.max_rel_error, r.points, r.resampled);
    report.push_back({{"suite", r.name}, {"passed", r.passed}, {"max_rel_error", r.max_rel_error}, {"points", r.points},
                      {"resampled", r.resampled}});
    all = all && r.passed;
  }
  write_json(fs::path(cfg.out) / "gradcheck.json", report);
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view 3D detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  std::uint64_t seed = 0;
  app.add_option("--config", common.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed overriding the configuration");
  app.add_option("--out", common.out, "Output directory");

  auto* synth = app.add_subcommand("synth", "Generate synthetic scenes in KITTI layout");
  auto* encode = app.add_subcommand("encode", "Encode point clouds into BEV and front-view grids");
  auto* propose = app.add_subcommand("propose", "Oracle-scored 3D proposals per frame");
  auto* train = app.add_subcommand("train-toy", "Train the fusion network on a small dataset");
  auto* infer = app.add_subcommand("infer", "Run the fusion network on proposals");
  auto* eval = app.add_subcommand("eval", "Recall and average precision");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");

  int num_scenes = -1;
  std::string input, mode = "test", params, proposals, detections;
  synth->add_option("--num-scenes", num_scenes, "Number of scenes");
  encode->add_option("--input", input, "Velodyne file or KITTI directory (defaults to --data)");
  for (auto* sub : {encode, propose, train, infer, eval}) sub->add_option("--data", common.data, "KITTI-layout input directory");
  propose->add_option("--mode", mode, "Proposal budget: train or test");
  infer->add_option("--params", params, "Parameter file base path (without extension)");
  infer->add_option("--proposals", proposals, "Directory of proposal CSVs");
  eval->add_option("--detections", detections, "Directory of detection CSVs");
  eval->add_option("--proposals", proposals, "Directory of proposal CSVs (for recall)");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) common.seed = seed;

  try {
    RunConfig cfg = effective_config(common);
    if (synth->parsed()) {
      if (num_scenes >= 0) {
        cfg.num_scenes = num_scenes;
        save_run_config(fs::path(cfg.out) / "config.json", cfg);
      }
      run_synth(cfg);
    } else if (encode->parsed()) {
      run_encode(cfg, input);
    } else if (propose->parsed()) {
      run_propose(cfg, mode);
    } else if (train->parsed()) {
      run_train(cfg);
    } else if (infer->parsed()) {
      run_infer(cfg, params, proposals);
    } else if (eval->parsed()) {
      run_eval(cfg, detections, proposals);
    } else if (gradcheck->parsed()) {
      return run_gradcheck(cfg);
    }
  } catch (const Error& e) {
    std::cerr << Json{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << Json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  }
  return 0;
}
