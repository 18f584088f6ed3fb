// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "mv3d/mv3d.hpp"
#include "oracles.hpp"

using namespace mv3d;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome density_exactness() {
  double err = 0.0;
  err = std::max(err, std::abs(density_feature(63) - 1.0));
  err = std::max(err, std::abs(density_feature(1) - 1.0 / 6.0));
  err = std::max(err, std::abs(density_feature(0) - 0.0));
  const bool boundary = density_feature(62) < 1.0 - 1e-12 && density_feature(63) == 1.0 && density_feature(64) == 1.0;
  bool monotone = true;
  for (std::size_t n = 1; n < 256; ++n) monotone = monotone && density_feature(n) >= density_feature(n - 1);

  // the encoded channel: an empty cell and a saturated cell
  PointCloud pc;
  for (int i = 0; i < 63; ++i) pc.points.push_back({10.05f, 0.05f, -1.0f + 0.01f * float(i), 0.5f});
  const auto enc = encode_bev(pc, BevConfig{});
  const std::size_t m = enc.grid.channels - 1;
  const bool grid_ok = enc.grid.at(m, 100, 400) == 1.0f && enc.grid.at(m, 101, 400) == 0.0f;
  return {err <= 1e-12 && boundary && monotone && grid_ok,
          "max_err=" + fmt("%.1e", err) + (boundary ? " boundary@63" : " boundary-wrong")};
}

Outcome grid_dimensions() {
  const auto bev = encode_bev(PointCloud{}, BevConfig{});
  const auto fv = encode_front_view(PointCloud{}, FrontViewConfig{});
  const bool ok = bev.grid.rows == 704 && bev.grid.cols == 800 && bev.grid.channels == 6 && fv.grid.rows == 64 &&
                  fv.grid.cols == 512 && fv.grid.channels == 3;
  return {ok, "bev " + std::to_string(bev.grid.rows) + "x" + std::to_string(bev.grid.cols) + ", fv " +
                  std::to_string(fv.grid.rows) + "x" + std::to_string(fv.grid.cols)};
}

Outcome iou_oracles() {
  Rng rng(2024);
  double bev_err = 0.0, err3 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = oracle::random_bev_box(rng), b = oracle::random_bev_box(rng);
    bev_err = std::max(bev_err, std::abs(iou_bev(a, b) - oracle::raster_iou_bev(a, b, 2000)));
  }
  for (int i = 0; i < 200; ++i) {
    const auto a = oracle::random_box3d(rng), b = oracle::random_box3d(rng);
    err3 = std::max(err3, std::abs(iou_3d(a, b) - oracle::voxel_iou_3d(a, b, 200)));
  }
  return {bev_err <= 1e-3 && err3 <= 2e-3, "bev max_err=" + fmt("%.2e", bev_err) + ", 3d max_err=" + fmt("%.2e", err3)};
}

Outcome codec_round_trips() {
  Rng rng(31337);
  double err_cs = 0.0, err_corner = 0.0;
  auto upd = [](double& e, const Box3D& d, const Box3D& g, bool yaw) {
    e = std::max({e, std::abs(d.cx - g.cx), std::abs(d.cy - g.cy), std::abs(d.cz - g.cz), std::abs(d.l - g.l),
                  std::abs(d.w - g.w), std::abs(d.h - g.h)});
    if (yaw) e = std::max(e, std::abs(normalize_yaw(d.yaw - g.yaw)));
  };
  for (int i = 0; i < 10000; ++i) {
    const Box3D a = oracle::random_box3d(rng, 30.0);
    Box3D g = oracle::random_box3d(rng, 30.0);
    g.yaw = a.yaw;  // the center/size codec carries no orientation
    upd(err_cs, decode_targets(a, encode_targets(a, g)), g, true);

    const Box3D p = oracle::random_box3d(rng, 30.0);
    const Box3D q = oracle::random_box3d(rng, 30.0);
    upd(err_corner, corners_to_box(decode_corners(p, encode_corners(p, q))), q, true);
  }
  return {err_cs <= 1e-9 && err_corner <= 1e-9,
          "center/size max_err=" + fmt("%.1e", err_cs) + ", corners max_err=" + fmt("%.1e", err_corner)};
}

Outcome integral_filtering() {
  const BevConfig bev;
  const auto anchors = build_anchors(bev, AnchorConfig{});
  Rng rng(77);
  int mismatched = 0;
  std::size_t kept_total = 0;
  for (int map = 0; map < 100; ++map) {
    const double density = std::pow(10.0, uniform(rng, -5.0, -1.5));
    OccupancyMap occ(bev.rows(), bev.cols());
    for (auto& c : occ.cells) c = coin(rng, density) ? 1 : 0;

    const auto fast = filter_empty_anchors(anchors, integral_image(occ));
    std::vector<std::size_t> brute;
    const long rows = long(occ.rows), cols = long(occ.cols);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const Box3D& a = anchors.boxes[i];
      // anchors are axis-aligned or quarter-turned: half extents along x and y
      const bool turned = std::abs(std::sin(a.yaw)) > 0.5;
      const double hx = 0.5 * (turned ? a.w : a.l), hy = 0.5 * (turned ? a.l : a.w);
      // cells whose open extent meets the open interval (c - h, c + h)
      const long r0 = std::max(0L, long(std::floor((a.cx - hx - bev.x_min) / bev.resolution + 1e-9)));
      const long r1 = std::min(rows - 1, long(std::ceil((a.cx + hx - bev.x_min) / bev.resolution - 1e-9)) - 1);
      const long c0 = std::max(0L, long(std::floor((a.cy - hy - bev.y_min) / bev.resolution + 1e-9)));
      const long c1 = std::min(cols - 1, long(std::ceil((a.cy + hy - bev.y_min) / bev.resolution - 1e-9)) - 1);
      bool hit = false;
      for (long r = r0; r <= r1 && !hit; ++r)
        for (long c = c0; c <= c1 && !hit; ++c) hit = occ.cells[std::size_t(r * cols + c)] != 0;
      if (hit) brute.push_back(i);
    }
    mismatched += fast == brute ? 0 : 1;
    kept_total += fast.size();
  }
  return {mismatched == 0, std::to_string(mismatched) + "/100 maps differ, " + std::to_string(kept_total) + " anchors kept"};
}

Outcome gradient_checks() {
  const auto results = run_gradcheck_suites();
  double worst = 0.0;
  int failed = 0;
  std::string names;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed || r.points != 20) {
      ++failed;
      names += " " + r.name;
    }
  }
  return {failed == 0 && worst < 1e-4 && results.size() >= 18,
          std::to_string(results.size()) + " suites, worst rel_err=" + fmt("%.2e", worst) + (failed ? ", failed:" + names : "")};
}

FusionConfig toy_config() {
  FusionConfig c;
  c.layers = 2;
  c.widths = {8, 8};
  c.frontend_channels = 0;
  return c;
}

Outcome fusion_degeneracies() {
  FusionNet net(toy_config(), {3, 3, 3}, 3);
  for (const char* view : {"fv", "rgb"}) {
    for (auto& [name, p] : net.parameters()) {
      const std::string prefix = std::string(view) + ".";
      if (name.rfind(prefix, 0) == 0) p.value = net.parameter("bev." + name.substr(prefix.size())).value;
    }
  }
  Rng rng(5);
  const std::size_t d = net.input_dims()[0];
  auto rows = [&] {
    Tensor t({16, d});
    for (double& v : t.values()) v = uniform(rng, -1.0, 1.0);
    return t;
  };
  double err = 0.0;
  {
    Graph g;
    const Var x = g.constant(rows());
    const Tensor a = g.value(net.fusion_forward(g, {x, x, x}));
    const Tensor b = g.value(net.single_view_forward(g, View::bev, x));
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
  }
  FusionNet fresh(toy_config(), {3, 3, 3}, 4);
  int identical = 0;
  for (const View v : kViews) {
    Graph g;
    const std::array<Var, 3> f{g.constant(rows()), g.constant(rows()), g.constant(rows())};
    const auto mask = global_drop_mask(fresh.config().num_joins(), int(v));
    const Tensor a = g.value(fresh.fusion_forward(g, f, &mask));
    const Tensor b = g.value(fresh.single_view_forward(g, v, f[std::size_t(v)]));
    identical += a == b ? 1 : 0;
  }
  return {err <= 1e-12 && identical == 3,
          "shared-path max_err=" + fmt("%.1e", err) + ", global drop-path bit-identical " + std::to_string(identical) + "/3"};
}

Outcome drop_path_statistics() {
  Rng rng(8);
  const int n = 100000;
  int globals = 0, violations = 0;
  std::array<int, 3> chosen{};
  for (int i = 0; i < n; ++i) {
    const auto m = drop_path_sample(rng, 3);
    violations += m.valid() ? 0 : 1;
    if (m.global) {
      ++globals;
      ++chosen[std::size_t(m.global_view)];
    }
  }
  const double g = double(globals) / n;
  double worst = 0.0;
  for (int c : chosen) worst = std::max(worst, std::abs(double(c) / globals - 1.0 / 3.0));
  return {std::abs(g - 0.5) <= 0.01 && worst <= 0.02 && violations == 0,
          "global=" + fmt("%.4f", g) + ", max view dev=" + fmt("%.4f", worst) + ", violations=" + std::to_string(violations)};
}

Outcome synthetic_recall() {
  const auto anchors = build_anchors(BevConfig{}, AnchorConfig{});
  std::size_t matched = 0, total = 0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    SceneSpec spec;
    spec.seed = scene_seed(7, i);
    const Scene s = generate_scene(spec);
    const auto props = generate_proposals(s.cloud, anchors, OracleScorer(s.boxes), ProposalMode::test, ProposalConfig{});
    const auto rc = recall_count(props, s.boxes, 0.5, 300);
    matched += rc.matched;
    total += rc.total;
  }
  return {total > 0 && matched == total, "recall@0.5 = " + std::to_string(matched) + "/" + std::to_string(total)};
}

Outcome metric_sanity() {
  // detections equal to the labels of generated scenes
  std::vector<EvalFrame> frames;
  for (std::uint64_t i = 0; i < 5; ++i) {
    SceneSpec spec;
    spec.seed = scene_seed(7, i);
    const Scene s = generate_scene(spec);
    EvalFrame f{frame_name(i), {}, difficulty_filter(s.labels, s.calib, Regime::moderate)};
    for (std::size_t k = 0; k < s.labels.size(); ++k) {
      const Box3D b = label_to_box3d(s.labels[k], s.calib);
      f.detections.push_back({b, s.labels[k].bbox, 1.0 - 0.01 * double(k)});
    }
    frames.push_back(f);
  }
  const double loc = average_precision(frames, Matcher::bev, 0.7).ap;
  const double ap3 = average_precision(frames, Matcher::box3d, 0.7).ap;
  const double ap2 = average_precision(frames, Matcher::image2d, 0.7).ap;

  // TP, FP, TP over two positives
  const Box3D c1{10, 0, -1, 3.9, 1.6, 1.56, 0}, c2{20, 4, -1, 3.9, 1.6, 1.56, 0}, far{50, 9, -1, 3.9, 1.6, 1.56, 0};
  const std::vector<EvalFrame> fixture{
      {"x", {{c1, std::nullopt, 0.9}, {far, std::nullopt, 0.8}, {c2, std::nullopt, 0.7}}, {{c1, {}, false}, {c2, {}, false}}}};
  const double eleven = average_precision(fixture, Matcher::box3d, 0.7).ap;
  const double all = average_precision(fixture, Matcher::box3d, 0.7, Interpolation::all_point).ap;
  const double fixture_err =
      std::max(std::abs(eleven - (6.0 + 5.0 * 2.0 / 3.0) / 11.0), std::abs(all - (0.5 + 0.5 * 2.0 / 3.0)));

  Rng rng(12);
  bool invariant = true;
  for (int trial = 0; trial < 20; ++trial) {
    EvalFrame f{"r", {}, {}};
    for (int g = 0; g < 4; ++g) f.gts.push_back({Box3D{8.0 + 7.0 * g, 0, -1, 3.9, 1.6, 1.56, 0}, {}, false});
    for (int d = 0; d < 8; ++d)
      f.detections.push_back({Box3D{8.0 + 7.0 * (d % 5) + uniform(rng, -0.8, 0.8), 0, -1, 3.9, 1.6, 1.56, 0}, std::nullopt,
                              uniform01(rng)});
    EvalFrame r = f;
    for (auto& d : r.detections) d.score = 5.0 * std::tanh(d.score) + 2.0;
    invariant = invariant &&
                average_precision(std::vector<EvalFrame>{f}, Matcher::bev, 0.7).ap ==
                    average_precision(std::vector<EvalFrame>{r}, Matcher::bev, 0.7).ap;
  }
  return {loc == 1.0 && ap3 == 1.0 && ap2 == 1.0 && fixture_err <= 1e-9 && invariant,
          "AP_loc=" + fmt("%.4f", loc) + " AP_3D=" + fmt("%.4f", ap3) + " AP_2D=" + fmt("%.4f", ap2) +
              ", fixture err=" + fmt("%.1e", fixture_err) + (invariant ? ", rescale-invariant" : ", rescaling changed AP")};
}

Outcome training_regression() {
  const ViewGeometry geom;
  SceneSpec spec;
  spec.seed = scene_seed(7, 0);
  const Scene s = generate_scene(spec);
  const auto anchors = build_anchors(geom.bev, AnchorConfig{});
  const TrainingFrame frame = prepare_frame(s, geom, anchors, ProposalConfig{}, RoiSamplerConfig{});
  const auto tmp = std::filesystem::temp_directory_path();
  std::vector<std::string> traces;
  bool monotone = true;
  double first = 0.0, last = 0.0;
  for (int run = 0; run < 2; ++run) {
    FusionNet net(FusionConfig{}, view_channels(geom), 0);
    const auto r = train_toy(net, std::span<const TrainingFrame>(&frame, 1), SgdParams{}, RoiSamplerConfig{});
    for (std::size_t i = 1; i < r.loss_trace.size(); ++i) monotone = monotone && r.loss_trace[i] < r.loss_trace[i - 1];
    monotone = monotone && r.loss_trace.size() == 50;
    first = r.loss_trace.front();
    last = r.loss_trace.back();
    const auto path = tmp / ("mv3d_acceptance_trace_" + std::to_string(run) + ".csv");
    write_loss_trace(path, r.loss_trace);
    traces.push_back(detail::read_file_bytes(path));
    std::filesystem::remove(path);
  }
  const bool identical = traces[0] == traces[1];
  return {monotone && identical, "loss " + fmt("%.5f", first) + " -> " + fmt("%.5f", last) +
                                     (monotone ? ", monotone" : ", NOT monotone") +
                                     (identical ? ", traces byte-identical" : ", traces differ")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "density formula exactness", 1.0, density_exactness},
      {2, "grid dimensions", 1.0, grid_dimensions},
      {3, "rotated IoU oracle equivalence", 120.0, iou_oracles},
      {4, "codec round-trips", 10.0, codec_round_trips},
      {5, "integral-image anchor filtering", 30.0, integral_filtering},
      {6, "gradient checks", 120.0, gradient_checks},
      {7, "fusion degeneracies", 10.0, fusion_degeneracies},
      {8, "drop-path statistics", 30.0, drop_path_statistics},
      {9, "end-to-end synthetic recall", 60.0, synthetic_recall},
      {10, "metric sanity", 10.0, metric_sanity},
      {11, "toy training regression", 60.0, training_regression},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("%s  %2d  %-32s %s (%.2f s of %.0f s)%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                c.budget_s, in_time ? "" : " over time budget");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
  return failed;
}
