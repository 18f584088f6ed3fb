#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mv3d/autodiff.hpp"
#include "mv3d/error.hpp"
#include "mv3d/fusenet.hpp"
#include "mv3d/rng.hpp"
#include "mv3d/tensor.hpp"

namespace mv3d {

struct GradcheckOptions {
  double step = 1e-4;        // central-difference step
  double tolerance = 1e-4;   // relative error bound
  int points = 20;           // random evaluation points per suite
  double kink_guard = 2e-3;  // resample points this close to a non-differentiable input
  int max_attempts = 500;
  std::uint64_t seed = 1;
};

struct GradcheckResult {
  std::string name;
  int points = 0;
  int resampled = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// ||a - n|| / max(||a||, ||n||); zero when both gradients vanish.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale < 1e-300 ? 0.0 : std::sqrt(diff) / scale;
}

/// Compares reverse-mode gradients of a scalar graph with central finite
/// differences over every entry of `params`. `randomize` draws a new point;
/// `build` constructs the graph at the current parameter values.
inline GradcheckResult gradcheck(std::string name, const std::vector<Parameter*>& params,
                                 const std::function<void(Rng&)>& randomize, const std::function<Var(Graph&)>& build,
                                 const GradcheckOptions& opt = {}) {
  GradcheckResult res;
  res.name = std::move(name);
  Rng rng(opt.seed);
  auto eval = [&] {
    Graph g;
    const Var y = build(g);
    return g.value(y).item();
  };
  for (int point = 0; point < opt.points; ++point) {
    Graph g;
    Var y;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= opt.max_attempts) fail(ErrorKind::contract, res.name + ": no evaluation point clear of kinks");
      randomize(rng);
      g = Graph();
      y = build(g);
      if (g.kink_margin() >= opt.kink_guard) break;
      ++res.resampled;
    }
    for (Parameter* p : params) p->zero_grad();
    g.backward(y);

    std::vector<double> analytic, numeric;
    for (Parameter* p : params) {
      auto v = p->value.values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        analytic.push_back(p->grad[i]);
        const double orig = v[i];
        v[i] = orig + opt.step;
        const double fp = eval();
        v[i] = orig - opt.step;
        const double fm = eval();
        v[i] = orig;
        numeric.push_back((fp - fm) / (2.0 * opt.step));
      }
    }
    res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic, numeric));
    ++res.points;
  }
  res.passed = res.max_rel_error < opt.tolerance;
  return res;
}

// ---------------------------------------------------------------------------
// Suites

namespace detail {

inline void fill_uniform(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& v : t.values()) v = uniform(rng, lo, hi);
}

/// Scalar probe <R, x> with a fixed random R, so every output entry carries a
/// distinct weight.
struct Probe {
  Tensor weight;
  Tensor bias{{1}};

  explicit Probe(std::size_t n, std::uint64_t seed) : weight({1, n}) {
    Rng rng(seed);
    fill_uniform(weight, rng);
  }

  Var apply(Graph& g, Var x) {
    const std::size_t n = g.value(x).size();
    return g.sum(g.linear(g.reshape(x, {1, n}), g.constant(weight), g.constant(bias)));
  }
};

}  // namespace detail

/// Runs every layer, loss and fusion-graph suite.
inline std::vector<GradcheckResult> run_gradcheck_suites(const GradcheckOptions& opt = {}) {
  std::vector<GradcheckResult> out;
  using detail::fill_uniform;
  using detail::Probe;

  {
    Parameter x(Tensor({3, 5})), w(Tensor({4, 5})), b(Tensor({4}));
    Probe probe(12, 11);
    out.push_back(gradcheck("linear", {&x, &w, &b},
                            [&](Rng& r) { fill_uniform(x.value, r); fill_uniform(w.value, r); fill_uniform(b.value, r); },
                            [&](Graph& g) { return probe.apply(g, g.linear(g.parameter(x), g.parameter(w), g.parameter(b))); },
                            opt));
  }
  {
    Parameter x(Tensor({4, 6}));
    Probe probe(24, 12);
    out.push_back(gradcheck("relu", {&x}, [&](Rng& r) { fill_uniform(x.value, r); },
                            [&](Graph& g) { return probe.apply(g, g.relu(g.parameter(x))); }, opt));
  }
  {
    Parameter a(Tensor({3, 4})), b(Tensor({3, 4}));
    Probe probe(12, 13);
    out.push_back(gradcheck("add", {&a, &b}, [&](Rng& r) { fill_uniform(a.value, r); fill_uniform(b.value, r); },
                            [&](Graph& g) { return probe.apply(g, g.add(g.parameter(a), g.parameter(b))); }, opt));
  }
  {
    Parameter x(Tensor({3, 4}));
    Probe probe(12, 14);
    out.push_back(gradcheck("scale", {&x}, [&](Rng& r) { fill_uniform(x.value, r); },
                            [&](Graph& g) { return probe.apply(g, g.scale(g.parameter(x), -1.7)); }, opt));
  }
  {
    Parameter x(Tensor({3, 4}));
    out.push_back(gradcheck("sum", {&x}, [&](Rng& r) { fill_uniform(x.value, r); },
                            [&](Graph& g) { return g.sum(g.scale(g.parameter(x), 2.5)); }, opt));
  }
  {
    Parameter x(Tensor({2, 3, 4}));
    Probe probe(24, 15);
    out.push_back(gradcheck("reshape", {&x}, [&](Rng& r) { fill_uniform(x.value, r); },
                            [&](Graph& g) { return probe.apply(g, g.reshape(g.parameter(x), {6, 4})); }, opt));
  }
  {
    Parameter a(Tensor({3, 2})), b(Tensor({3, 5})), c(Tensor({3, 1}));
    Probe probe(24, 16);
    out.push_back(gradcheck("concat_cols", {&a, &b, &c},
                            [&](Rng& r) { fill_uniform(a.value, r); fill_uniform(b.value, r); fill_uniform(c.value, r); },
                            [&](Graph& g) {
                              const std::array<Var, 3> xs{g.parameter(a), g.parameter(b), g.parameter(c)};
                              return probe.apply(g, g.concat_cols(xs));
                            },
                            opt));
  }
  {
    Parameter a(Tensor({3, 4})), b(Tensor({3, 4})), c(Tensor({3, 4}));
    Probe probe(12, 17);
    out.push_back(gradcheck("mean_of", {&a, &b, &c},
                            [&](Rng& r) { fill_uniform(a.value, r); fill_uniform(b.value, r); fill_uniform(c.value, r); },
                            [&](Graph& g) {
                              const std::array<Var, 3> xs{g.parameter(a), g.parameter(b), g.parameter(c)};
                              return probe.apply(g, g.mean_of(xs));
                            },
                            opt));
  }
  {
    Parameter x(Tensor({2, 5, 6})), w(Tensor({3, 2, 3, 3})), b(Tensor({3}));
    Probe probe(90, 18);
    out.push_back(gradcheck("conv2d", {&x, &w, &b},
                            [&](Rng& r) { fill_uniform(x.value, r); fill_uniform(w.value, r); fill_uniform(b.value, r); },
                            [&](Graph& g) { return probe.apply(g, g.conv2d(g.parameter(x), g.parameter(w), g.parameter(b))); },
                            opt));
  }
  {
    Parameter x(Tensor({2, 3, 4}));
    Probe probe(2 * 6 * 8, 19);
    out.push_back(gradcheck("upsample_bilinear", {&x}, [&](Rng& r) { fill_uniform(x.value, r); },
                            [&](Graph& g) { return probe.apply(g, g.upsample_bilinear(g.parameter(x), 2)); }, opt));
  }
  {
    Parameter x(Tensor({2, 7, 8}));
    Probe probe(2 * 2 * 3, 20);
    const RoiRect roi{1, 2, 5, 7};
    out.push_back(gradcheck("roi_pool", {&x}, [&](Rng& r) { fill_uniform(x.value, r); },
                            [&](Graph& g) { return probe.apply(g, g.roi_pool(g.parameter(x), roi, 2, 3)); }, opt));
  }
  {
    Parameter x(Tensor({2, 7, 8}));
    Probe probe(3 * 8, 21);
    const std::vector<RoiRect> rois{{0, 0, 3, 3}, {2, 1, 6, 7}, {4, 4, 6, 5}};
    out.push_back(gradcheck("roi_pool_rows", {&x}, [&](Rng& r) { fill_uniform(x.value, r); },
                            [&](Graph& g) { return probe.apply(g, g.roi_pool_rows(g.parameter(x), rois, 2, 2)); }, opt));
  }
  {
    Parameter x(Tensor({5, 3}));
    const std::vector<int> labels{0, 2, 1, 1, 0};
    out.push_back(gradcheck("softmax_cross_entropy", {&x}, [&](Rng& r) { fill_uniform(x.value, r, -3.0, 3.0); },
                            [&](Graph& g) { return g.softmax_cross_entropy(g.parameter(x), labels); }, opt));
  }
  {
    Parameter x(Tensor({4, 3}));
    Tensor target({4, 3});
    const std::vector<double> rows{1.0, 0.0, 1.0, 1.0};
    out.push_back(gradcheck("smooth_l1_loss", {&x},
                            [&](Rng& r) { fill_uniform(x.value, r, -2.5, 2.5); fill_uniform(target, r, -0.5, 0.5); },
                            [&](Graph& g) { return g.smooth_l1_loss(g.parameter(x), target, rows, 4.0); }, opt));
  }

  // Full fusion graphs: L = 2, width 8, three views, trainable front-ends,
  // ROI pooling, both heads and the multi-task loss.
  struct GraphCase {
    const char* name;
    FusionMode mode;
    std::optional<JoinOp> join;
    bool aux;
  };
  for (const GraphCase& gc : {GraphCase{"fusion_early", FusionMode::early, std::nullopt, false},
                              GraphCase{"fusion_late", FusionMode::late, std::nullopt, false},
                              GraphCase{"fusion_deep", FusionMode::deep, std::nullopt, false},
                              GraphCase{"fusion_deep_aux", FusionMode::deep, JoinOp::mean, true}}) {
    FusionConfig cfg;
    cfg.mode = gc.mode;
    cfg.join = gc.join;
    cfg.aux_losses = gc.aux;
    cfg.layers = 2;
    cfg.widths = {8, 8};
    cfg.frontend_channels = 2;
    cfg.frontend_kernel = 3;
    cfg.pool_h = 2;
    cfg.pool_w = 2;
    FusionNet net(cfg, {3, 3, 3}, 5);
    std::array<Parameter, 3> maps{Parameter(Tensor({3, 6, 6})), Parameter(Tensor({3, 5, 7})), Parameter(Tensor({3, 6, 8}))};
    const std::vector<std::array<RoiRect, 3>> rois{{RoiRect{0, 0, 3, 3}, RoiRect{1, 1, 4, 5}, RoiRect{0, 2, 5, 7}},
                                                   {RoiRect{2, 1, 5, 5}, RoiRect{0, 0, 2, 3}, RoiRect{1, 0, 4, 4}},
                                                   {RoiRect{1, 2, 4, 5}, RoiRect{2, 3, 4, 6}, RoiRect{3, 3, 5, 7}}};
    const std::vector<int> labels{1, 0, 1};
    Tensor targets({3, 24});
    std::vector<Parameter*> params;
    for (auto& m : maps) params.push_back(&m);
    for (auto& [name, p] : net.parameters()) params.push_back(&p);
    auto randomize = [&](Rng& r) {
      for (Parameter* p : params) fill_uniform(p->value, r);
      fill_uniform(targets, r, -0.5, 0.5);
    };
    auto build = [&](Graph& g) {
      std::array<Var, 3> feats;
      for (std::size_t v = 0; v < 3; ++v) {
        const std::string view(view_name(kViews[v]));
        feats[v] = g.relu(g.conv2d(g.parameter(maps[v]), g.parameter(net.parameter("frontend." + view + ".weight")),
                                   g.parameter(net.parameter("frontend." + view + ".bias"))));
      }
      const auto pooled = net.pool(g, feats, rois);
      const auto [main, aux] = net.training_outputs(g, pooled, nullptr);
      return multitask_loss(g, main, aux, labels, targets, cfg.loss);
    };
    out.push_back(gradcheck(gc.name, params, randomize, build, opt));
  }
  return out;
}

}  // namespace mv3d
