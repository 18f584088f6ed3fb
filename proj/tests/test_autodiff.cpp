#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mv3d/autodiff.hpp"
#include "mv3d/gradcheck.hpp"
#include "mv3d/rng.hpp"

using namespace mv3d;

namespace {

Tensor random_tensor(Tensor::Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, -1.0, 1.0);
  return t;
}

}  // namespace

TEST(Graph, LinearForwardAndBackward) {
  Graph g;
  const Var x = g.variable(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const Var w = g.variable(Tensor({1, 3}, {1, -1, 2}));
  const Var b = g.variable(Tensor({1}, {0.5}));
  const Var y = g.linear(x, w, b);
  EXPECT_EQ(g.value(y), Tensor({2, 1}, {5.5, 11.5}));
  g.backward(g.sum(y));
  EXPECT_EQ(g.grad(w), Tensor({1, 3}, {5, 7, 9}));
  EXPECT_EQ(g.grad(b), Tensor({1}, {2}));
  EXPECT_EQ(g.grad(x), Tensor({2, 3}, {1, -1, 2, 1, -1, 2}));
}

TEST(Graph, BackwardNeedsScalarRoot) {
  Graph g;
  const Var x = g.variable(Tensor({2}, {1, 2}));
  try {
    g.backward(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Graph, ParameterGradAccumulates) {
  Parameter p(Tensor({2}, {1, 2}));
  for (int pass = 0; pass < 2; ++pass) {
    Graph g;
    const Var v = g.parameter(p);
    g.backward(g.sum(g.scale(v, 3.0)));
  }
  EXPECT_EQ(p.grad, Tensor({2}, {6, 6}));
  p.zero_grad();
  EXPECT_EQ(p.grad, Tensor({2}, {0, 0}));
}

TEST(Graph, MeanOfSingleInputIsBitExact) {
  Rng rng(4);
  Graph g;
  const Tensor t = random_tensor({3, 5}, rng);
  const Var x = g.constant(t);
  const std::vector<Var> one{x};
  EXPECT_EQ(g.value(g.mean_of(one)), t);

  const Var y = g.constant(t);
  const std::vector<Var> two{x, y};
  const Tensor m = g.value(g.mean_of(two));
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_DOUBLE_EQ(m[i], t[i]);
}

TEST(Graph, ConcatColsLayout) {
  Graph g;
  const Var a = g.constant(Tensor({2, 1}, {1, 2}));
  const Var b = g.constant(Tensor({2, 2}, {3, 4, 5, 6}));
  const std::vector<Var> xs{a, b};
  EXPECT_EQ(g.value(g.concat_cols(xs)), Tensor({2, 3}, {1, 3, 4, 2, 5, 6}));
}

TEST(Graph, ConvMatchesNaiveLoop) {
  Rng rng(8);
  const Tensor X = random_tensor({2, 5, 6}, rng);
  const Tensor W = random_tensor({3, 2, 3, 3}, rng);
  const Tensor B = random_tensor({3}, rng);
  Graph g;
  const Tensor Y = g.value(g.conv2d(g.constant(X), g.constant(W), g.constant(B)));
  for (std::size_t o = 0; o < 3; ++o)
    for (long r = 0; r < 5; ++r)
      for (long c = 0; c < 6; ++c) {
        double acc = B[o];
        for (std::size_t ci = 0; ci < 2; ++ci)
          for (long ky = 0; ky < 3; ++ky)
            for (long kx = 0; kx < 3; ++kx) {
              const long rr = r + ky - 1, cc = c + kx - 1;
              if (rr < 0 || cc < 0 || rr >= 5 || cc >= 6) continue;
              acc += W[((o * 2 + ci) * 3 + std::size_t(ky)) * 3 + std::size_t(kx)] * X(ci, std::size_t(rr), std::size_t(cc));
            }
        EXPECT_NEAR(Y(o, std::size_t(r), std::size_t(c)), acc, 1e-12);
      }
}

TEST(Graph, UpsampleKeepsConstantsAndAverages) {
  Graph g;
  const Var c = g.constant(Tensor({1, 2, 2}, 3.0));
  const Tensor up = g.value(g.upsample_bilinear(c, 2));
  EXPECT_EQ(up.shape(), (Tensor::Shape{1, 4, 4}));
  for (double v : up.values()) EXPECT_DOUBLE_EQ(v, 3.0);

  // row ramp 0, 1: output rows at half-pixel centers -0.25, 0.25, 0.75, 1.25
  const Var ramp = g.constant(Tensor({1, 2, 1}, {0.0, 1.0}));
  const Tensor r = g.value(g.upsample_bilinear(ramp, 2));
  ASSERT_EQ(r.shape(), (Tensor::Shape{1, 4, 2}));
  EXPECT_DOUBLE_EQ(r(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(r(0, 1, 1), 0.25);
  EXPECT_DOUBLE_EQ(r(0, 2, 0), 0.75);
  EXPECT_DOUBLE_EQ(r(0, 3, 1), 1.0);
}

TEST(Graph, RoiPoolBins) {
  Tensor X({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) X[i] = double(i);
  Graph g;
  const Var x = g.variable(X);
  const Var y = g.roi_pool(x, RoiRect{0, 0, 3, 3}, 2, 2);
  EXPECT_EQ(g.value(y), Tensor({1, 2, 2}, {5, 7, 13, 15}));
  g.backward(g.sum(y));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(g.grad(x)[i], (i == 5 || i == 7 || i == 13 || i == 15) ? 1.0 : 0.0);

  // 3 cells into 2 bins: [0,2) and [1,3) overlap on the middle cell
  Graph h;
  const Var row = h.constant(Tensor({1, 1, 3}, {4, 1, 2}));
  EXPECT_EQ(h.value(h.roi_pool(row, RoiRect{0, 0, 0, 2}, 1, 2)), Tensor({1, 1, 2}, {4, 2}));
}

TEST(Graph, RoiPoolRejectsEmptyRoi) {
  Graph g;
  const Var x = g.constant(Tensor({1, 4, 4}));
  try {
    g.roi_pool(x, RoiRect{2, 2, 1, 3}, 2, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_roi);
  }
}

TEST(Losses, ScalarValues) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-3.0), 2.5);
  const std::vector<double> logits{0.0, 0.0};
  EXPECT_NEAR(cross_entropy(logits, 1), std::log(2.0), 1e-15);

  Graph g;
  const Var l = g.constant(Tensor({2, 2}, {0, 0, 2, 0}));
  const std::vector<int> labels{0, 0};
  const double expect = 0.5 * (std::log(2.0) + std::log(1.0 + std::exp(-2.0)));
  EXPECT_NEAR(g.value(g.softmax_cross_entropy(l, labels)).item(), expect, 1e-15);

  const Var p = g.constant(Tensor({2, 2}, {0.5, 3.0, 9.0, 9.0}));
  const Tensor target({2, 2}, {0.0, 0.0, 0.0, 0.0});
  const std::vector<double> w{1.0, 0.0};
  EXPECT_DOUBLE_EQ(g.value(g.smooth_l1_loss(p, target, w, 2.0)).item(), (0.125 + 2.5) / 2.0);
}

TEST(Losses, KinkMarginTracked) {
  Graph g;
  const Var p = g.constant(Tensor({1, 1}, {1.25}));
  const std::vector<double> w{1.0};
  g.smooth_l1_loss(p, Tensor({1, 1}, {0.0}), w, 1.0);
  EXPECT_DOUBLE_EQ(g.kink_margin(), 0.25);
}

TEST(Gradcheck, RelativeError) {
  const std::vector<double> a{1.0, 0.0}, b{1.0, 0.0}, c{0.0, 1.0};
  EXPECT_EQ(relative_error(a, b), 0.0);
  EXPECT_NEAR(relative_error(a, c), std::sqrt(2.0), 1e-15);
}

TEST(Gradcheck, DetectsWrongGradient) {
  Parameter p(Tensor({3}));
  GradcheckOptions opt;
  opt.points = 3;
  // value is sum(x^2) but the tape only knows the linear part
  const auto res = gradcheck(
      "wrong", {&p}, [&](Rng& rng) { detail::fill_uniform(p.value, rng); },
      [&](Graph& g) {
        const Var x = g.parameter(p);
        double sq = 0.0;
        for (double v : p.value.values()) sq += v * v;
        return g.add(g.sum(x), g.constant(Tensor::scalar(sq)));
      },
      opt);
  EXPECT_FALSE(res.passed);
}

TEST(Gradcheck, AllSuitesPass) {
  const auto results = run_gradcheck_suites();
  EXPECT_GE(results.size(), 18u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " rel error " << r.max_rel_error;
    EXPECT_EQ(r.points, 20) << r.name;
  }
}
