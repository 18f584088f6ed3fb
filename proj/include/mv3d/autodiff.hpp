#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mv3d/error.hpp"
#include "mv3d/tensor.hpp"

// Tape-based reverse-mode differentiation. Nodes are appended in creation
// order, so reverse creation order is a valid topological order.

namespace mv3d {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Inclusive cell rectangle on a feature map.
struct RoiRect {
  long r0 = 0, c0 = 0, r1 = -1, c1 = -1;
  bool clamped = false;

  long height() const { return r1 - r0 + 1; }
  long width() const { return c1 - c0 + 1; }
  bool empty() const { return r1 < r0 || c1 < c0; }
  friend bool operator==(const RoiRect&, const RoiRect&) = default;
};

class Graph {
 public:
  Var constant(Tensor t) { return push(std::move(t), false); }
  Var variable(Tensor t) { return push(std::move(t), true); }

  /// One node per Parameter per graph; backward adds its gradient to p.grad.
  Var parameter(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return it->second;
    Var v = push(p.value, true);
    nodes_[v.id].param = &p;
    param_nodes_.emplace(&p, v);
    return v;
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Smallest distance of any evaluated input from a point where the graph is
  /// not differentiable (ReLU at 0, max-pool ties, smooth-l1 at |x| = 1).
  double kink_margin() const { return kink_margin_; }

  void backward(Var root) {
    Node& r = nodes_.at(root.id);
    if (r.value.size() != 1) fail(ErrorKind::shape, "backward: root must be a scalar");
    if (!r.requires_grad) return;
    grad_ref(root.id) = Tensor(r.value.shape(), 1.0);
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        auto dst = n.param->grad.values();
        const auto src = nodes_[id].grad.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

  // -------------------------------------------------------------------------
  // Layers

  /// x [N x I], weight [O x I], bias [O] -> [N x O].
  Var linear(Var x, Var weight, Var bias) {
    const Tensor& X = value(x);
    const Tensor& W = value(weight);
    const Tensor& B = value(bias);
    if (X.rank() != 2 || W.rank() != 2 || B.rank() != 1 || X.dim(1) != W.dim(1) || B.dim(0) != W.dim(0)) {
      fail(ErrorKind::shape, "linear: incompatible shapes " + Tensor::shape_string(X.shape()) + " " +
                                 Tensor::shape_string(W.shape()) + " " + Tensor::shape_string(B.shape()));
    }
    const std::size_t n = X.dim(0), in = X.dim(1), out = W.dim(0);
    Tensor Y({n, out});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < out; ++o) {
        double acc = B[o];
        for (std::size_t k = 0; k < in; ++k) acc += X(i, k) * W(o, k);
        Y(i, o) = acc;
      }
    }
    return push_op(std::move(Y), {x, weight, bias}, [x, weight, bias, n, in, out](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      if (g.needs_grad(x)) {
        const Tensor& W = g.value(weight);
        Tensor& gx = g.grad_ref(x.id);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out; ++o)
            for (std::size_t k = 0; k < in; ++k) gx(i, k) += gy(i, o) * W(o, k);
      }
      if (g.needs_grad(weight)) {
        const Tensor& X = g.value(x);
        Tensor& gw = g.grad_ref(weight.id);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out; ++o)
            for (std::size_t k = 0; k < in; ++k) gw(o, k) += gy(i, o) * X(i, k);
      }
      if (g.needs_grad(bias)) {
        Tensor& gb = g.grad_ref(bias.id);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out; ++o) gb[o] += gy(i, o);
      }
    });
  }

  Var relu(Var x) {
    Tensor y = value(x);
    for (double& v : y.values()) {
      note_kink(std::abs(v));
      v = v > 0.0 ? v : 0.0;
    }
    return push_op(std::move(y), {x}, [x](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      const Tensor& X = g.value(x);
      Tensor& gx = g.grad_ref(x.id);
      for (std::size_t i = 0; i < X.size(); ++i)
        if (X[i] > 0.0) gx[i] += gy[i];
    });
  }

  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape() != B.shape()) fail(ErrorKind::shape, "add: shape mismatch");
    Tensor y = A;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += B[i];
    return push_op(std::move(y), {a, b}, [a, b](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      for (Var v : {a, b}) {
        if (!g.needs_grad(v)) continue;
        Tensor& gv = g.grad_ref(v.id);
        for (std::size_t i = 0; i < gy.size(); ++i) gv[i] += gy[i];
      }
    });
  }

  Var scale(Var x, double s) {
    Tensor y = value(x);
    for (double& v : y.values()) v *= s;
    return push_op(std::move(y), {x}, [x, s](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      Tensor& gx = g.grad_ref(x.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += s * gy[i];
    });
  }

  Var sum(Var x) {
    double acc = 0.0;
    for (const double v : value(x).values()) acc += v;
    return push_op(Tensor::scalar(acc), {x}, [x](Graph& g, std::size_t self) {
      const double gy = g.nodes_[self].grad[0];
      Tensor& gx = g.grad_ref(x.id);
      for (double& v : gx.values()) v += gy;
    });
  }

  Var reshape(Var x, Tensor::Shape shape) {
    Tensor y = value(x).reshaped(std::move(shape));
    return push_op(std::move(y), {x}, [x](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      Tensor& gx = g.grad_ref(x.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }

  /// Column-wise concatenation of [N x d_i] inputs.
  Var concat_cols(std::span<const Var> xs) {
    if (xs.empty()) fail(ErrorKind::contract, "concat_cols: no inputs");
    const std::size_t n = value(xs[0]).dim(0);
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (Var v : xs) {
      const Tensor& t = value(v);
      if (t.rank() != 2 || t.dim(0) != n) fail(ErrorKind::shape, "concat_cols: row count mismatch");
      widths.push_back(t.dim(1));
      total += t.dim(1);
    }
    Tensor y({n, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const Tensor& t = value(xs[k]);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < widths[k]; ++j) y(i, off + j) = t(i, j);
      off += widths[k];
    }
    std::vector<Var> inputs(xs.begin(), xs.end());
    return push_op(std::move(y), inputs, [inputs, widths, n](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      std::size_t off = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (g.needs_grad(inputs[k])) {
          Tensor& gx = g.grad_ref(inputs[k].id);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) gx(i, j) += gy(i, off + j);
        }
        off += widths[k];
      }
    });
  }

  /// Element-wise mean. Accumulation starts from the first input, so a single
  /// input passes through bit-exactly.
  Var mean_of(std::span<const Var> xs) {
    if (xs.empty()) fail(ErrorKind::contract, "mean_of: no inputs");
    Tensor y = value(xs[0]);
    for (std::size_t k = 1; k < xs.size(); ++k) {
      const Tensor& t = value(xs[k]);
      if (t.shape() != y.shape()) fail(ErrorKind::shape, "mean_of: shape mismatch");
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += t[i];
    }
    const double n = static_cast<double>(xs.size());
    if (xs.size() > 1)
      for (double& v : y.values()) v /= n;
    std::vector<Var> inputs(xs.begin(), xs.end());
    return push_op(std::move(y), inputs, [inputs, n](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      for (Var v : inputs) {
        if (!g.needs_grad(v)) continue;
        Tensor& gx = g.grad_ref(v.id);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] / n;
      }
    });
  }

  /// Same-padded stride-1 convolution. x [C x H x W], weight [O x C x k x k]
  /// with odd k, bias [O].
  Var conv2d(Var x, Var weight, Var bias) {
    const Tensor& X = value(x);
    const Tensor& W = value(weight);
    if (X.rank() != 3 || W.rank() != 4 || W.dim(1) != X.dim(0) || W.dim(2) != W.dim(3) || W.dim(2) % 2 == 0 ||
        value(bias).size() != W.dim(0)) {
      fail(ErrorKind::shape, "conv2d: incompatible shapes");
    }
    const long C = static_cast<long>(X.dim(0)), H = static_cast<long>(X.dim(1)), Wd = static_cast<long>(X.dim(2));
    const long O = static_cast<long>(W.dim(0)), K = static_cast<long>(W.dim(2)), pad = K / 2;
    const std::size_t plane = static_cast<std::size_t>(H * Wd);
    Tensor Y({static_cast<std::size_t>(O), static_cast<std::size_t>(H), static_cast<std::size_t>(Wd)});
    const Tensor& B = value(bias);
    for (long o = 0; o < O; ++o) {
      double* yo = Y.data() + o * plane;
      std::fill(yo, yo + plane, B[static_cast<std::size_t>(o)]);
      for (long c = 0; c < C; ++c) {
        const double* xc = X.data() + c * plane;
        for (long ky = 0; ky < K; ++ky) {
          for (long kx = 0; kx < K; ++kx) {
            const double wv = W[static_cast<std::size_t>(((o * C + c) * K + ky) * K + kx)];
            const long dy = ky - pad, dx = kx - pad;
            for (long r = std::max(0L, -dy); r < std::min(H, H - dy); ++r) {
              const double* src = xc + (r + dy) * Wd + dx;
              double* dst = yo + r * Wd;
              for (long col = std::max(0L, -dx); col < std::min(Wd, Wd - dx); ++col) dst[col] += wv * src[col];
            }
          }
        }
      }
    }
    return push_op(std::move(Y), {x, weight, bias}, [=](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      const bool gx_on = g.needs_grad(x), gw_on = g.needs_grad(weight), gb_on = g.needs_grad(bias);
      const Tensor& Xv = g.value(x);
      const Tensor& Wv = g.value(weight);
      Tensor* gx = gx_on ? &g.grad_ref(x.id) : nullptr;
      Tensor* gw = gw_on ? &g.grad_ref(weight.id) : nullptr;
      Tensor* gb = gb_on ? &g.grad_ref(bias.id) : nullptr;
      for (long o = 0; o < O; ++o) {
        const double* go = gy.data() + o * plane;
        if (gb) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += go[i];
          (*gb)[static_cast<std::size_t>(o)] += acc;
        }
        for (long c = 0; c < C; ++c) {
          const double* xc = Xv.data() + c * plane;
          double* gxc = gx ? gx->data() + c * plane : nullptr;
          for (long ky = 0; ky < K; ++ky) {
            for (long kx = 0; kx < K; ++kx) {
              const auto widx = static_cast<std::size_t>(((o * C + c) * K + ky) * K + kx);
              const double wv = Wv[widx];
              const long dy = ky - pad, dx = kx - pad;
              double wacc = 0.0;
              for (long r = std::max(0L, -dy); r < std::min(H, H - dy); ++r) {
                const double* src = xc + (r + dy) * Wd + dx;
                const double* gyr = go + r * Wd;
                double* gsrc = gxc ? gxc + (r + dy) * Wd + dx : nullptr;
                for (long col = std::max(0L, -dx); col < std::min(Wd, Wd - dx); ++col) {
                  wacc += gyr[col] * src[col];
                  if (gsrc) gsrc[col] += wv * gyr[col];
                }
              }
              if (gw) (*gw)[widx] += wacc;
            }
          }
        }
      }
    });
  }

  /// Bilinear upsampling of x [C x H x W] by an integer factor, half-pixel
  /// centers, edge-clamped.
  Var upsample_bilinear(Var x, std::size_t factor) {
    const Tensor& X = value(x);
    if (X.rank() != 3 || factor < 1) fail(ErrorKind::shape, "upsample_bilinear: expects [C x H x W] and factor >= 1");
    const std::size_t C = X.dim(0), H = X.dim(1), W = X.dim(2), OH = H * factor, OW = W * factor;
    struct Tap {
      std::size_t i0, i1;
      double w1;
    };
    auto taps = [factor](std::size_t out_n, std::size_t in_n) {
      std::vector<Tap> t(out_n);
      for (std::size_t o = 0; o < out_n; ++o) {
        double s = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(s));
        const std::size_t i1 = std::min(i0 + 1, in_n - 1);
        t[o] = {i0, i1, s - static_cast<double>(i0)};
      }
      return t;
    };
    auto ty = taps(OH, H);
    auto tx = taps(OW, W);
    Tensor Y({C, OH, OW});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t r = 0; r < OH; ++r)
        for (std::size_t q = 0; q < OW; ++q) {
          const Tap a = ty[r], b = tx[q];
          Y(c, r, q) = (1 - a.w1) * ((1 - b.w1) * X(c, a.i0, b.i0) + b.w1 * X(c, a.i0, b.i1)) +
                       a.w1 * ((1 - b.w1) * X(c, a.i1, b.i0) + b.w1 * X(c, a.i1, b.i1));
        }
    return push_op(std::move(Y), {x}, [x, ty, tx, C, OH, OW](Graph& g, std::size_t self) {
      const Tensor& gy = g.nodes_[self].grad;
      Tensor& gx = g.grad_ref(x.id);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < OH; ++r)
          for (std::size_t q = 0; q < OW; ++q) {
            const Tap a = ty[r], b = tx[q];
            const double v = gy(c, r, q);
            gx(c, a.i0, b.i0) += (1 - a.w1) * (1 - b.w1) * v;
            gx(c, a.i0, b.i1) += (1 - a.w1) * b.w1 * v;
            gx(c, a.i1, b.i0) += a.w1 * (1 - b.w1) * v;
            gx(c, a.i1, b.i1) += a.w1 * b.w1 * v;
          }
    });
  }

  /// Max-pools an ROI of x [C x H x W] into [C x out_h x out_w]. Bin i spans
  /// [floor(i*h/out_h), ceil((i+1)*h/out_h)) relative to the ROI origin.
  Var roi_pool(Var x, const RoiRect& roi, std::size_t out_h, std::size_t out_w) {
    auto [y, argmax] = roi_pool_kernel(value(x), roi, out_h, out_w);
    return push_op(std::move(y), {x}, [x, argmax](Graph& g, std::size_t self) {
      scatter_argmax(g.nodes_[self].grad, argmax, g.grad_ref(x.id));
    });
  }

  /// Pools each ROI and stacks the flattened results: [N x (C*out_h*out_w)].
  Var roi_pool_rows(Var x, std::span<const RoiRect> rois, std::size_t out_h, std::size_t out_w) {
    const Tensor& X = value(x);
    if (X.rank() != 3) fail(ErrorKind::shape, "roi_pool_rows: expects [C x H x W]");
    const std::size_t d = X.dim(0) * out_h * out_w;
    Tensor y({rois.size(), d});
    std::vector<long> argmax(rois.size() * d, -1);
    for (std::size_t n = 0; n < rois.size(); ++n) {
      auto [pooled, am] = roi_pool_kernel(X, rois[n], out_h, out_w);
      std::copy(pooled.values().begin(), pooled.values().end(), y.data() + n * d);
      std::copy(am.begin(), am.end(), argmax.begin() + static_cast<std::ptrdiff_t>(n * d));
    }
    return push_op(std::move(y), {x}, [x, argmax](Graph& g, std::size_t self) {
      scatter_argmax(g.nodes_[self].grad, argmax, g.grad_ref(x.id));
    });
  }

  // -------------------------------------------------------------------------
  // Losses

  /// Mean over rows of -log softmax(logits)[label]. logits [N x K].
  Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const Tensor& L = value(logits);
    if (L.rank() != 2 || L.dim(0) != labels.size()) fail(ErrorKind::shape, "softmax_cross_entropy: logits/labels mismatch");
    const std::size_t n = L.dim(0), k = L.dim(1);
    Tensor probs({n, k});
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) fail(ErrorKind::contract, "softmax_cross_entropy: label out of range");
      double mx = L(i, 0);
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, L(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < k; ++j) z += std::exp(L(i, j) - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < k; ++j) probs(i, j) = std::exp(L(i, j) - lse);
      loss += lse - L(i, static_cast<std::size_t>(labels[i]));
    }
    if (n > 0) loss /= static_cast<double>(n);
    std::vector<int> lab(labels.begin(), labels.end());
    return push_op(Tensor::scalar(loss), {logits}, [logits, probs, lab, n, k](Graph& g, std::size_t self) {
      const double gy = g.nodes_[self].grad[0] / static_cast<double>(n);
      Tensor& gl = g.grad_ref(logits.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j)
          gl(i, j) += gy * (probs(i, j) - (static_cast<int>(j) == lab[i] ? 1.0 : 0.0));
    });
  }

  /// sum_i row_weight[i] * sum_j smooth_l1(pred(i,j) - target(i,j)), divided
  /// by `normalizer`.
  Var smooth_l1_loss(Var pred, const Tensor& target, std::span<const double> row_weight, double normalizer) {
    const Tensor& P = value(pred);
    if (P.shape() != target.shape() || P.rank() != 2 || row_weight.size() != P.dim(0)) {
      fail(ErrorKind::shape, "smooth_l1_loss: prediction/target shape mismatch");
    }
    if (!(normalizer > 0.0)) fail(ErrorKind::contract, "smooth_l1_loss: normalizer must be positive");
    const std::size_t n = P.dim(0), d = P.dim(1);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (row_weight[i] == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        const double e = P(i, j) - target(i, j);
        note_kink(std::abs(std::abs(e) - 1.0));
        const double ae = std::abs(e);
        loss += row_weight[i] * (ae < 1.0 ? 0.5 * e * e : ae - 0.5);
      }
    }
    loss /= normalizer;
    std::vector<double> w(row_weight.begin(), row_weight.end());
    return push_op(Tensor::scalar(loss), {pred}, [pred, target, w, n, d, normalizer](Graph& g, std::size_t self) {
      const double gy = g.nodes_[self].grad[0] / normalizer;
      const Tensor& P = g.value(pred);
      Tensor& gp = g.grad_ref(pred.id);
      for (std::size_t i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) {
          const double e = P(i, j) - target(i, j);
          const double de = std::abs(e) < 1.0 ? e : (e > 0.0 ? 1.0 : -1.0);
          gp(i, j) += gy * w[i] * de;
        }
      }
    });
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Graph&, std::size_t)> backward;
  };

  Var push(Tensor t, bool requires_grad) {
    nodes_.push_back(Node{std::move(t), {}, requires_grad, nullptr, {}});
    return {nodes_.size() - 1};
  }

  Var push_op(Tensor y, std::initializer_list<Var> inputs, std::function<void(Graph&, std::size_t)> bw) {
    return push_op(std::move(y), std::vector<Var>(inputs), std::move(bw));
  }

  Var push_op(Tensor y, const std::vector<Var>& inputs, std::function<void(Graph&, std::size_t)> bw) {
    bool rg = false;
    for (Var v : inputs) rg = rg || nodes_.at(v.id).requires_grad;
    Var out = push(std::move(y), rg);
    if (rg) nodes_[out.id].backward = std::move(bw);
    return out;
  }

  bool needs_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void note_kink(double distance) { kink_margin_ = std::min(kink_margin_, distance); }

  std::pair<Tensor, std::vector<long>> roi_pool_kernel(const Tensor& X, const RoiRect& roi, std::size_t out_h,
                                                       std::size_t out_w) {
    if (X.rank() != 3) fail(ErrorKind::shape, "roi_pool: expects [C x H x W]");
    if (roi.empty()) fail(ErrorKind::empty_roi, "roi_pool: zero-area ROI");
    if (out_h == 0 || out_w == 0) fail(ErrorKind::shape, "roi_pool: output size must be positive");
    const long C = static_cast<long>(X.dim(0)), H = static_cast<long>(X.dim(1)), W = static_cast<long>(X.dim(2));
    const long rh = roi.height(), rw = roi.width();
    const long oh = static_cast<long>(out_h), ow = static_cast<long>(out_w);
    Tensor y({X.dim(0), out_h, out_w});
    std::vector<long> argmax(y.size(), -1);
    for (long c = 0; c < C; ++c) {
      for (long i = 0; i < oh; ++i) {
        const long hs = std::clamp(roi.r0 + (i * rh) / oh, 0L, H);
        const long he = std::clamp(roi.r0 + (((i + 1) * rh) + oh - 1) / oh, 0L, H);
        for (long j = 0; j < ow; ++j) {
          const long ws = std::clamp(roi.c0 + (j * rw) / ow, 0L, W);
          const long we = std::clamp(roi.c0 + (((j + 1) * rw) + ow - 1) / ow, 0L, W);
          double best = -std::numeric_limits<double>::infinity();
          double second = -std::numeric_limits<double>::infinity();
          long best_idx = -1;
          for (long r = hs; r < he; ++r) {
            for (long q = ws; q < we; ++q) {
              const long idx = (c * H + r) * W + q;
              const double v = X[static_cast<std::size_t>(idx)];
              if (v > best) {
                second = best;
                best = v;
                best_idx = idx;
              } else if (v > second) {
                second = v;
              }
            }
          }
          const auto out_idx = static_cast<std::size_t>((c * oh + i) * ow + j);
          if (best_idx < 0) {
            y[out_idx] = 0.0;  // bin fell outside the map
          } else {
            y[out_idx] = best;
            argmax[out_idx] = best_idx;
            if (std::isfinite(second)) note_kink(best - second);
          }
        }
      }
    }
    return {std::move(y), std::move(argmax)};
  }

  static void scatter_argmax(const Tensor& gy, const std::vector<long>& argmax, Tensor& gx) {
    for (std::size_t i = 0; i < argmax.size(); ++i)
      if (argmax[i] >= 0) gx[static_cast<std::size_t>(argmax[i])] += gy[i];
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, Var> param_nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

/// Scalar smooth-l1 summed over components.
inline double smooth_l1(std::span<const double> x) {
  double acc = 0.0;
  for (const double v : x) {
    const double a = std::abs(v);
    acc += a < 1.0 ? 0.5 * v * v : a - 0.5;
  }
  return acc;
}

inline double smooth_l1(double x) { return smooth_l1(std::span<const double>(&x, 1)); }

/// -log softmax(logits)[label].
inline double cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) fail(ErrorKind::contract, "cross_entropy: label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (const double v : logits) z += std::exp(v - mx);
  return mx + std::log(z) - logits[label];
}

}  // namespace mv3d
