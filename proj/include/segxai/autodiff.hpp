#pragma once
// Record-and-replay reverse-mode differentiation. A Graph owns an ordered
// list of nodes built during one forward pass; backward() replays the list
// in exact reverse order, accumulating gradients into each node's inputs
// with a single sequential accumulation order. A graph belongs to one
// forward/backward pass and is confined to one thread.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "segxai/tensor.hpp"

namespace segxai {

class Graph;

struct Node {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  std::size_t id = 0;
  const char* op = "";
  std::vector<Node*> inputs;
  std::function<void(Graph&, Node&)> backward;
  Graph* owner = nullptr;
};

using Var = Node*;

class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }

  // Test fixture: flips the sign of the named primitive's backward rule so
  // gradient checks can prove they detect a broken rule.
  void set_fault(std::string primitive) { fault_ = std::move(primitive); }
  bool fault(const char* primitive) const { return fault_ == primitive; }

  const Tensor& value(Var v) const { return v->value; }
  std::size_t num_nodes() const { return nodes_.size(); }

  Var leaf(Tensor v) { return make(std::move(v), {}, nullptr, "leaf"); }

  Var add(Var a, Var b) {
    Tensor out = segxai::add(a->value, b->value);
    return make(std::move(out), {a, b}, [a, b](Graph& g, Node& self) {
      g.add_grad(a, self.grad);
      g.add_grad(b, self.grad);
    }, "add");
  }

  Var mul(Var a, Var b) {
    Tensor out = segxai::mul(a->value, b->value);
    return make(std::move(out), {a, b}, [a, b](Graph& g, Node& self) {
      g.add_grad(a, segxai::mul(self.grad, b->value));
      g.add_grad(b, segxai::mul(self.grad, a->value));
    }, "mul");
  }

  Var relu(Var a) {
    Tensor out = segxai::relu(a->value);
    return make(std::move(out), {a}, [a](Graph& g, Node& self) {
      Tensor ga(a->value.shape());
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga[i] = a->value[i] > 0.0 ? self.grad[i] : 0.0;
      if (g.fault("relu")) negate(ga);
      g.add_grad(a, std::move(ga));
    }, "relu");
  }

  Var scale(Var a, double s) {
    Tensor out = segxai::scale(a->value, s);
    return make(std::move(out), {a}, [a, s](Graph& g, Node& self) {
      g.add_grad(a, segxai::scale(self.grad, s));
    }, "scale");
  }

  Var conv2d(Var input, Var kernels, Var bias, int stride, int padding) {
    Tensor out = segxai::conv2d(input->value, kernels->value, bias->value,
                                stride, padding);
    auto bwd = [input, kernels, bias, stride, padding](Graph& g, Node& self) {
      const Tensor& in = input->value;
      const Tensor& ker = kernels->value;
      const Tensor& go = self.grad;
      const std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
      const std::size_t K = ker.extent(0), kh = ker.extent(2),
                        kw = ker.extent(3);
      const std::size_t Ho = go.extent(1), Wo = go.extent(2);
      Tensor gi(in.shape());
      Tensor gk(ker.shape());
      Tensor gb(bias->value.shape());
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const double gv = go.at(k, oy, ox);
            gb[k] += gv;
            for (std::size_t c = 0; c < C; ++c) {
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t y =
                    static_cast<std::ptrdiff_t>(oy * stride + ky) - padding;
                if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t x =
                      static_cast<std::ptrdiff_t>(ox * stride + kx) - padding;
                  if (x < 0 || x >= static_cast<std::ptrdiff_t>(W)) continue;
                  const std::size_t yy = static_cast<std::size_t>(y);
                  const std::size_t xx = static_cast<std::size_t>(x);
                  gk.at(k, c, ky, kx) += gv * in.at(c, yy, xx);
                  gi.at(c, yy, xx) += gv * ker.at(k, c, ky, kx);
                }
              }
            }
          }
        }
      }
      if (g.fault("conv2d")) negate(gi);
      g.add_grad(input, std::move(gi));
      g.add_grad(kernels, std::move(gk));
      g.add_grad(bias, std::move(gb));
    };
    return make(std::move(out), {input, kernels, bias}, std::move(bwd),
                "conv2d");
  }

  Var softmax_channels(Var logits) {
    Tensor out = segxai::softmax_channels(logits->value);
    return make(std::move(out), {logits}, [logits](Graph& g, Node& self) {
      const Tensor& p = self.value;
      const Tensor& go = self.grad;
      const std::size_t L = p.extent(0), H = p.extent(1), W = p.extent(2);
      Tensor gl(p.shape());
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          double dot = 0.0;
          for (std::size_t l = 0; l < L; ++l)
            dot += go.at(l, y, x) * p.at(l, y, x);
          for (std::size_t l = 0; l < L; ++l)
            gl.at(l, y, x) = p.at(l, y, x) * (go.at(l, y, x) - dot);
        }
      }
      if (g.fault("softmax_channels")) negate(gl);
      g.add_grad(logits, std::move(gl));
    }, "softmax_channels");
  }

  Var bilinear_upsample(Var map, std::size_t H, std::size_t W) {
    Tensor out = segxai::bilinear_upsample(map->value, H, W);
    return make(std::move(out), {map}, [map, H, W](Graph& g, Node& self) {
      const std::size_t h = map->value.extent(0), w = map->value.extent(1);
      Tensor gm(map->value.shape());
      for (std::size_t y = 0; y < H; ++y) {
        const double sy =
            (H > 1 && h > 1)
                ? static_cast<double>(y) * (h - 1) / static_cast<double>(H - 1)
                : 0.0;
        const std::size_t y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double ty = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < W; ++x) {
          const double sx =
              (W > 1 && w > 1)
                  ? static_cast<double>(x) * (w - 1) / static_cast<double>(W - 1)
                  : 0.0;
          const std::size_t x0 = static_cast<std::size_t>(sx);
          const std::size_t x1 = std::min(x0 + 1, w - 1);
          const double tx = sx - static_cast<double>(x0);
          const double gv = self.grad.at(y, x);
          gm.at(y0, x0) += (1.0 - ty) * (1.0 - tx) * gv;
          gm.at(y0, x1) += (1.0 - ty) * tx * gv;
          gm.at(y1, x0) += ty * (1.0 - tx) * gv;
          gm.at(y1, x1) += ty * tx * gv;
        }
      }
      if (g.fault("bilinear_upsample")) negate(gm);
      g.add_grad(map, std::move(gm));
    }, "bilinear_upsample");
  }

  Var upsample2x_nearest(Var t) {
    const Tensor& in = t->value;
    if (in.rank() != 3) throw Error("upsample2x_nearest: rank != 3");
    const std::size_t C = in.extent(0), h = in.extent(1), w = in.extent(2);
    Tensor out({C, 2 * h, 2 * w});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t x = 0; x < 2 * w; ++x)
          out.at(c, y, x) = in.at(c, y / 2, x / 2);
    return make(std::move(out), {t}, [t, C, h, w](Graph& g, Node& self) {
      Tensor gt(t->value.shape());
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t x = 0; x < 2 * w; ++x)
            gt.at(c, y / 2, x / 2) += self.grad.at(c, y, x);
      if (g.fault("upsample2x_nearest")) negate(gt);
      g.add_grad(t, std::move(gt));
    }, "upsample2x_nearest");
  }

  Var concat_channels(Var a, Var b) {
    const Tensor& ta = a->value;
    const Tensor& tb = b->value;
    if (ta.rank() != 3 || tb.rank() != 3)
      throw Error("concat_channels: rank != 3");
    if (ta.extent(1) != tb.extent(1) || ta.extent(2) != tb.extent(2))
      throw Error("concat_channels: spatial mismatch " + ta.shape_str() +
                  " vs " + tb.shape_str());
    const std::size_t Ca = ta.extent(0), Cb = tb.extent(0), H = ta.extent(1),
                      W = ta.extent(2);
    Tensor out({Ca + Cb, H, W});
    std::copy(ta.data(), ta.data() + ta.size(), out.data());
    std::copy(tb.data(), tb.data() + tb.size(), out.data() + ta.size());
    return make(std::move(out), {a, b}, [a, b, Ca, Cb, H, W](Graph& g,
                                                             Node& self) {
      Tensor ga(a->value.shape());
      Tensor gb(b->value.shape());
      std::copy(self.grad.data(), self.grad.data() + Ca * H * W, ga.data());
      std::copy(self.grad.data() + Ca * H * W,
                self.grad.data() + (Ca + Cb) * H * W, gb.data());
      if (g.fault("concat_channels")) negate(ga);
      g.add_grad(a, std::move(ga));
      g.add_grad(b, std::move(gb));
    }, "concat_channels");
  }

  // Scalar sum of the class-cls plane over the given pixels (linear
  // row-major indices into H x W). The differentiated quantity behind every
  // gradient-weighted saliency method.
  Var select_sum(Var logits, std::size_t cls,
                 const std::vector<std::size_t>& pixels) {
    const Tensor& lv = logits->value;
    if (lv.rank() != 3) throw Error("select_sum: rank != 3");
    const std::size_t L = lv.extent(0), H = lv.extent(1), W = lv.extent(2);
    if (cls >= L)
      throw Error("select_sum: class " + std::to_string(cls) + " out of " +
                  std::to_string(L));
    double acc = 0.0;
    for (std::size_t p : pixels) {
      if (p >= H * W)
        throw Error("select_sum: pixel index " + std::to_string(p) +
                    " out of bounds");
      acc += lv[cls * H * W + p];
    }
    Tensor out({1}, {acc});
    auto pix = pixels;  // copy for the closure
    return make(std::move(out), {logits},
                [logits, cls, H, W, pix = std::move(pix)](Graph& g,
                                                          Node& self) {
      Tensor gl(logits->value.shape());
      const double gv = self.grad[0];
      for (std::size_t p : pix) gl[cls * H * W + p] += gv;
      if (g.fault("select_sum")) negate(gl);
      g.add_grad(logits, std::move(gl));
    }, "select_sum");
  }

  Var sum_all(Var t) {
    Tensor out({1}, {segxai::sum_all(t->value)});
    return make(std::move(out), {t}, [t](Graph& g, Node& self) {
      Tensor gt(t->value.shape());
      const double gv = self.grad[0];
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = gv;
      if (g.fault("sum_all")) negate(gt);
      g.add_grad(t, std::move(gt));
    }, "sum_all");
  }

  // Mean per-pixel cross-entropy of logits (L x H x W) against integer
  // labels (row-major H*W). Fused log-softmax keeps the backward rule the
  // textbook (softmax - onehot) / N form.
  Var cross_entropy_mean(Var logits, const std::vector<int>& labels) {
    const Tensor& lv = logits->value;
    if (lv.rank() != 3) throw Error("cross_entropy_mean: rank != 3");
    const std::size_t L = lv.extent(0), H = lv.extent(1), W = lv.extent(2);
    if (labels.size() != H * W)
      throw Error("cross_entropy_mean: " + std::to_string(labels.size()) +
                  " labels for " + std::to_string(H * W) + " pixels");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= L)
        throw Error("cross_entropy_mean: label " + std::to_string(labels[i]) +
                    " out of range at pixel " + std::to_string(i));
    Tensor probs = segxai::softmax_channels(lv);
    double loss = 0.0;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t l = static_cast<std::size_t>(labels[y * W + x]);
        loss -= std::log(probs.at(l, y, x));
      }
    loss /= static_cast<double>(H * W);
    Tensor out({1}, {loss});
    auto lab = labels;
    return make(std::move(out), {logits},
                [logits, probs = std::move(probs), lab = std::move(lab), L, H,
                 W](Graph& g, Node& self) {
      Tensor gl(logits->value.shape());
      const double gv = self.grad[0] / static_cast<double>(H * W);
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const double onehot =
                static_cast<std::size_t>(lab[y * W + x]) == l ? 1.0 : 0.0;
            gl.at(l, y, x) = gv * (probs.at(l, y, x) - onehot);
          }
      if (g.fault("cross_entropy_mean")) negate(gl);
      g.add_grad(logits, std::move(gl));
    }, "cross_entropy_mean");
  }

  void tap(const std::string& name, Var v) {
    check_owned(v, "tap");
    if (taps_.count(name)) throw Error("tap: duplicate name " + name);
    taps_[name] = v;
  }

  bool has_tap(const std::string& name) const { return taps_.count(name) > 0; }

  // Gradients of a scalar seed with respect to every registered tap. Taps
  // that do not influence the seed (or an empty-region seed) come back as
  // zero tensors shaped like the tapped value.
  std::map<std::string, Tensor> backward(Var seed) {
    if (!recording_)
      throw Error("backward: graph was built without recording");
    check_owned(seed, "backward seed");
    if (seed->value.size() != 1)
      throw Error("backward: seed is not a scalar (shape " +
                  seed->value.shape_str() + ")");
    for (auto& n : nodes_) {
      n->has_grad = false;
      n->grad = Tensor();
    }
    seed->grad = Tensor({1}, {1.0});
    seed->has_grad = true;
    for (std::size_t i = seed->id + 1; i-- > 0;) {
      Node& n = *nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, n);
    }
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : taps_) {
      out[name] = v->has_grad ? v->grad : Tensor(v->value.shape());
    }
    return out;
  }

  void add_grad(Node* n, Tensor g) {
    if (!n->has_grad) {
      n->grad = std::move(g);
      n->has_grad = true;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
  }

 private:
  static void negate(Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = -t[i];
  }

  void check_owned(Var v, const char* what) const {
    if (v == nullptr || v->owner != this)
      throw Error(std::string(what) + ": node does not belong to this graph");
  }

  Var make(Tensor value, std::vector<Var> inputs,
           std::function<void(Graph&, Node&)> bwd, const char* op) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->id = nodes_.size();
    node->op = op;
    node->owner = this;
    if (recording_) {
      node->inputs = std::move(inputs);
      node->backward = std::move(bwd);
    }
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
  }

  bool recording_;
  std::string fault_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::map<std::string, Var> taps_;
};

}  // namespace segxai
