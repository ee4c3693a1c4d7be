#pragma once
// Central finite-difference verification of every differentiable primitive
// and of the gradients delivered at each named network layer. The error
// metric is |analytic - fd| / max(1, |analytic|, |fd|), reported per
// primitive as a maximum over all trials and elements.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "segxai/autodiff.hpp"
#include "segxai/common.hpp"
#include "segxai/network.hpp"
#include "segxai/pixel_set.hpp"
#include "segxai/tensor.hpp"

namespace segxai::gradcheck {

struct Options {
  std::uint64_t seed = 1;
  std::size_t trials = 60;
  double step = 1e-5;
  std::string inject_fault;  // test fixture; see Graph::set_fault
};

struct PrimitiveReport {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t trials = 0;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline bool all_pass(const std::vector<PrimitiveReport>& reports,
                     double tolerance) {
  for (const auto& r : reports)
    if (!(r.max_rel_err < tolerance)) return false;
  return true;
}

namespace detail {

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct CheckCase {
  std::vector<Tensor> inputs;
  Builder build;  // returns the scalar seed
};

inline Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Uniform values bounded away from zero, for kinked ops like relu.
inline Tensor random_tensor_offzero(Rng& rng, std::vector<std::size_t> shape,
                                    double margin = 0.05) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] += t[i] >= 0.0 ? margin : -margin;
  return t;
}

inline double case_error(const CheckCase& c, double step,
                         const std::string& fault) {
  // analytic gradients
  Graph g(true);
  if (!fault.empty()) g.set_fault(fault);
  std::vector<Var> leaves;
  for (const Tensor& t : c.inputs) leaves.push_back(g.leaf(t));
  for (std::size_t i = 0; i < leaves.size(); ++i)
    g.tap("in" + std::to_string(i), leaves[i]);
  Var seed = c.build(g, leaves);
  auto grads = g.backward(seed);

  auto eval = [&](const std::vector<Tensor>& inputs) {
    Graph gv(false);
    std::vector<Var> vs;
    for (const Tensor& t : inputs) vs.push_back(gv.leaf(t));
    return gv.value(c.build(gv, vs))[0];
  };

  double worst = 0.0;
  std::vector<Tensor> probe = c.inputs;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const Tensor& analytic = grads.at("in" + std::to_string(i));
    for (std::size_t e = 0; e < probe[i].size(); ++e) {
      const double saved = probe[i][e];
      probe[i][e] = saved + step;
      const double hi = eval(probe);
      probe[i][e] = saved - step;
      const double lo = eval(probe);
      probe[i][e] = saved;
      const double fd = (hi - lo) / (2.0 * step);
      worst = std::max(worst, relative_error(analytic[e], fd));
    }
  }
  return worst;
}

// Scalar formed as sum(op_output * random_weights) so every output element
// carries an independent weight.
inline Var weighted_sum(Graph& g, Var y, Var weights) {
  return g.sum_all(g.mul(y, weights));
}

}  // namespace detail

inline std::vector<PrimitiveReport> check_primitives(const Options& opt) {
  using detail::CheckCase;
  using detail::random_tensor;
  using detail::random_tensor_offzero;

  std::vector<std::pair<std::string, std::function<CheckCase(Rng&)>>> cases;

  cases.emplace_back("conv2d", [](Rng& rng) {
    const std::size_t C = rng.uniform_int(1, 3), K = rng.uniform_int(1, 3);
    const std::size_t kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
    const std::size_t H = rng.uniform_int(kh, kh + 3),
                      W = rng.uniform_int(kw, kw + 3);
    const int stride = static_cast<int>(rng.uniform_int(1, 2));
    const int padding = static_cast<int>(rng.uniform_int(0, 1));
    const std::size_t pad = static_cast<std::size_t>(padding);
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    CheckCase c;
    c.inputs = {random_tensor(rng, {C, H, W}),
                random_tensor(rng, {K, C, kh, kw}), random_tensor(rng, {K}),
                random_tensor(rng, {K, Ho, Wo})};
    c.build = [stride, padding](Graph& g, const std::vector<Var>& in) {
      return detail::weighted_sum(
          g, g.conv2d(in[0], in[1], in[2], stride, padding), in[3]);
    };
    return c;
  });

  cases.emplace_back("relu", [](Rng& rng) {
    const std::size_t n = rng.uniform_int(4, 24);
    CheckCase c;
    c.inputs = {random_tensor_offzero(rng, {n}), random_tensor(rng, {n})};
    c.build = [](Graph& g, const std::vector<Var>& in) {
      return detail::weighted_sum(g, g.relu(in[0]), in[1]);
    };
    return c;
  });

  cases.emplace_back("add", [](Rng& rng) {
    const std::size_t n = rng.uniform_int(4, 24);
    CheckCase c;
    c.inputs = {random_tensor(rng, {n}), random_tensor(rng, {n}),
                random_tensor(rng, {n})};
    c.build = [](Graph& g, const std::vector<Var>& in) {
      return detail::weighted_sum(g, g.add(in[0], in[1]), in[2]);
    };
    return c;
  });

  cases.emplace_back("mul", [](Rng& rng) {
    const std::size_t n = rng.uniform_int(4, 24);
    CheckCase c;
    c.inputs = {random_tensor(rng, {n}), random_tensor(rng, {n}),
                random_tensor(rng, {n})};
    c.build = [](Graph& g, const std::vector<Var>& in) {
      return detail::weighted_sum(g, g.mul(in[0], in[1]), in[2]);
    };
    return c;
  });

  cases.emplace_back("scale", [](Rng& rng) {
    const std::size_t n = rng.uniform_int(4, 24);
    const double s = rng.uniform(-2.0, 2.0);
    CheckCase c;
    c.inputs = {random_tensor(rng, {n}), random_tensor(rng, {n})};
    c.build = [s](Graph& g, const std::vector<Var>& in) {
      return detail::weighted_sum(g, g.scale(in[0], s), in[1]);
    };
    return c;
  });

  cases.emplace_back("softmax_channels", [](Rng& rng) {
    const std::size_t L = rng.uniform_int(2, 5);
    const std::size_t H = rng.uniform_int(1, 4), W = rng.uniform_int(1, 4);
    CheckCase c;
    c.inputs = {random_tensor(rng, {L, H, W}, -2.0, 2.0),
                random_tensor(rng, {L, H, W})};
    c.build = [](Graph& g, const std::vector<Var>& in) {
      return detail::weighted_sum(g, g.softmax_channels(in[0]), in[1]);
    };
    return c;
  });

  cases.emplace_back("bilinear_upsample", [](Rng& rng) {
    const std::size_t h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    const std::size_t H = rng.uniform_int(h, 8), W = rng.uniform_int(w, 8);
    CheckCase c;
    c.inputs = {random_tensor(rng, {h, w}), random_tensor(rng, {H, W})};
    c.build = [H, W](Graph& g, const std::vector<Var>& in) {
      return detail::weighted_sum(g, g.bilinear_upsample(in[0], H, W), in[1]);
    };
    return c;
  });

  cases.emplace_back("upsample2x_nearest", [](Rng& rng) {
    const std::size_t C = rng.uniform_int(1, 2);
    const std::size_t h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    CheckCase c;
    c.inputs = {random_tensor(rng, {C, h, w}),
                random_tensor(rng, {C, 2 * h, 2 * w})};
    c.build = [](Graph& g, const std::vector<Var>& in) {
      return detail::weighted_sum(g, g.upsample2x_nearest(in[0]), in[1]);
    };
    return c;
  });

  cases.emplace_back("concat_channels", [](Rng& rng) {
    const std::size_t Ca = rng.uniform_int(1, 3), Cb = rng.uniform_int(1, 3);
    const std::size_t H = rng.uniform_int(1, 4), W = rng.uniform_int(1, 4);
    CheckCase c;
    c.inputs = {random_tensor(rng, {Ca, H, W}), random_tensor(rng, {Cb, H, W}),
                random_tensor(rng, {Ca + Cb, H, W})};
    c.build = [](Graph& g, const std::vector<Var>& in) {
      return detail::weighted_sum(g, g.concat_channels(in[0], in[1]), in[2]);
    };
    return c;
  });

  cases.emplace_back("select_sum", [](Rng& rng) {
    const std::size_t L = rng.uniform_int(2, 4);
    const std::size_t H = rng.uniform_int(2, 5), W = rng.uniform_int(2, 5);
    const std::size_t cls = rng.uniform_int(0, L - 1);
    std::vector<std::size_t> pixels;
    for (std::size_t p = 0; p < H * W; ++p)
      if (rng.uniform() < 0.4) pixels.push_back(p);
    CheckCase c;
    c.inputs = {random_tensor(rng, {L, H, W})};
    c.build = [cls, pixels](Graph& g, const std::vector<Var>& in) {
      return g.select_sum(in[0], cls, pixels);
    };
    return c;
  });

  cases.emplace_back("sum_all", [](Rng& rng) {
    const std::size_t n = rng.uniform_int(4, 24);
    CheckCase c;
    c.inputs = {random_tensor(rng, {n})};
    c.build = [](Graph& g, const std::vector<Var>& in) {
      return g.sum_all(in[0]);
    };
    return c;
  });

  cases.emplace_back("cross_entropy_mean", [](Rng& rng) {
    const std::size_t L = rng.uniform_int(2, 4);
    const std::size_t H = rng.uniform_int(1, 4), W = rng.uniform_int(1, 4);
    std::vector<int> labels(H * W);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, L - 1));
    CheckCase c;
    c.inputs = {random_tensor(rng, {L, H, W}, -2.0, 2.0)};
    c.build = [labels](Graph& g, const std::vector<Var>& in) {
      return g.cross_entropy_mean(in[0], labels);
    };
    return c;
  });

  std::vector<PrimitiveReport> reports;
  for (const auto& [name, make_case] : cases) {
    Rng rng(mix_seed(opt.seed, std::hash<std::string>{}(name)));
    PrimitiveReport report;
    report.name = name;
    report.trials = opt.trials;
    for (std::size_t t = 0; t < opt.trials; ++t) {
      const detail::CheckCase c = make_case(rng);
      report.max_rel_err = std::max(
          report.max_rel_err, detail::case_error(c, opt.step, opt.inject_fault));
    }
    reports.push_back(std::move(report));
  }
  return reports;
}

// Finite-difference check of the gradients a FeatureTap reports at every
// named layer, probing the tapped activations directly through a
// value-mode replacement hook.
inline std::vector<PrimitiveReport> check_layer_taps(
    const Options& opt, std::size_t images_per_layer = 2,
    std::size_t elements_per_image = 96) {
  NetworkConfig cfg;
  cfg.encoder_widths = {4, 8};
  cfg.decoder_widths = {8, 4};
  cfg.height = cfg.width = 16;
  cfg.seed = mix_seed(opt.seed, 0xA11);
  const Model model = Model::build(cfg);
  const std::size_t cls = 1;

  std::vector<PrimitiveReport> reports;
  for (const std::string& layer : model.layer_names()) {
    Rng rng(mix_seed(opt.seed, std::hash<std::string>{}(layer)));
    PrimitiveReport report;
    report.name = "tap:" + layer;
    report.trials = images_per_layer;
    for (std::size_t n = 0; n < images_per_layer; ++n) {
      const Tensor image =
          detail::random_tensor(rng, {3, cfg.height, cfg.width}, 0.0, 1.0);
      std::vector<std::size_t> pix;
      for (std::size_t p = 0; p < cfg.height * cfg.width; ++p)
        if (rng.uniform() < 0.3) pix.push_back(p);
      if (pix.empty()) pix.push_back(0);
      const PixelSet region =
          PixelSet::from_linear(cfg.height, cfg.width, pix);

      const FeatureTap tap =
          model.tap_forward_backward(image, cls, region, layer);

      auto scalar_with = [&](const Tensor& replaced) {
        const LayerHook hook = [&](const std::string& name,
                                   const Tensor& act) {
          return name == layer ? replaced : act;
        };
        const Tensor& logits =
            model.forward_capture(image, hook).output.logits;
        const std::size_t hw = cfg.height * cfg.width;
        double acc = 0.0;
        for (std::size_t p : region.linear()) acc += logits[cls * hw + p];
        return acc;
      };

      Tensor probe = tap.activations;
      const std::size_t total = probe.size();
      for (std::size_t s = 0; s < std::min(elements_per_image, total); ++s) {
        const std::size_t e =
            total <= elements_per_image
                ? s
                : static_cast<std::size_t>(rng.uniform_int(0, total - 1));
        const double saved = probe[e];
        probe[e] = saved + opt.step;
        const double hi = scalar_with(probe);
        probe[e] = saved - opt.step;
        const double lo = scalar_with(probe);
        probe[e] = saved;
        const double fd = (hi - lo) / (2.0 * opt.step);
        report.max_rel_err =
            std::max(report.max_rel_err, relative_error(tap.gradients[e], fd));
      }
    }
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace segxai::gradcheck
