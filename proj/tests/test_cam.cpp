#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "segxai/cam.hpp"
#include "segxai/gradcheck.hpp"
#include "segxai/network.hpp"

using namespace segxai;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1,
                     double hi = 1) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

NetworkConfig tiny_config(std::vector<std::size_t> enc,
                          std::vector<std::size_t> dec, std::uint64_t seed,
                          std::size_t size = 16) {
  NetworkConfig cfg;
  cfg.encoder_widths = std::move(enc);
  cfg.decoder_widths = std::move(dec);
  cfg.height = cfg.width = size;
  cfg.seed = seed;
  return cfg;
}

Tensor random_image(Rng& rng, const NetworkConfig& cfg) {
  Tensor img({cfg.input_channels, cfg.height, cfg.width});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  return img;
}

}  // namespace

// --------------------------------------------------------------------------
// postprocessing

TEST_CASE("postprocess: all-negative raw maps collapse to zero") {
  Tensor raw({2, 2}, {-1, -2, -0.5, -9});
  const SaliencyMap map = postprocess_saliency(raw, 4, 4, "m", "l",
                                               PixelSet(4, 4));
  for (std::size_t i = 0; i < map.values.size(); ++i)
    REQUIRE(map.values[i] == 0.0);
}

TEST_CASE("postprocess: constant positive raw maps normalize to one") {
  const SaliencyMap map = postprocess_saliency(Tensor::full({3, 3}, 2.5), 6, 6,
                                               "m", "l", PixelSet(6, 6));
  for (std::size_t i = 0; i < map.values.size(); ++i)
    REQUIRE(map.values[i] == 1.0);
}

TEST_CASE("postprocess: min-max normalization at equal size") {
  Tensor raw({2, 2}, {0, 2, 4, 0});
  const SaliencyMap map =
      postprocess_saliency(raw, 2, 2, "m", "l", PixelSet(2, 2));
  REQUIRE(map.values[0] == 0.0);
  REQUIRE(map.values[1] == 0.5);
  REQUIRE(map.values[2] == 1.0);
  REQUIRE(map.values[3] == 0.0);
}

// --------------------------------------------------------------------------
// seg-grad-cam

TEST_CASE("grad-cam: single channel with positive gradients reduces to "
          "normalized relu activations") {
  Rng rng(17);
  const Tensor A = random_tensor(rng, {1, 4, 4}, -1, 1);
  const Tensor G = random_tensor(rng, {1, 4, 4}, 0.1, 1.0);
  const auto alpha = grad_cam_weights(A, G);
  REQUIRE(alpha.size() == 1);
  REQUIRE(alpha[0] > 0.0);
  const SaliencyMap got = postprocess_saliency(
      weighted_channel_sum(A, alpha), 8, 8, "m", "l", PixelSet(8, 8));
  // independent route: normalize the upsampled relu directly
  const Tensor up = bilinear_upsample(relu(channel(A, 0)), 8, 8);
  const double mn = min_value(up), mx = max_value(up);
  for (std::size_t i = 0; i < got.values.size(); ++i)
    REQUIRE(got.values[i] ==
            Catch::Approx((up[i] - mn) / (mx - mn)).margin(1e-12));
}

TEST_CASE("grad-cam: all-negative gradients with non-negative activations "
          "zero out") {
  Rng rng(18);
  const Tensor A = random_tensor(rng, {3, 4, 4}, 0.0, 1.0);
  const Tensor G = random_tensor(rng, {3, 4, 4}, -1.0, -0.1);
  const auto alpha = grad_cam_weights(A, G);
  for (double a : alpha) REQUIRE(a < 0.0);
  const SaliencyMap map = postprocess_saliency(
      weighted_channel_sum(A, alpha), 8, 8, "m", "l", PixelSet(8, 8));
  for (std::size_t i = 0; i < map.values.size(); ++i)
    REQUIRE(map.values[i] == 0.0);
}

TEST_CASE("grad-cam: two-channel hand case") {
  Tensor A({2, 2, 2}, {1, 0, 0, 0, /* A2 */ 0, 0, 0, 2});
  Tensor G({2, 2, 2}, {1, 1, 1, 1, /* G2 */ -1, -1, -1, -1});
  const auto alpha = grad_cam_weights(A, G);
  REQUIRE(alpha[0] == 1.0);
  REQUIRE(alpha[1] == -1.0);
  const Tensor raw = weighted_channel_sum(A, alpha);
  REQUIRE(raw.at(0, std::size_t(0)) == 1.0);
  REQUIRE(raw.at(0, std::size_t(1)) == 0.0);
  REQUIRE(raw.at(1, std::size_t(0)) == 0.0);
  REQUIRE(raw.at(1, std::size_t(1)) == -2.0);
  const SaliencyMap map =
      postprocess_saliency(raw, 2, 2, "m", "l", PixelSet(2, 2));
  REQUIRE(map.values[0] == 1.0);
  REQUIRE(map.values[1] == 0.0);
  REQUIRE(map.values[2] == 0.0);
  REQUIRE(map.values[3] == 0.0);
}

TEST_CASE("grad-cam matches a direct loop of its weight rule to 1e-10") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t K = rng.uniform_int(1, 5);
    const std::size_t h = rng.uniform_int(2, 5), w = rng.uniform_int(2, 5);
    const Tensor A = random_tensor(rng, {K, h, w});
    const Tensor G = random_tensor(rng, {K, h, w});
    const auto alpha = grad_cam_weights(A, G);
    for (std::size_t k = 0; k < K; ++k) {
      double acc = 0.0;
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) acc += G.at(k, u, v);
      REQUIRE(std::abs(alpha[k] - acc / static_cast<double>(h * w)) < 1e-10);
    }
  }
}

// --------------------------------------------------------------------------
// seg-grad-cam++

TEST_CASE("grad-cam++: zero gradient field gives zero weights and saliency") {
  Rng rng(20);
  const Tensor A = random_tensor(rng, {2, 3, 3});
  const Tensor G({2, 3, 3});
  const auto alpha = grad_cam_pp_weights(A, G);
  for (double a : alpha) REQUIRE(a == 0.0);
}

TEST_CASE("grad-cam++: the 1/N fallback reproduces grad-cam under uniform "
          "positive gradients") {
  // sum(A * G^3) is pushed below -2 G^2 so every pixel takes the fallback
  Tensor A({1, 2, 2}, {3.0, -10.0, 2.0, -10.0});
  Tensor G = Tensor::full({1, 2, 2}, 1.0);
  Tensor coeff;
  const auto alpha_pp = grad_cam_pp_weights(A, G, &coeff);
  for (std::size_t i = 0; i < coeff.size(); ++i)
    REQUIRE(coeff[i] == 0.25);  // w = 1/N
  const auto alpha_gc = grad_cam_weights(A, G);
  REQUIRE(alpha_pp[0] == Catch::Approx(alpha_gc[0]).margin(1e-15));
  const SaliencyMap pp = postprocess_saliency(
      weighted_channel_sum(A, alpha_pp), 2, 2, "m", "l", PixelSet(2, 2));
  const SaliencyMap gc = postprocess_saliency(
      weighted_channel_sum(A, alpha_gc), 2, 2, "m", "l", PixelSet(2, 2));
  std::size_t argmax_pp = 0, argmax_gc = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    if (pp.values[i] > pp.values[argmax_pp]) argmax_pp = i;
    if (gc.values[i] > gc.values[argmax_gc]) argmax_gc = i;
  }
  REQUIRE(argmax_pp == argmax_gc);
}

TEST_CASE("grad-cam++: closed form on the K=1 scripted case") {
  Tensor A({1, 1, 2}, {1.0, 3.0});
  Tensor G({1, 1, 2}, {2.0, 4.0});
  Tensor coeff;
  const auto alpha = grad_cam_pp_weights(A, G, &coeff);
  // scripted evaluation of w = G^2 / (2 G^2 + sum(A G^3) + eps)
  const double eps = 1e-8;
  const double s = 1.0 * 8.0 + 3.0 * 64.0;
  const double w0 = 4.0 / (8.0 + s + eps);
  const double w1 = 16.0 / (32.0 + s + eps);
  REQUIRE(coeff[0] == Catch::Approx(w0).margin(1e-15));
  REQUIRE(coeff[1] == Catch::Approx(w1).margin(1e-15));
  REQUIRE(alpha[0] == Catch::Approx(w0 * 2.0 + w1 * 4.0).margin(1e-15));
}

// --------------------------------------------------------------------------
// seg-xgrad-cam

TEST_CASE("xgrad-cam equals grad-cam on spatially constant channels") {
  Rng rng(21);
  const std::size_t K = 3, h = 4, w = 4;
  Tensor A({K, h, w});
  for (std::size_t k = 0; k < K; ++k) {
    const double v = rng.uniform(0.5, 2.0);
    for (std::size_t i = 0; i < h * w; ++i) A[k * h * w + i] = v;
  }
  const Tensor G = random_tensor(rng, {K, h, w});
  const auto ax = xgrad_cam_weights(A, G);
  const auto ag = grad_cam_weights(A, G);
  for (std::size_t k = 0; k < K; ++k)
    REQUIRE(std::abs(ax[k] - ag[k]) < 1e-9);
  const SaliencyMap mx = postprocess_saliency(
      weighted_channel_sum(A, ax), h, w, "m", "l", PixelSet(h, w));
  const SaliencyMap mg = postprocess_saliency(
      weighted_channel_sum(A, ag), h, w, "m", "l", PixelSet(h, w));
  for (std::size_t i = 0; i < mx.values.size(); ++i)
    REQUIRE(mx.values[i] == Catch::Approx(mg.values[i]).margin(1e-9));
}

TEST_CASE("xgrad-cam guards all-zero channels without NaN") {
  Tensor A({1, 2, 2});
  Tensor G = Tensor::full({1, 2, 2}, 3.0);
  const auto alpha = xgrad_cam_weights(A, G);
  REQUIRE(alpha[0] == 0.0);
}

TEST_CASE("xgrad-cam matches a direct loop evaluation to 1e-10") {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t K = rng.uniform_int(1, 4);
    const std::size_t h = rng.uniform_int(2, 5), w = rng.uniform_int(2, 5);
    const Tensor A = random_tensor(rng, {K, h, w});
    const Tensor G = random_tensor(rng, {K, h, w});
    const auto alpha = xgrad_cam_weights(A, G);
    for (std::size_t k = 0; k < K; ++k) {
      double total = 0.0;
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) total += A.at(k, u, v);
      double want = 0.0;
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v)
          want += A.at(k, u, v) / (total + 1e-8) * G.at(k, u, v);
      REQUIRE(std::abs(alpha[k] - want) < 1e-10);
    }
  }
}

TEST_CASE("positive scaling of activations keeps the xgrad and eigen argmax") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t K = rng.uniform_int(2, 4);
    const Tensor A = random_tensor(rng, {K, 4, 4}, 0.0, 1.0);
    const Tensor G = random_tensor(rng, {K, 4, 4});
    const double s = rng.uniform(0.5, 20.0);
    Tensor As = A;
    for (std::size_t i = 0; i < As.size(); ++i) As[i] *= s;

    const Tensor m1 = weighted_channel_sum(A, xgrad_cam_weights(A, G));
    const Tensor m2 = weighted_channel_sum(As, xgrad_cam_weights(As, G));
    std::size_t a1 = 0, a2 = 0;
    for (std::size_t i = 0; i < m1.size(); ++i) {
      if (m1[i] > m1[a1]) a1 = i;
      if (m2[i] > m2[a2]) a2 = i;
    }
    REQUIRE(a1 == a2);

    const Tensor e1 = eigen_raw_map(A);
    const Tensor e2 = eigen_raw_map(As);
    std::size_t b1 = 0, b2 = 0;
    for (std::size_t i = 0; i < e1.size(); ++i) {
      if (e1[i] > e1[b1]) b1 = i;
      if (e2[i] > e2[b2]) b2 = i;
    }
    REQUIRE(b1 == b2);
  }
}

// --------------------------------------------------------------------------
// seg-score-cam

TEST_CASE("score-cam: K=1 softmax collapses to weight one") {
  const NetworkConfig cfg = tiny_config({1}, {1}, 41);
  const Model m = Model::build(cfg);
  Rng rng(4);
  const Tensor img = random_image(rng, cfg);
  const PixelSet region = PixelSet::full(cfg.height, cfg.width);
  CamIntermediates inter;
  const SaliencyMap map = seg_score_cam(m, img, 1, region, "dec0", &inter);
  REQUIRE(inter.channel_weights.size() == 1);
  REQUIRE(inter.channel_weights[0] == 1.0);
  // with a single channel the map is the normalized activation
  const Tensor A = m.forward_capture(img, nullptr).activations.at("dec0");
  const SaliencyMap direct =
      postprocess_saliency(channel(A, 0), cfg.height, cfg.width, "m", "l",
                           region);
  for (std::size_t i = 0; i < map.values.size(); ++i)
    REQUIRE(map.values[i] == Catch::Approx(direct.values[i]).margin(1e-12));
}

TEST_CASE("score-cam: a dead channel scores exactly zero confidence delta") {
  const NetworkConfig cfg = tiny_config({2}, {2}, 43);
  Model m = Model::build(cfg);
  // silence channel 0 of dec0: zero incoming kernels, strongly negative bias
  auto& dec0 = m.layers()[1];
  REQUIRE(dec0.name == "dec0");
  const std::size_t per_out = dec0.kernels.size() / dec0.kernels.extent(0);
  for (std::size_t i = 0; i < per_out; ++i) dec0.kernels[i] = 0.0;
  dec0.bias[0] = -1.0;
  Rng rng(5);
  const Tensor img = random_image(rng, cfg);
  const PixelSet region = PixelSet::full(cfg.height, cfg.width);
  CamIntermediates inter;
  seg_score_cam(m, img, 1, region, "dec0", &inter);
  REQUIRE(inter.confidence_deltas[0] == 0.0);
}

TEST_CASE("score-cam alphas match an independent scripted pipeline") {
  const NetworkConfig cfg = tiny_config({2}, {2}, 47);
  const Model m = Model::build(cfg);
  Rng rng(6);
  const Tensor img = random_image(rng, cfg);
  std::vector<std::size_t> pix;
  for (std::size_t p = 0; p < cfg.height * cfg.width; ++p)
    if (rng.uniform() < 0.4) pix.push_back(p);
  const PixelSet region = PixelSet::from_linear(cfg.height, cfg.width, pix);

  CamIntermediates inter;
  seg_score_cam(m, img, 1, region, "dec0", &inter);

  // scripted re-evaluation of the masking pipeline
  const Tensor A = m.forward_capture(img, nullptr).activations.at("dec0");
  const std::size_t hw = cfg.height * cfg.width;
  auto region_score = [&](const SegmentationOutput& out) {
    double acc = 0.0;
    for (std::size_t p : region.linear()) acc += out.probabilities[hw + p];
    return acc / static_cast<double>(region.size());
  };
  const double base = region_score(m.forward(Tensor({3, 16, 16})));
  std::vector<double> c(A.extent(0));
  for (std::size_t k = 0; k < A.extent(0); ++k) {
    Tensor up = bilinear_upsample(channel(A, k), cfg.height, cfg.width);
    const double mn = min_value(up), mx = max_value(up);
    Tensor mask({cfg.height, cfg.width});
    if (mx > mn)
      for (std::size_t i = 0; i < hw; ++i) mask[i] = (up[i] - mn) / (mx - mn);
    else if (mx > 0.0)
      for (std::size_t i = 0; i < hw; ++i) mask[i] = 1.0;
    Tensor masked({3, cfg.height, cfg.width});
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < hw; ++i)
        masked[ch * hw + i] = img[ch * hw + i] * mask[i];
    c[k] = region_score(m.forward(masked)) - base;
  }
  double mxc = std::max(c[0], c[1]);
  std::vector<double> want(c.size());
  double denom = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    want[k] = std::exp(c[k] - mxc);
    denom += want[k];
  }
  for (double& v : want) v /= denom;
  for (std::size_t k = 0; k < want.size(); ++k) {
    REQUIRE(inter.confidence_deltas[k] == Catch::Approx(c[k]).margin(1e-14));
    REQUIRE(inter.channel_weights[k] ==
            Catch::Approx(want[k]).margin(1e-14));
  }
}

// --------------------------------------------------------------------------
// seg-ablation-cam

TEST_CASE("ablation-cam: a channel with zeroed outgoing weights has zero "
          "importance") {
  const NetworkConfig cfg = tiny_config({2}, {2}, 53);
  Model m = Model::build(cfg);
  auto& head = m.layers()[2];
  REQUIRE(head.name == "head");
  // zero the head kernels that consume dec0 channel 0
  for (std::size_t k = 0; k < head.kernels.extent(0); ++k)
    head.kernels.at(k, std::size_t(0), std::size_t(0), std::size_t(0)) = 0.0;
  Rng rng(7);
  const Tensor img = random_image(rng, cfg);
  const PixelSet region = PixelSet::full(cfg.height, cfg.width);
  CamIntermediates inter;
  seg_ablation_cam(m, img, 1, region, "dec0", &inter);
  REQUIRE(inter.channel_weights[0] == 0.0);
}

TEST_CASE("ablation-cam alphas equal the per-channel rebuild oracle exactly") {
  const NetworkConfig cfg = tiny_config({2, 4}, {4, 2}, 59);
  const Model m = Model::build(cfg);
  Rng rng(8);
  const Tensor img = random_image(rng, cfg);
  const PixelSet region = PixelSet::full(cfg.height, cfg.width);
  const std::string layer = "dec0";

  CamIntermediates inter;
  seg_ablation_cam(m, img, 1, region, layer, &inter);

  // oracle: capture activations, zero channel k in a copy, resume the
  // forward pass from a wholesale replacement of that layer's output
  const ForwardCapture cap = m.forward_capture(img, nullptr);
  const Tensor& A = cap.activations.at(layer);
  const std::size_t hw = cfg.height * cfg.width;
  auto region_score = [&](const SegmentationOutput& out) {
    double acc = 0.0;
    for (std::size_t p : region.linear()) acc += out.probabilities[hw + p];
    return acc / static_cast<double>(region.size());
  };
  const double y = region_score(cap.output);
  for (std::size_t k = 0; k < A.extent(0); ++k) {
    Tensor replaced = A;
    const std::size_t chw = A.extent(1) * A.extent(2);
    std::fill(replaced.data() + k * chw, replaced.data() + (k + 1) * chw, 0.0);
    const LayerHook hook = [&](const std::string& name, const Tensor& act) {
      return name == layer ? replaced : act;
    };
    const double yk = region_score(m.forward_capture(img, hook).output);
    const double want = (y - yk) / (y + 1e-8);
    REQUIRE(inter.channel_weights[k] == want);
    REQUIRE(inter.ablation_scores[k] == yk);
  }
}

TEST_CASE("ablation-cam raises on a degenerate baseline score") {
  const NetworkConfig cfg = tiny_config({2}, {2}, 61);
  Model m = Model::build(cfg);
  m.layers().back().bias[1] = -60.0;  // class-1 probability collapses
  Rng rng(9);
  const Tensor img = random_image(rng, cfg);
  REQUIRE_THROWS_WITH(
      seg_ablation_cam(m, img, 1, PixelSet::full(cfg.height, cfg.width),
                       "dec0"),
      Catch::Matchers::ContainsSubstring("degenerate baseline"));
}

// --------------------------------------------------------------------------
// seg-eigen-cam

TEST_CASE("eigen-cam: rank-1 activations recover the spatial pattern") {
  Rng rng(24);
  const std::size_t K = 3, h = 4, w = 5;
  Tensor U({h, w});
  for (std::size_t i = 0; i < U.size(); ++i) U[i] = rng.uniform(0.0, 1.0);
  const double coeff[3] = {2.0, -1.0, 0.5};
  Tensor A({K, h, w});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < h * w; ++i) A[k * h * w + i] = coeff[k] * U[i];

  EigenFactors f;
  const Tensor raw = eigen_raw_map(A, &f);
  REQUIRE(f.singular_values.size() == K);
  REQUIRE(f.singular_values[0] > 0.0);
  REQUIRE(f.singular_values[1] < 1e-8 * f.singular_values[0]);
  // V1 is the normalized coefficient vector, up to sign
  const double cn = std::sqrt(4.0 + 1.0 + 0.25);
  double dot = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    dot += f.first_right_singular[k] * coeff[k] / cn;
  REQUIRE(std::abs(std::abs(dot) - 1.0) < 1e-8);
  // the sign-fixed projection is proportional to the (non-negative) pattern
  const double scale0 = raw[0] / U[0];
  REQUIRE(scale0 > 0.0);
  for (std::size_t i = 0; i < raw.size(); ++i)
    REQUIRE(raw[i] == Catch::Approx(scale0 * U[i]).margin(1e-9));
}

TEST_CASE("eigen-cam: negated activations give the identical map") {
  Rng rng(25);
  const Tensor A = random_tensor(rng, {4, 5, 5});
  Tensor neg = A;
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
  const Tensor m1 = eigen_raw_map(A);
  const Tensor m2 = eigen_raw_map(neg);
  for (std::size_t i = 0; i < m1.size(); ++i) REQUIRE(m1[i] == m2[i]);
}

TEST_CASE("eigen-cam V1 matches a dense Gram eigensolver to 1e-6") {
  Rng rng(26);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t K = rng.uniform_int(2, 6);
    const std::size_t h = rng.uniform_int(3, 6), w = rng.uniform_int(3, 6);
    const Tensor A = random_tensor(rng, {K, h, w});
    EigenFactors f;
    eigen_raw_map(A, &f);

    // independent dense route over the same Gram matrix
    const std::size_t N = h * w;
    std::vector<double> gram(K * K, 0.0);
    for (std::size_t a = 0; a < K; ++a)
      for (std::size_t b = 0; b < K; ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i)
          acc += A[a * N + i] * A[b * N + i];
        gram[a * K + b] = acc;
      }
    const auto dense = oracle::jacobi_eigen(gram, K);
    double dot = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      dot += dense.vectors[0][k] * f.first_right_singular[k];
    const double sign = dot >= 0 ? 1.0 : -1.0;
    for (std::size_t k = 0; k < K; ++k)
      REQUIRE(f.first_right_singular[k] ==
              Catch::Approx(sign * dense.vectors[0][k]).margin(1e-6));
    for (std::size_t k = 0; k < K; ++k) {
      const double want = std::sqrt(std::max(dense.values[k], 0.0));
      REQUIRE(f.singular_values[k] == Catch::Approx(want).margin(1e-6));
    }
    // non-negative, non-increasing
    for (std::size_t k = 0; k + 1 < K; ++k) {
      REQUIRE(f.singular_values[k] >= -1e-12);
      REQUIRE(f.singular_values[k] + 1e-9 >= f.singular_values[k + 1]);
    }
  }
}

TEST_CASE("eigen-cam on all-zero activations gives an all-zero map") {
  const Tensor raw = eigen_raw_map(Tensor({3, 4, 4}));
  for (std::size_t i = 0; i < raw.size(); ++i) REQUIRE(raw[i] == 0.0);
}

// --------------------------------------------------------------------------
// cross-method properties

TEST_CASE("every method emits maps in [0,1] with max one or all zero") {
  const NetworkConfig cfg = tiny_config({4, 8}, {8, 4}, 67);
  const Model m = Model::build(cfg);
  Rng rng(10);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor img = random_image(rng, cfg);
    const PixelSet region = PixelSet::full(cfg.height, cfg.width);
    for (const auto& method : cam_method_ids()) {
      const SaliencyMap map =
          compute_saliency(method, m, img, 1, region, "dec0");
      double mx = 0.0;
      for (std::size_t i = 0; i < map.values.size(); ++i) {
        REQUIRE(map.values[i] >= 0.0);
        REQUIRE(map.values[i] <= 1.0);
        mx = std::max(mx, map.values[i]);
      }
      REQUIRE((mx == 1.0 || mx == 0.0));
    }
  }
}

TEST_CASE("gradient-free methods are unaffected by a prior gradient pass") {
  const NetworkConfig cfg = tiny_config({4}, {4}, 71);
  const Model m = Model::build(cfg);
  Rng rng(11);
  const Tensor img = random_image(rng, cfg);
  const PixelSet region = PixelSet::full(cfg.height, cfg.width);
  // fresh run
  const SaliencyMap score1 = seg_score_cam(m, img, 1, region, "dec0");
  const SaliencyMap abl1 = seg_ablation_cam(m, img, 1, region, "dec0");
  const SaliencyMap eig1 = seg_eigen_cam(m, img, 1, region, "dec0");
  // run again with the gradient machinery exercised in between
  m.tap_forward_backward(img, 1, region, "dec0");
  const SaliencyMap score2 = seg_score_cam(m, img, 1, region, "dec0");
  const SaliencyMap abl2 = seg_ablation_cam(m, img, 1, region, "dec0");
  const SaliencyMap eig2 = seg_eigen_cam(m, img, 1, region, "dec0");
  for (std::size_t i = 0; i < score1.values.size(); ++i) {
    REQUIRE(score1.values[i] == score2.values[i]);
    REQUIRE(abl1.values[i] == abl2.values[i]);
    REQUIRE(eig1.values[i] == eig2.values[i]);
  }
}

TEST_CASE("a single-pixel region reduces to per-pixel classification "
          "grad-cam") {
  const NetworkConfig cfg = tiny_config({4}, {4}, 73);
  const Model m = Model::build(cfg);
  Rng rng(12);
  const Tensor img = random_image(rng, cfg);
  const std::size_t pixel = 5 * cfg.width + 9;
  const PixelSet region =
      PixelSet::from_linear(cfg.height, cfg.width, {pixel});
  const FeatureTap tap = m.tap_forward_backward(img, 1, region, "dec0");
  // finite differences of that single logit w.r.t. the tapped activations
  Rng pick(13);
  Tensor probe = tap.activations;
  for (int s = 0; s < 60; ++s) {
    const std::size_t e = pick.uniform_int(0, probe.size() - 1);
    const auto scalar_with = [&](const Tensor& replaced) {
      const LayerHook hook = [&](const std::string& name, const Tensor& act) {
        return name == "dec0" ? replaced : act;
      };
      const Tensor& logits = m.forward_capture(img, hook).output.logits;
      return logits[cfg.height * cfg.width + pixel];
    };
    const double saved = probe[e];
    probe[e] = saved + 1e-5;
    const double hi = scalar_with(probe);
    probe[e] = saved - 1e-5;
    const double lo = scalar_with(probe);
    probe[e] = saved;
    REQUIRE(gradcheck::relative_error(tap.gradients[e], (hi - lo) / 2e-5) <
            1e-5);
  }
}
