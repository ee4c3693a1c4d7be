#pragma once
// Six CAM-family saliency methods adapted to semantic segmentation. Each
// maps (model, image, target class, pixel region, layer) to a normalized
// H x W saliency map. The gradient methods share one taped backward pass
// of sum-over-region class logits; the gradient-free methods (score,
// ablation, eigen) only run forward passes.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "segxai/common.hpp"
#include "segxai/network.hpp"
#include "segxai/pixel_set.hpp"
#include "segxai/tensor.hpp"

namespace segxai {

struct SaliencyMap {
  Tensor values;  // H x W in [0,1]; max exactly 1 unless identically zero
  std::string method;
  std::string layer;
  PixelSet region{0, 0};
};

// Per-method intermediates, kept for inspection and testing.
struct CamIntermediates {
  std::vector<double> channel_weights;      // alpha, length K
  Tensor pixel_coefficients;                // grad-cam++ w, K x h x w
  std::vector<double> confidence_deltas;    // score-cam C(A_k)
  std::vector<double> ablation_scores;      // ablation y_k
};

struct EigenFactors {
  Tensor matrix;                            // O, (h*w) x K
  std::vector<double> singular_values;      // non-increasing
  std::vector<double> first_right_singular; // V1, unit norm
};

inline const std::vector<std::string>& cam_method_ids() {
  static const std::vector<std::string> ids = {
      "seg-grad-cam",  "seg-grad-cam-pp",   "seg-xgrad-cam",
      "seg-score-cam", "seg-ablation-cam",  "seg-eigen-cam"};
  return ids;
}

// ---------------------------------------------------------------------------
// channel weighting rules (pure functions of a tap, directly testable)

// alpha_k = mean over pixels of G_k.
inline std::vector<double> grad_cam_weights(const Tensor& activations,
                                            const Tensor& gradients) {
  require_same_shape(activations, gradients, "grad_cam_weights");
  const std::size_t K = gradients.extent(0),
                    N = gradients.extent(1) * gradients.extent(2);
  std::vector<double> alpha(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < N; ++i) alpha[k] += gradients[k * N + i];
    alpha[k] /= static_cast<double>(N);
  }
  return alpha;
}

// alpha_k = sum_uv w_uv * relu(G_uv) with
// w_uv = G_uv^2 / (2 G_uv^2 + sum_uv(A * G^3) + eps); pixels whose
// denominator falls below eps fall back to w = 1/N.
inline std::vector<double> grad_cam_pp_weights(const Tensor& activations,
                                               const Tensor& gradients,
                                               Tensor* coefficients = nullptr) {
  require_same_shape(activations, gradients, "grad_cam_pp_weights");
  constexpr double eps = 1e-8;
  const std::size_t K = gradients.extent(0),
                    N = gradients.extent(1) * gradients.extent(2);
  std::vector<double> alpha(K, 0.0);
  if (coefficients) *coefficients = Tensor(gradients.shape());
  for (std::size_t k = 0; k < K; ++k) {
    double third_moment = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double g = gradients[k * N + i];
      third_moment += activations[k * N + i] * g * g * g;
    }
    for (std::size_t i = 0; i < N; ++i) {
      const double g = gradients[k * N + i];
      const double denom = 2.0 * g * g + third_moment + eps;
      const double w = denom < eps ? 1.0 / static_cast<double>(N)
                                   : (g * g) / denom;
      if (coefficients) (*coefficients)[k * N + i] = w;
      alpha[k] += w * (g > 0.0 ? g : 0.0);
    }
  }
  return alpha;
}

// alpha_k = sum_uv (A_uv / (sum_uv A + eps)) * G_uv.
inline std::vector<double> xgrad_cam_weights(const Tensor& activations,
                                             const Tensor& gradients) {
  require_same_shape(activations, gradients, "xgrad_cam_weights");
  constexpr double eps = 1e-8;
  const std::size_t K = gradients.extent(0),
                    N = gradients.extent(1) * gradients.extent(2);
  std::vector<double> alpha(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) total += activations[k * N + i];
    for (std::size_t i = 0; i < N; ++i)
      alpha[k] += activations[k * N + i] / (total + eps) * gradients[k * N + i];
  }
  return alpha;
}

// sum_k alpha_k * A_k over channels, giving the raw h x w map.
inline Tensor weighted_channel_sum(const Tensor& activations,
                                   const std::vector<double>& alpha) {
  if (alpha.size() != activations.extent(0))
    throw Error("weighted_channel_sum: " + std::to_string(alpha.size()) +
                " weights for " + std::to_string(activations.extent(0)) +
                " channels");
  const std::size_t h = activations.extent(1), w = activations.extent(2);
  Tensor raw({h, w});
  for (std::size_t k = 0; k < alpha.size(); ++k)
    for (std::size_t i = 0; i < h * w; ++i)
      raw[i] += alpha[k] * activations[k * h * w + i];
  raw.ensure_finite("weighted_channel_sum");
  return raw;
}

// ReLU -> bilinear upsample to (H, W) -> min-max normalize to [0,1].
// Identically-zero maps stay zero; constant positive maps normalize to 1.
inline SaliencyMap postprocess_saliency(const Tensor& raw, std::size_t H,
                                        std::size_t W, std::string method,
                                        std::string layer, PixelSet region) {
  raw.ensure_finite("postprocess_saliency");
  Tensor rect = relu(raw);
  SaliencyMap map;
  map.method = std::move(method);
  map.layer = std::move(layer);
  map.region = std::move(region);
  if (max_value(rect) == 0.0) {
    map.values = Tensor({H, W});
    return map;
  }
  Tensor up = bilinear_upsample(rect, H, W);
  const double mn = min_value(up), mx = max_value(up);
  if (mx > mn) {
    for (std::size_t i = 0; i < up.size(); ++i)
      up[i] = (up[i] - mn) / (mx - mn);
  } else {
    for (std::size_t i = 0; i < up.size(); ++i) up[i] = 1.0;
  }
  map.values = std::move(up);
  return map;
}

// ---------------------------------------------------------------------------
// gradient-weighted methods

inline SaliencyMap seg_grad_cam(const Model& model, const Tensor& image,
                                std::size_t target_class,
                                const PixelSet& region,
                                const std::string& layer,
                                CamIntermediates* inter = nullptr) {
  const FeatureTap tap =
      model.tap_forward_backward(image, target_class, region, layer);
  const auto alpha = grad_cam_weights(tap.activations, tap.gradients);
  if (inter) inter->channel_weights = alpha;
  return postprocess_saliency(weighted_channel_sum(tap.activations, alpha),
                              model.config().height, model.config().width,
                              "seg-grad-cam", layer, region);
}

inline SaliencyMap seg_grad_cam_pp(const Model& model, const Tensor& image,
                                   std::size_t target_class,
                                   const PixelSet& region,
                                   const std::string& layer,
                                   CamIntermediates* inter = nullptr) {
  const FeatureTap tap =
      model.tap_forward_backward(image, target_class, region, layer);
  const auto alpha = grad_cam_pp_weights(
      tap.activations, tap.gradients,
      inter ? &inter->pixel_coefficients : nullptr);
  if (inter) inter->channel_weights = alpha;
  return postprocess_saliency(weighted_channel_sum(tap.activations, alpha),
                              model.config().height, model.config().width,
                              "seg-grad-cam-pp", layer, region);
}

inline SaliencyMap seg_xgrad_cam(const Model& model, const Tensor& image,
                                 std::size_t target_class,
                                 const PixelSet& region,
                                 const std::string& layer,
                                 CamIntermediates* inter = nullptr) {
  const FeatureTap tap =
      model.tap_forward_backward(image, target_class, region, layer);
  const auto alpha = xgrad_cam_weights(tap.activations, tap.gradients);
  if (inter) inter->channel_weights = alpha;
  return postprocess_saliency(weighted_channel_sum(tap.activations, alpha),
                              model.config().height, model.config().width,
                              "seg-xgrad-cam", layer, region);
}

// ---------------------------------------------------------------------------
// gradient-free methods

// mean class probability over the region, the shared perturbation score
inline double region_class_score(const SegmentationOutput& out,
                                 const PixelSet& region,
                                 std::size_t target_class) {
  if (region.empty()) throw Error("region score: empty pixel region");
  const std::size_t H = out.probabilities.extent(1),
                    W = out.probabilities.extent(2);
  double acc = 0.0;
  for (std::size_t p : region.linear())
    acc += out.probabilities[target_class * H * W + p];
  return acc / static_cast<double>(region.size());
}

// Min-max to [0,1] for input masking; flat maps become all-ones when
// positive, all-zeros otherwise.
inline Tensor normalize_mask(const Tensor& map) {
  const double mn = min_value(map), mx = max_value(map);
  Tensor out(map.shape());
  if (mx > mn) {
    for (std::size_t i = 0; i < map.size(); ++i)
      out[i] = (map[i] - mn) / (mx - mn);
  } else if (mx > 0.0) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0;
  }
  return out;
}

inline std::vector<double> softmax_vector(const std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  std::vector<double> out(v.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    denom += out[i];
  }
  for (double& x : out) x /= denom;
  return out;
}

// Channel confidence: upsample A_k to input size, min-max normalize, mask
// every input channel with it, and measure the change of the region score
// against an all-zero baseline image. alpha = softmax of those changes.
inline SaliencyMap seg_score_cam(const Model& model, const Tensor& image,
                                 std::size_t target_class,
                                 const PixelSet& region,
                                 const std::string& layer,
                                 CamIntermediates* inter = nullptr) {
  const ForwardCapture cap = model.forward_capture(image, nullptr);
  const Tensor& A = cap.activations.at(layer);
  const std::size_t K = A.extent(0);
  const std::size_t H = model.config().height, W = model.config().width;

  const double baseline = region_class_score(
      model.forward(Tensor(image.shape())), region, target_class);

  std::vector<double> confidence(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor mask = normalize_mask(bilinear_upsample(channel(A, k), H, W));
    Tensor masked(image.shape());
    for (std::size_t c = 0; c < image.extent(0); ++c)
      for (std::size_t i = 0; i < H * W; ++i)
        masked[c * H * W + i] = image[c * H * W + i] * mask[i];
    confidence[k] =
        region_class_score(model.forward(masked), region, target_class) -
        baseline;
  }
  const auto alpha = softmax_vector(confidence);
  if (inter) {
    inter->confidence_deltas = confidence;
    inter->channel_weights = alpha;
  }
  return postprocess_saliency(weighted_channel_sum(A, alpha), H, W,
                              "seg-score-cam", layer, region);
}

// alpha_k = (y - y_k) / (y + eps) where y_k is the region score with
// channel k of the tapped layer forced to zero during the forward pass.
inline SaliencyMap seg_ablation_cam(const Model& model, const Tensor& image,
                                    std::size_t target_class,
                                    const PixelSet& region,
                                    const std::string& layer,
                                    CamIntermediates* inter = nullptr) {
  constexpr double eps = 1e-8;
  const ForwardCapture cap = model.forward_capture(image, nullptr);
  const Tensor& A = cap.activations.at(layer);
  const std::size_t K = A.extent(0);

  const double y = region_class_score(cap.output, region, target_class);
  if (y < 1e-6)
    throw Error("seg-ablation-cam: degenerate baseline score " +
                std::to_string(y) + " (region has no class support)");

  std::vector<double> alpha(K, 0.0), scores(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const LayerHook zero_channel = [&](const std::string& name,
                                       const Tensor& act) {
      if (name != layer) return act;
      Tensor out = act;
      const std::size_t hw = act.extent(1) * act.extent(2);
      std::fill(out.data() + k * hw, out.data() + (k + 1) * hw, 0.0);
      return out;
    };
    const double yk = region_class_score(
        model.forward_capture(image, zero_channel).output, region,
        target_class);
    scores[k] = yk;
    alpha[k] = (y - yk) / (y + eps);
  }
  if (inter) {
    inter->ablation_scores = scores;
    inter->channel_weights = alpha;
  }
  return postprocess_saliency(weighted_channel_sum(A, alpha),
                              model.config().height, model.config().width,
                              "seg-ablation-cam", layer, region);
}

// Power iteration (with deflation for the remaining spectrum) on the Gram
// matrix O^T O of the activation matrix O, pixels x channels.
inline EigenFactors eigen_factorize(const Tensor& activations,
                                    double tolerance = 1e-10,
                                    std::size_t max_iterations = 10000) {
  if (activations.rank() != 3) throw Error("eigen_factorize: rank != 3");
  const std::size_t K = activations.extent(0),
                    N = activations.extent(1) * activations.extent(2);
  EigenFactors f;
  f.matrix = Tensor({N, K});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < N; ++i)
      f.matrix[i * K + k] = activations[k * N + i];

  std::vector<double> gram(K * K, 0.0);
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t b = 0; b < K; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < N; ++i)
        acc += f.matrix[i * K + a] * f.matrix[i * K + b];
      gram[a * K + b] = acc;
    }

  double gram_scale = 0.0;
  for (double v : gram) gram_scale = std::max(gram_scale, std::abs(v));
  if (gram_scale == 0.0) {
    f.singular_values.assign(K, 0.0);
    f.first_right_singular.assign(K, 0.0);
    f.first_right_singular[0] = 1.0;
    return f;
  }

  Rng rng(0x5eedULL);
  for (std::size_t comp = 0; comp < K; ++comp) {
    std::vector<double> v(K);
    double norm = 0.0;
    for (double& x : v) {
      x = rng.uniform(-1.0, 1.0);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;

    double lambda = 0.0;
    bool converged = false;
    for (std::size_t it = 0; it < max_iterations; ++it) {
      std::vector<double> next(K, 0.0);
      for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b)
          next[a] += gram[a * K + b] * v[b];
      double next_norm = 0.0;
      for (double x : next) next_norm += x * x;
      next_norm = std::sqrt(next_norm);
      if (next_norm <= gram_scale * 1e-14) {
        // remaining spectrum is numerically zero
        lambda = 0.0;
        converged = true;
        break;
      }
      for (double& x : next) x /= next_norm;
      double delta = 0.0;
      for (std::size_t a = 0; a < K; ++a)
        delta = std::max(delta, std::abs(next[a] - v[a]));
      v = next;
      lambda = next_norm;
      if (delta < tolerance) {
        converged = true;
        break;
      }
    }
    // Only the leading component feeds the saliency map; the deflated tail
    // is diagnostic and keeps its last estimate on a slow pair.
    if (!converged && comp == 0)
      throw Error("eigen_factorize: power iteration did not converge within " +
                  std::to_string(max_iterations) + " iterations");
    f.singular_values.push_back(std::sqrt(std::max(lambda, 0.0)));
    if (comp == 0) f.first_right_singular = v;
    // deflate
    for (std::size_t a = 0; a < K; ++a)
      for (std::size_t b = 0; b < K; ++b)
        gram[a * K + b] -= lambda * v[a] * v[b];
  }
  return f;
}

// Projection of the activations onto the first right singular vector,
// sign-fixed so the entry of maximum magnitude is positive. Negating the
// activations leaves the result unchanged.
inline Tensor eigen_raw_map(const Tensor& activations,
                            EigenFactors* factors = nullptr) {
  const EigenFactors f = eigen_factorize(activations);
  const std::size_t K = activations.extent(0), h = activations.extent(1),
                    w = activations.extent(2);
  Tensor raw({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      acc += f.matrix[i * K + k] * f.first_right_singular[k];
    raw[i] = acc;
  }
  std::size_t peak = 0;
  for (std::size_t i = 1; i < raw.size(); ++i)
    if (std::abs(raw[i]) > std::abs(raw[peak])) peak = i;
  if (raw[peak] < 0.0)
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = -raw[i];
  if (factors) *factors = f;
  return raw;
}

// Class and region play no role here; the method factors the layer
// activations alone.
inline SaliencyMap seg_eigen_cam(const Model& model, const Tensor& image,
                                 std::size_t target_class,
                                 const PixelSet& region,
                                 const std::string& layer,
                                 CamIntermediates* inter = nullptr) {
  (void)target_class;
  const ForwardCapture cap = model.forward_capture(image, nullptr);
  const Tensor& A = cap.activations.at(layer);
  EigenFactors f;
  const Tensor raw = eigen_raw_map(A, &f);
  if (inter)
    inter->channel_weights = f.first_right_singular;
  return postprocess_saliency(raw, model.config().height,
                              model.config().width, "seg-eigen-cam", layer,
                              region);
}

// ---------------------------------------------------------------------------

inline SaliencyMap compute_saliency(const std::string& method,
                                    const Model& model, const Tensor& image,
                                    std::size_t target_class,
                                    const PixelSet& region,
                                    const std::string& layer,
                                    CamIntermediates* inter = nullptr) {
  if (method == "seg-grad-cam")
    return seg_grad_cam(model, image, target_class, region, layer, inter);
  if (method == "seg-grad-cam-pp")
    return seg_grad_cam_pp(model, image, target_class, region, layer, inter);
  if (method == "seg-xgrad-cam")
    return seg_xgrad_cam(model, image, target_class, region, layer, inter);
  if (method == "seg-score-cam")
    return seg_score_cam(model, image, target_class, region, layer, inter);
  if (method == "seg-ablation-cam")
    return seg_ablation_cam(model, image, target_class, region, layer, inter);
  if (method == "seg-eigen-cam")
    return seg_eigen_cam(model, image, target_class, region, layer, inter);
  throw Error("unknown saliency method: " + method);
}

}  // namespace segxai
