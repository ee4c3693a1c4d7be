#pragma once
// Small UNet-style encoder-decoder with named, tappable layers. The
// encoder downsamples by strided 3x3 convs, the decoder restores the input
// resolution with nearest-neighbour upsampling plus skip concatenation,
// and a 1x1 head emits per-class logits. Every layer output can be
// captured, replaced (value-mode hooks) or differentiated against.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "segxai/autodiff.hpp"
#include "segxai/common.hpp"
#include "segxai/pixel_set.hpp"
#include "segxai/tensor.hpp"
#include "segxai/tensor_io.hpp"

namespace segxai {

struct NetworkConfig {
  std::size_t input_channels = 3;
  std::size_t num_classes = 2;
  std::vector<std::size_t> encoder_widths{8, 16};
  std::vector<std::size_t> decoder_widths{16, 8};
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 0;
};

struct SegmentationOutput {
  Tensor logits;         // L x H x W
  Tensor probabilities;  // softmax of logits
  std::vector<int> predicted_mask;  // row-major H*W argmax, ties to lower class
};

struct FeatureTap {
  std::string layer_name;
  Tensor activations;  // A, K x h x w
  Tensor gradients;    // d(sum_M y_c) / dA, same shape
};

// Value-mode hook: called with (layer name, layer output); the returned
// tensor replaces the output for the rest of the forward pass. Used for
// channel ablation and for finite-difference probes of a layer.
using LayerHook = std::function<Tensor(const std::string&, const Tensor&)>;

struct ForwardCapture {
  SegmentationOutput output;
  std::map<std::string, Tensor> activations;  // by layer name
};

class Model {
 public:
  struct ConvLayer {
    std::string name;
    Tensor kernels;  // out x in x kh x kw
    Tensor bias;     // out
    int stride = 1;
    int padding = 1;
    bool relu_after = true;
  };

  static Model build(const NetworkConfig& cfg) {
    validate_config(cfg);
    Model m;
    m.cfg_ = cfg;
    Rng rng(cfg.seed);
    const std::size_t d = cfg.encoder_widths.size();
    std::size_t in_ch = cfg.input_channels;
    for (std::size_t i = 0; i < d; ++i) {
      m.layers_.push_back(init_layer("enc" + std::to_string(i), in_ch,
                                     cfg.encoder_widths[i], 3,
                                     i == 0 ? 1 : 2, 1, true, rng));
      in_ch = cfg.encoder_widths[i];
    }
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t dec_in = in_ch;
      if (j + 1 < d) dec_in += cfg.encoder_widths[d - 2 - j];
      m.layers_.push_back(init_layer("dec" + std::to_string(j), dec_in,
                                     cfg.decoder_widths[j], 3, 1, 1, true,
                                     rng));
      in_ch = cfg.decoder_widths[j];
    }
    m.layers_.push_back(
        init_layer("head", in_ch, cfg.num_classes, 1, 1, 0, false, rng));
    return m;
  }

  const NetworkConfig& config() const { return cfg_; }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> names;
    for (const auto& l : layers_) names.push_back(l.name);
    return names;
  }

  bool has_layer(const std::string& name) const {
    for (const auto& l : layers_)
      if (l.name == name) return true;
    return false;
  }

  std::vector<ConvLayer>& layers() { return layers_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.kernels.size() + l.bias.size();
    return n;
  }

  SegmentationOutput forward(const Tensor& image) const {
    return forward_capture(image, nullptr).output;
  }

  ForwardCapture forward_capture(const Tensor& image,
                                 const LayerHook& hook) const {
    check_image(image);
    Graph g(false);
    std::map<std::string, Var> acts;
    Var logits = wire(g, g.leaf(image), hook, acts, nullptr);
    ForwardCapture cap;
    cap.output = finish_output(g.value(logits));
    for (const auto& [name, v] : acts) cap.activations[name] = g.value(v);
    return cap;
  }

  // One recorded forward plus one backward pass. The differentiated scalar
  // is the sum of class-cls logits over the given region; A and G are read
  // at the named layer.
  FeatureTap tap_forward_backward(const Tensor& image, std::size_t cls,
                                  const PixelSet& region,
                                  const std::string& layer) const {
    check_image(image);
    check_layer(layer);
    if (cls >= cfg_.num_classes)
      throw Error("tap_forward_backward: class " + std::to_string(cls) +
                  " out of " + std::to_string(cfg_.num_classes));
    if (region.height() != cfg_.height || region.width() != cfg_.width)
      throw Error("tap_forward_backward: region bounds " +
                  std::to_string(region.height()) + "x" +
                  std::to_string(region.width()) + " do not match input " +
                  std::to_string(cfg_.height) + "x" +
                  std::to_string(cfg_.width));
    Graph g(true);
    std::map<std::string, Var> acts;
    Var logits = wire(g, g.leaf(image), nullptr, acts, nullptr);
    g.tap(layer, acts.at(layer));
    Var seed = g.select_sum(logits, cls, region.linear());
    auto grads = g.backward(seed);
    return FeatureTap{layer, g.value(acts.at(layer)),
                      std::move(grads.at(layer))};
  }

  struct TrainResult {
    std::vector<double> batch_loss;       // one entry per SGD step, in order
    std::vector<double> epoch_mean_loss;  // one entry per epoch
  };

  template <typename Dataset>
  TrainResult train(const Dataset& data, std::size_t epochs,
                    double learning_rate, std::uint64_t seed) {
    if (data.samples.empty()) throw Error("train: empty dataset");
    Rng rng(seed);
    TrainResult result;
    for (std::size_t e = 0; e < epochs; ++e) {
      std::vector<std::size_t> order(data.samples.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      double epoch_sum = 0.0;
      for (std::size_t idx : order) {
        const auto& sample = data.samples[idx];
        Graph g(true);
        std::map<std::string, Var> acts;
        std::vector<std::pair<std::string, Var>> params;
        Var logits = wire(g, g.leaf(sample.image), nullptr, acts, &params);
        for (const auto& [name, v] : params) g.tap(name, v);
        Var loss = g.cross_entropy_mean(logits, sample.labels);
        const double loss_value = g.value(loss)[0];
        auto grads = g.backward(loss);
        for (auto& layer : layers_) {
          apply_sgd(layer.kernels, grads.at(layer.name + ".kernels"),
                    learning_rate);
          apply_sgd(layer.bias, grads.at(layer.name + ".bias"), learning_rate);
        }
        result.batch_loss.push_back(loss_value);
        epoch_sum += loss_value;
      }
      result.epoch_mean_loss.push_back(epoch_sum /
                                       static_cast<double>(order.size()));
    }
    return result;
  }

 private:
  static void apply_sgd(Tensor& param, const Tensor& grad, double lr) {
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
    param.ensure_finite("sgd update");
  }

  static ConvLayer init_layer(std::string name, std::size_t in_ch,
                              std::size_t out_ch, std::size_t ksize,
                              int stride, int padding, bool relu_after,
                              Rng& rng) {
    ConvLayer l;
    l.name = std::move(name);
    l.kernels = Tensor({out_ch, in_ch, ksize, ksize});
    l.bias = Tensor({out_ch});
    l.stride = stride;
    l.padding = padding;
    l.relu_after = relu_after;
    const double bound =
        std::sqrt(1.0 / static_cast<double>(in_ch * ksize * ksize));
    for (std::size_t i = 0; i < l.kernels.size(); ++i)
      l.kernels[i] = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < l.bias.size(); ++i)
      l.bias[i] = rng.uniform(-bound, bound);
    return l;
  }

  static void validate_config(const NetworkConfig& cfg) {
    if (cfg.num_classes < 2)
      throw Error("network config: need at least 2 classes, got " +
                  std::to_string(cfg.num_classes));
    if (cfg.input_channels == 0)
      throw Error("network config: zero input channels");
    if (cfg.encoder_widths.empty() ||
        cfg.encoder_widths.size() != cfg.decoder_widths.size())
      throw Error("network config: encoder and decoder depth must match and "
                  "be nonzero");
    for (std::size_t w : cfg.encoder_widths)
      if (w == 0) throw Error("network config: zero encoder width");
    for (std::size_t w : cfg.decoder_widths)
      if (w == 0) throw Error("network config: zero decoder width");
    const std::size_t factor = std::size_t(1)
                               << (cfg.encoder_widths.size() - 1);
    if (cfg.height % factor != 0 || cfg.width % factor != 0 ||
        cfg.height == 0 || cfg.width == 0)
      throw Error("network config: input size " + std::to_string(cfg.height) +
                  "x" + std::to_string(cfg.width) +
                  " must be a positive multiple of " + std::to_string(factor));
  }

  void check_image(const Tensor& image) const {
    if (image.rank() != 3 || image.extent(0) != cfg_.input_channels ||
        image.extent(1) != cfg_.height || image.extent(2) != cfg_.width)
      throw Error("forward: image shape " + image.shape_str() +
                  " does not match configured (" +
                  std::to_string(cfg_.input_channels) + ", " +
                  std::to_string(cfg_.height) + ", " +
                  std::to_string(cfg_.width) + ")");
  }

  void check_layer(const std::string& name) const {
    if (has_layer(name)) return;
    std::string known;
    for (const auto& l : layers_) {
      if (!known.empty()) known += ", ";
      known += l.name;
    }
    throw Error("unknown layer '" + name + "' (known: " + known + ")");
  }

  // Builds the network graph. acts records each named layer's (possibly
  // hooked) output; params, when given, receives leaf vars for every
  // parameter tensor in declaration order.
  Var wire(Graph& g, Var image, const LayerHook& hook,
           std::map<std::string, Var>& acts,
           std::vector<std::pair<std::string, Var>>* params) const {
    const std::size_t d = cfg_.encoder_widths.size();
    auto conv_layer = [&](Var x, const ConvLayer& layer) -> Var {
      Var k = g.leaf(layer.kernels);
      Var b = g.leaf(layer.bias);
      if (params) {
        params->emplace_back(layer.name + ".kernels", k);
        params->emplace_back(layer.name + ".bias", b);
      }
      Var y = g.conv2d(x, k, b, layer.stride, layer.padding);
      if (layer.relu_after) y = g.relu(y);
      if (hook) y = g.leaf(hook(layer.name, g.value(y)));
      acts[layer.name] = y;
      return y;
    };
    std::vector<Var> skips;
    Var x = image;
    for (std::size_t i = 0; i < d; ++i) {
      x = conv_layer(x, layers_[i]);
      skips.push_back(x);
    }
    for (std::size_t j = 0; j < d; ++j) {
      if (j + 1 < d)
        x = g.concat_channels(g.upsample2x_nearest(x), skips[d - 2 - j]);
      x = conv_layer(x, layers_[d + j]);
    }
    return conv_layer(x, layers_[2 * d]);  // head, logits
  }

  SegmentationOutput finish_output(const Tensor& logits) const {
    SegmentationOutput out;
    out.logits = logits;
    out.probabilities = segxai::softmax_channels(logits);
    const std::size_t L = logits.extent(0), H = logits.extent(1),
                      W = logits.extent(2);
    out.predicted_mask.resize(H * W);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        std::size_t best = 0;
        for (std::size_t l = 1; l < L; ++l)
          if (logits.at(l, y, x) > logits.at(best, y, x)) best = l;
        out.predicted_mask[y * W + x] = static_cast<int>(best);
      }
    return out;
  }

  NetworkConfig cfg_;
  std::vector<ConvLayer> layers_;
};

inline constexpr char kModelMagic[8] = {'S', 'X', 'M', 'O', 'D', 'E', 'L', 0};
inline constexpr std::uint32_t kModelFormatVersion = 1;

inline void save_model(const Model& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  os.write(kModelMagic, 8);
  detail::put_u32(os, kModelFormatVersion);
  const NetworkConfig& c = m.config();
  detail::put_u32(os, static_cast<std::uint32_t>(c.input_channels));
  detail::put_u32(os, static_cast<std::uint32_t>(c.num_classes));
  detail::put_u32(os, static_cast<std::uint32_t>(c.encoder_widths.size()));
  for (std::size_t w : c.encoder_widths)
    detail::put_u32(os, static_cast<std::uint32_t>(w));
  detail::put_u32(os, static_cast<std::uint32_t>(c.decoder_widths.size()));
  for (std::size_t w : c.decoder_widths)
    detail::put_u32(os, static_cast<std::uint32_t>(w));
  detail::put_u32(os, static_cast<std::uint32_t>(c.height));
  detail::put_u32(os, static_cast<std::uint32_t>(c.width));
  detail::put_u64(os, c.seed);
  detail::put_u32(os, static_cast<std::uint32_t>(m.layers().size() * 2));
  for (const auto& layer : m.layers()) {
    for (const auto& [name, tensor] :
         {std::pair<std::string, const Tensor&>{layer.name + ".kernels",
                                                layer.kernels},
          std::pair<std::string, const Tensor&>{layer.name + ".bias",
                                                layer.bias}}) {
      detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_tensor(os, tensor);
    }
  }
  if (!os) throw Error("model write failed: " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for reading: " + path);
  char magic[8];
  if (!is.read(magic, 8)) throw Error("truncated model file: " + path);
  if (std::memcmp(magic, kModelMagic, 8) != 0)
    throw Error("bad model magic in " + path);
  const std::uint32_t version = detail::get_u32(is, "model version");
  if (version != kModelFormatVersion)
    throw Error("unsupported model format version " + std::to_string(version));
  NetworkConfig cfg;
  cfg.input_channels = detail::get_u32(is, "input channels");
  cfg.num_classes = detail::get_u32(is, "class count");
  cfg.encoder_widths.assign(detail::get_u32(is, "encoder depth"), 0);
  for (auto& w : cfg.encoder_widths) w = detail::get_u32(is, "encoder width");
  cfg.decoder_widths.assign(detail::get_u32(is, "decoder depth"), 0);
  for (auto& w : cfg.decoder_widths) w = detail::get_u32(is, "decoder width");
  cfg.height = detail::get_u32(is, "input height");
  cfg.width = detail::get_u32(is, "input width");
  cfg.seed = detail::get_u64(is, "seed");
  Model m = Model::build(cfg);
  const std::uint32_t count = detail::get_u32(is, "parameter count");
  if (count != m.layers().size() * 2)
    throw Error("model parameter count " + std::to_string(count) +
                " does not match configuration (" +
                std::to_string(m.layers().size() * 2) + " expected)");
  for (auto& layer : m.layers()) {
    for (auto* slot : {&layer.kernels, &layer.bias}) {
      const std::string expected =
          layer.name + (slot == &layer.kernels ? ".kernels" : ".bias");
      const std::uint32_t len = detail::get_u32(is, "parameter name length");
      std::string name(len, '\0');
      if (!is.read(name.data(), len))
        throw Error("truncated model file: " + path);
      if (name != expected)
        throw Error("model parameter '" + name + "' does not match expected '" +
                    expected + "'");
      Tensor t = read_tensor(is);
      if (!t.same_shape(*slot))
        throw Error("model parameter " + name + " shape " + t.shape_str() +
                    " does not match configuration " + slot->shape_str());
      *slot = std::move(t);
    }
  }
  return m;
}

// Dataset-aggregate intersection-over-union of the given class.
template <typename Dataset>
double foreground_iou(const Model& m, const Dataset& data, int cls = 1) {
  std::size_t inter = 0, uni = 0;
  for (const auto& sample : data.samples) {
    const SegmentationOutput out = m.forward(sample.image);
    for (std::size_t i = 0; i < sample.labels.size(); ++i) {
      const bool p = out.predicted_mask[i] == cls;
      const bool t = sample.labels[i] == cls;
      inter += (p && t) ? 1 : 0;
      uni += (p || t) ? 1 : 0;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace segxai
