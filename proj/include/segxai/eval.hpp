#pragma once
// Perturbation-based evaluation of saliency methods. A thresholded
// saliency map gives the highlighted set Phi; three policies rebuild the
// input keeping background only (M1), highlighted only (M2), or
// highlighted plus target pixels (M3); the drop in segmentation score and
// the increase of a normalized pixel-entropy statistic quantify each
// method. Aggregated rows form a CSV report.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "segxai/cam.hpp"
#include "segxai/common.hpp"
#include "segxai/dataset.hpp"
#include "segxai/network.hpp"
#include "segxai/pixel_set.hpp"
#include "segxai/tensor.hpp"

namespace segxai {

// ---------------------------------------------------------------------------
// thresholding

enum class ThresholdKind { Absolute, TopQuantile };

struct ThresholdRule {
  ThresholdKind kind = ThresholdKind::Absolute;
  double value = 0.5;
};

inline ThresholdRule parse_threshold_rule(const std::string& text) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  ThresholdRule rule;
  if (name == "abs") {
    rule.kind = ThresholdKind::Absolute;
  } else if (name == "quantile") {
    rule.kind = ThresholdKind::TopQuantile;
    rule.value = 0.25;
  } else {
    throw Error("unknown threshold rule '" + text +
                "' (use abs:T or quantile:Q)");
  }
  if (colon != std::string::npos) {
    try {
      rule.value = std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw Error("bad threshold value in '" + text + "'");
    }
  }
  if (rule.kind == ThresholdKind::Absolute &&
      (rule.value < 0.0 || rule.value > 1.0))
    throw Error("absolute threshold " + std::to_string(rule.value) +
                " outside [0,1]");
  if (rule.kind == ThresholdKind::TopQuantile &&
      (rule.value <= 0.0 || rule.value > 1.0))
    throw Error("top quantile " + std::to_string(rule.value) +
                " outside (0,1]");
  return rule;
}

// Absolute rule keeps pixels with value >= tau. Top-quantile keeps the
// ceil(q*H*W) highest pixels, ties broken by row-major order.
inline PixelSet threshold_saliency(const SaliencyMap& map,
                                   const ThresholdRule& rule) {
  const std::size_t H = map.values.extent(0), W = map.values.extent(1);
  if (rule.kind == ThresholdKind::Absolute) {
    if (rule.value < 0.0 || rule.value > 1.0)
      throw Error("absolute threshold outside [0,1]");
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < H * W; ++i)
      if (map.values[i] >= rule.value) keep.push_back(i);
    return PixelSet::from_linear(H, W, std::move(keep));
  }
  if (rule.value <= 0.0 || rule.value > 1.0)
    throw Error("top quantile outside (0,1]");
  const std::size_t n = static_cast<std::size_t>(
      std::ceil(rule.value * static_cast<double>(H * W)));
  std::vector<std::size_t> order(H * W);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return map.values[a] > map.values[b];
                   });
  order.resize(std::min(n, order.size()));
  return PixelSet::from_linear(H, W, std::move(order));
}

// ---------------------------------------------------------------------------
// perturbation policies

enum class PolicyMode { BackgroundOnly, HighlightedOnly, HighlightedPlusTarget };

inline const char* policy_name(PolicyMode mode) {
  switch (mode) {
    case PolicyMode::BackgroundOnly: return "M1";
    case PolicyMode::HighlightedOnly: return "M2";
    case PolicyMode::HighlightedPlusTarget: return "M3";
  }
  return "?";
}

struct FillRule {
  bool use_mean = false;
  std::array<double, 3> mean{0.0, 0.0, 0.0};  // per-channel fill values
};

// M1 keeps everything except Phi; M2 keeps Phi; M3 keeps Phi union T.
inline PixelSet kept_pixels(PolicyMode mode, const PixelSet& highlighted,
                            const PixelSet& target) {
  switch (mode) {
    case PolicyMode::BackgroundOnly: return highlighted.complement();
    case PolicyMode::HighlightedOnly: return highlighted;
    case PolicyMode::HighlightedPlusTarget:
      return highlighted.set_union(target);
  }
  throw Error("kept_pixels: bad policy");
}

// Kept pixels copy the original; removed pixels take the fill value.
inline Tensor perturb_image(const Tensor& image, const PixelSet& highlighted,
                            const PixelSet& target, PolicyMode mode,
                            const FillRule& fill = {}) {
  if (image.rank() != 3)
    throw Error("perturb_image: expected C x H x W image");
  const std::size_t C = image.extent(0), H = image.extent(1),
                    W = image.extent(2);
  if (highlighted.height() != H || highlighted.width() != W ||
      target.height() != H || target.width() != W)
    throw Error("perturb_image: pixel set bounds do not match image " +
                image.shape_str());
  const PixelSet kept = kept_pixels(mode, highlighted, target);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double fv = fill.use_mean ? fill.mean[std::min<std::size_t>(c, 2)]
                                    : 0.0;
    for (std::size_t i = 0; i < H * W; ++i) out[c * H * W + i] = fv;
  }
  for (std::size_t p : kept.linear())
    for (std::size_t c = 0; c < C; ++c)
      out[c * H * W + p] = image[c * H * W + p];
  return out;
}

// ---------------------------------------------------------------------------
// metrics

// Mean class-c softmax probability over the evaluation region.
inline double segmentation_score(const SegmentationOutput& out,
                                 const PixelSet& region,
                                 std::size_t target_class) {
  if (region.empty())
    throw Error("segmentation_score: empty evaluation region");
  if (target_class >= out.probabilities.extent(0))
    throw Error("segmentation_score: class " + std::to_string(target_class) +
                " out of " + std::to_string(out.probabilities.extent(0)));
  return region_class_score(out, region, target_class);
}

struct EntropyMap {
  Tensor values;  // H x W in [0,1]
  std::size_t num_classes = 0;
};

// Normalized Shannon entropy per pixel: -(1/log L) * sum_l p log p with
// 0 log 0 = 0. Natural log; the base cancels through the normalization.
inline EntropyMap pixel_entropy_map(const Tensor& probabilities) {
  if (probabilities.rank() != 3)
    throw Error("pixel_entropy_map: rank != 3");
  const std::size_t L = probabilities.extent(0), H = probabilities.extent(1),
                    W = probabilities.extent(2);
  if (L < 2) throw Error("pixel_entropy_map: need at least 2 classes");
  EntropyMap map;
  map.num_classes = L;
  map.values = Tensor({H, W});
  const double norm = std::log(static_cast<double>(L));
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double total = 0.0, acc = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        const double p = probabilities.at(l, y, x);
        if (p < 0.0)
          throw Error("pixel_entropy_map: negative probability at (" +
                      std::to_string(y) + ", " + std::to_string(x) + ")");
        total += p;
        if (p > 0.0) acc -= p * std::log(p);
      }
      if (std::abs(total - 1.0) > 1e-6)
        throw Error("pixel_entropy_map: probabilities sum to " +
                    std::to_string(total) + " at (" + std::to_string(y) +
                    ", " + std::to_string(x) + ")");
      map.values.at(y, x) = acc / norm;
    }
  return map;
}

struct ExaiValue {
  double mean = 0.0;  // primary figure: mean entropy over the target set
  double sum = 0.0;   // raw sum, kept for traceability
};

inline ExaiValue e_xai(const EntropyMap& entropy, const PixelSet& target) {
  if (target.empty()) throw Error("e_xai: empty target set");
  if (target.height() != entropy.values.extent(0) ||
      target.width() != entropy.values.extent(1))
    throw Error("e_xai: target bounds do not match entropy map");
  ExaiValue v;
  for (std::size_t p : target.linear()) v.sum += entropy.values[p];
  v.mean = v.sum / static_cast<double>(target.size());
  return v;
}

inline double percent_drop(double baseline, double perturbed) {
  if (baseline <= 0.0)
    throw Error("percent change: baseline " + std::to_string(baseline) +
                " must be positive");
  return 100.0 * (baseline - perturbed) / baseline;
}

inline double percent_increase(double baseline, double perturbed) {
  if (baseline <= 0.0)
    throw Error("percent change: baseline " + std::to_string(baseline) +
                " must be positive");
  return 100.0 * (perturbed - baseline) / baseline;
}

// ---------------------------------------------------------------------------
// benchmark

// Reference saliency generators used as benchmark baselines next to the
// CAM methods: "oracle" marks a dilation of the target pixels, "random"
// draws a seeded noise map.
inline SaliencyMap oracle_saliency(const PixelSet& target,
                                   std::size_t dilation_radius = 2) {
  SaliencyMap map;
  map.method = "oracle";
  map.layer = "-";
  map.region = target;
  map.values = Tensor({target.height(), target.width()});
  for (std::size_t p : target.dilate(dilation_radius).linear())
    map.values[p] = 1.0;
  return map;
}

inline SaliencyMap random_saliency(std::size_t height, std::size_t width,
                                   std::uint64_t seed) {
  Rng rng(seed);
  Tensor noise({height, width});
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.uniform();
  SaliencyMap map;
  map.method = "random";
  map.layer = "-";
  map.region = PixelSet(height, width);
  map.values = normalize_mask(noise);  // max exactly 1
  return map;
}

struct EvalRow {
  std::string image;
  std::string method;
  std::string methodology;
  double baseline_ss = 0.0;
  double perturbed_ss = 0.0;
  double drop_pct = 0.0;
  double baseline_exai = 0.0;
  double perturbed_exai = 0.0;
  double increase_pct = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EvalRow> means;  // image column is "mean"
  std::vector<std::string> row_errors;
};

struct BenchmarkOptions {
  std::vector<std::string> methods = cam_method_ids();
  std::vector<PolicyMode> policies = {PolicyMode::BackgroundOnly,
                                      PolicyMode::HighlightedOnly,
                                      PolicyMode::HighlightedPlusTarget};
  ThresholdRule threshold;
  std::size_t target_class = 1;
  std::string layer = "dec0";
  bool use_predicted_target = false;  // T from the model's own mask
  FillRule fill;
  std::size_t workers = 1;
  std::uint64_t seed = 7;  // drives the "random" baseline only
  std::function<void(std::size_t, std::size_t)> progress;  // done, total
};

namespace detail {

struct ImageResult {
  std::vector<EvalRow> rows;
  std::vector<std::string> errors;
};

inline ImageResult benchmark_image(const Model& model, const Sample& sample,
                                   std::size_t index,
                                   const BenchmarkOptions& opt) {
  ImageResult result;
  const std::size_t H = model.config().height, W = model.config().width;
  const SegmentationOutput base = model.forward(sample.image);
  const PixelSet target =
      opt.use_predicted_target
          ? PixelSet::from_labels(H, W, base.predicted_mask,
                                  static_cast<int>(opt.target_class))
          : PixelSet::from_labels(H, W, sample.labels,
                                  static_cast<int>(opt.target_class));
  if (target.empty()) {
    result.errors.push_back(sample.name + ": no target-class pixels");
    return result;
  }
  const double baseline_ss =
      segmentation_score(base, target, opt.target_class);
  const double baseline_exai =
      e_xai(pixel_entropy_map(base.probabilities), target).mean;

  for (const std::string& method : opt.methods) {
    try {
      SaliencyMap saliency;
      if (method == "oracle") {
        saliency = oracle_saliency(target);
      } else if (method == "random") {
        saliency = random_saliency(H, W, mix_seed(opt.seed, index));
      } else {
        saliency = compute_saliency(method, model, sample.image,
                                    opt.target_class, target, opt.layer);
      }
      const PixelSet highlighted = threshold_saliency(saliency, opt.threshold);
      for (PolicyMode mode : opt.policies) {
        const Tensor perturbed = perturb_image(sample.image, highlighted,
                                               target, mode, opt.fill);
        const SegmentationOutput out = model.forward(perturbed);
        EvalRow row;
        row.image = sample.name;
        row.method = method;
        row.methodology = policy_name(mode);
        row.baseline_ss = baseline_ss;
        row.perturbed_ss = segmentation_score(out, target, opt.target_class);
        row.drop_pct = percent_drop(row.baseline_ss, row.perturbed_ss);
        row.baseline_exai = baseline_exai;
        row.perturbed_exai =
            e_xai(pixel_entropy_map(out.probabilities), target).mean;
        row.increase_pct =
            percent_increase(row.baseline_exai, row.perturbed_exai);
        result.rows.push_back(std::move(row));
      }
    } catch (const std::exception& e) {
      result.errors.push_back(sample.name + "/" + method + ": " + e.what());
    }
  }
  return result;
}

}  // namespace detail

// Per-image rows in dataset order plus per-(method, methodology) means.
// Percent columns of mean rows are recomputed from the mean raw scores.
// Images are processed in parallel when workers > 1; the merge order is
// fixed, so the report is identical for any worker count.
inline EvalReport run_benchmark(const Model& model, const Dataset& data,
                                const BenchmarkOptions& opt) {
  if (data.samples.empty()) throw Error("run_benchmark: empty dataset");
  for (const std::string& m : opt.methods) {
    if (m == "oracle" || m == "random") continue;
    const auto& ids = cam_method_ids();
    if (std::find(ids.begin(), ids.end(), m) == ids.end())
      throw Error("unknown saliency method: " + m);
  }
  const std::size_t n = data.samples.size();
  std::vector<detail::ImageResult> partial(n);
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(opt.workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      partial[i] = detail::benchmark_image(model, data.samples[i], i, opt);
      if (opt.progress) opt.progress(i + 1, n);
    }
  } else {
    std::atomic<std::size_t> cursor{0};
    std::atomic<std::size_t> done{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = cursor.fetch_add(1);
          if (i >= n) return;
          partial[i] = detail::benchmark_image(model, data.samples[i], i, opt);
          done.fetch_add(1);
        }
      });
    }
    for (auto& th : pool) th.join();
    if (opt.progress) opt.progress(done.load(), n);
  }

  EvalReport report;
  for (auto& part : partial) {
    for (auto& row : part.rows) report.rows.push_back(std::move(row));
    for (auto& err : part.errors) report.row_errors.push_back(std::move(err));
  }

  struct Acc {
    double b_ss = 0, p_ss = 0, b_ex = 0, p_ex = 0;
    std::size_t n = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> acc;
  for (const EvalRow& row : report.rows) {
    Acc& a = acc[{row.method, row.methodology}];
    a.b_ss += row.baseline_ss;
    a.p_ss += row.perturbed_ss;
    a.b_ex += row.baseline_exai;
    a.p_ex += row.perturbed_exai;
    a.n += 1;
  }
  for (const std::string& method : opt.methods) {
    for (PolicyMode mode : opt.policies) {
      const auto it = acc.find({method, policy_name(mode)});
      if (it == acc.end() || it->second.n == 0) continue;
      const Acc& a = it->second;
      EvalRow mean;
      mean.image = "mean";
      mean.method = method;
      mean.methodology = policy_name(mode);
      mean.baseline_ss = a.b_ss / static_cast<double>(a.n);
      mean.perturbed_ss = a.p_ss / static_cast<double>(a.n);
      mean.drop_pct = percent_drop(mean.baseline_ss, mean.perturbed_ss);
      mean.baseline_exai = a.b_ex / static_cast<double>(a.n);
      mean.perturbed_exai = a.p_ex / static_cast<double>(a.n);
      mean.increase_pct =
          percent_increase(mean.baseline_exai, mean.perturbed_exai);
      report.means.push_back(std::move(mean));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// CSV

inline const char* kReportHeader =
    "image,method,methodology,baseline_ss,perturbed_ss,drop_pct,"
    "baseline_exai,perturbed_exai,increase_pct";

inline std::string report_to_csv(const EvalReport& report) {
  std::string out = kReportHeader;
  out += '\n';
  auto emit = [&out](const EvalRow& r) {
    out += r.image + ',' + r.method + ',' + r.methodology + ',' +
           format_g6(r.baseline_ss) + ',' + format_g6(r.perturbed_ss) + ',' +
           format_g6(r.drop_pct) + ',' + format_g6(r.baseline_exai) + ',' +
           format_g6(r.perturbed_exai) + ',' + format_g6(r.increase_pct);
    out += '\n';
  };
  for (const EvalRow& r : report.rows) emit(r);
  for (const EvalRow& r : report.means) emit(r);
  return out;
}

inline void export_report(const EvalReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::binary);  // binary keeps LF endings
  if (!os) throw Error("cannot open for writing: " + path);
  const std::string csv = report_to_csv(report);
  os.write(csv.data(), static_cast<std::streamsize>(csv.size()));
  if (!os) throw Error("write failed: " + path);
}

}  // namespace segxai
