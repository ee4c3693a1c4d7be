// segxai command-line tool: synthetic data generation, toy training,
// per-image saliency explanation, benchmark evaluation, and gradient
// self-checks.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
// Option precedence: command-line flags > --config file > built-in
// defaults. The config file is flat key=value text, one pair per line,
// '#' starts a comment; keys are the long option names without dashes.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "segxai/cam.hpp"
#include "segxai/common.hpp"
#include "segxai/dataset.hpp"
#include "segxai/eval.hpp"
#include "segxai/gradcheck.hpp"
#include "segxai/image_io.hpp"
#include "segxai/network.hpp"

namespace {

using namespace segxai;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::string> parse_methods(const std::string& text,
                                       bool allow_baselines) {
  std::vector<std::string> out;
  for (const std::string& item : split_list(text)) {
    if (item == "all") {
      for (const auto& id : cam_method_ids())
        if (std::find(out.begin(), out.end(), id) == out.end())
          out.push_back(id);
      continue;
    }
    const bool baseline = item == "oracle" || item == "random";
    const auto& ids = cam_method_ids();
    const bool cam = std::find(ids.begin(), ids.end(), item) != ids.end();
    if (!cam && !(baseline && allow_baselines))
      throw CLI::ValidationError("--methods", "unknown method '" + item + "'");
    if (std::find(out.begin(), out.end(), item) == out.end())
      out.push_back(item);
  }
  if (out.empty())
    throw CLI::ValidationError("--methods", "no methods selected");
  return out;
}

std::vector<PolicyMode> parse_policy_list(const std::string& text) {
  std::vector<PolicyMode> out;
  auto push = [&out](PolicyMode m) {
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  };
  for (const std::string& item : split_list(text)) {
    if (item == "all") {
      push(PolicyMode::BackgroundOnly);
      push(PolicyMode::HighlightedOnly);
      push(PolicyMode::HighlightedPlusTarget);
    } else if (item == "m1" || item == "M1") {
      push(PolicyMode::BackgroundOnly);
    } else if (item == "m2" || item == "M2") {
      push(PolicyMode::HighlightedOnly);
    } else if (item == "m3" || item == "M3") {
      push(PolicyMode::HighlightedPlusTarget);
    } else {
      throw CLI::ValidationError("--policies", "unknown policy '" + item + "'");
    }
  }
  if (out.empty())
    throw CLI::ValidationError("--policies", "no policies selected");
  return out;
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(text)) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw CLI::ValidationError("widths", "bad width '" + item + "'");
    }
  }
  return out;
}

// region of interest selector: predicted | gt | rect:x,y,w,h
PixelSet resolve_region(const std::string& spec, const std::string& mask_path,
                        const Model& model, const SegmentationOutput& out,
                        std::size_t target_class) {
  const std::size_t H = model.config().height, W = model.config().width;
  if (spec == "predicted")
    return PixelSet::from_labels(H, W, out.predicted_mask,
                                 static_cast<int>(target_class));
  if (spec == "gt") {
    if (mask_path.empty())
      throw CLI::ValidationError("--region", "gt region needs --mask");
    const auto labels =
        gray_to_mask(read_pgm(mask_path), model.config().num_classes);
    if (labels.size() != H * W)
      throw Error("mask size does not match model input");
    return PixelSet::from_labels(H, W, labels,
                                 static_cast<int>(target_class));
  }
  if (spec.rfind("rect:", 0) == 0) {
    const auto parts = split_list(spec.substr(5));
    if (parts.size() != 4)
      throw CLI::ValidationError("--region", "rect needs x,y,w,h");
    std::size_t vals[4];
    for (int i = 0; i < 4; ++i) {
      try {
        vals[i] = static_cast<std::size_t>(std::stoul(parts[i]));
      } catch (const std::exception&) {
        throw CLI::ValidationError("--region", "bad rect value '" + parts[i] +
                                                   "'");
      }
    }
    std::vector<std::size_t> linear;
    for (std::size_t y = vals[1]; y < std::min(vals[1] + vals[3], H); ++y)
      for (std::size_t x = vals[0]; x < std::min(vals[0] + vals[2], W); ++x)
        linear.push_back(y * W + x);
    return PixelSet::from_linear(H, W, std::move(linear));
  }
  throw CLI::ValidationError("--region",
                             "expected predicted, gt or rect:x,y,w,h");
}

// --- flat key=value config file support -----------------------------------

std::vector<std::string> load_config_flags(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CLI::FileError::Missing(path);
  std::vector<std::string> flags;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError(
          "--config", path + ":" + std::to_string(lineno) +
                          ": expected key=value, got '" + line + "'");
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (key.empty())
      throw CLI::ValidationError("--config", path + ":" +
                                                 std::to_string(lineno) +
                                                 ": empty key");
    flags.push_back("--" + key + "=" + value);
  }
  return flags;
}

// Builds the effective argument list: subcommand, then config-derived
// flags, then the user's flags (which win through take-last policy).
std::vector<std::string> effective_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size())
        throw CLI::ValidationError("--config", "missing file argument");
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  if (config_path.empty() || args.empty()) return args;
  std::vector<std::string> out;
  out.push_back(args[0]);
  for (auto& f : load_config_flags(config_path)) out.push_back(std::move(f));
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

// --- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  std::size_t train_count = 200, test_count = 20;
  std::size_t size = 64;
  std::size_t min_rects = 1, max_rects = 4;
  std::size_t min_rect = 10, max_rect = 24;
  double amplitude = 0.35;
  std::uint64_t seed = 7;
};

int run_synth(const SynthArgs& a) {
  SyntheticSceneConfig cfg;
  cfg.height = cfg.width = a.size;
  cfg.min_rects = a.min_rects;
  cfg.max_rects = a.max_rects;
  cfg.min_rect_size = a.min_rect;
  cfg.max_rect_size = a.max_rect;
  cfg.background_amplitude = a.amplitude;
  cfg.seed = a.seed;
  Dataset all = generate_synthetic(cfg, a.train_count + a.test_count);
  Dataset train, test;
  train.height = test.height = all.height;
  train.width = test.width = all.width;
  train.num_classes = test.num_classes = all.num_classes;
  for (std::size_t i = 0; i < all.samples.size(); ++i) {
    Sample s = std::move(all.samples[i]);
    const std::size_t local = i < a.train_count ? i : i - a.train_count;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%04zu", local);
    s.name = buf;
    (i < a.train_count ? train : test).samples.push_back(std::move(s));
  }
  save_dataset(train, a.out_dir + "/train");
  save_dataset(test, a.out_dir + "/test");
  std::cout << "wrote " << train.samples.size() << " train and "
            << test.samples.size() << " test images (" << all.height << "x"
            << all.width << ") under " << a.out_dir << "\n";
  return 0;
}

struct TrainArgs {
  std::string data_dir, out_path, test_dir;
  std::size_t epochs = 6;
  double lr = 0.15;
  std::uint64_t seed = 7;
  std::size_t classes = 2;
  std::string enc = "8,16", dec = "16,8";
};

int run_train(const TrainArgs& a) {
  const Dataset data = load_dataset(a.data_dir, a.classes);
  NetworkConfig cfg;
  cfg.num_classes = a.classes;
  cfg.encoder_widths = parse_widths(a.enc);
  cfg.decoder_widths = parse_widths(a.dec);
  cfg.height = data.height;
  cfg.width = data.width;
  cfg.seed = a.seed;
  Model model = Model::build(cfg);
  std::cerr << "training on " << data.samples.size() << " images, "
            << model.parameter_count() << " parameters\n";
  const auto result = model.train(data, a.epochs, a.lr, a.seed);
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
    std::cout << "epoch " << e << " mean loss "
              << format_g6(result.epoch_mean_loss[e]) << "\n";
  save_model(model, a.out_path);
  std::cout << "saved model to " << a.out_path << "\n";
  if (!a.test_dir.empty()) {
    const Dataset test = load_dataset(a.test_dir, a.classes);
    std::cout << "test foreground IoU "
              << format_g6(foreground_iou(model, test, 1)) << "\n";
  }
  return 0;
}

struct ExplainArgs {
  std::string model_path, image_path, mask_path;
  std::string methods = "all";
  std::string layer = "dec0";
  std::size_t target_class = 1;
  std::string region = "predicted";
  double alpha = 0.5;
  std::string out_prefix;
};

int run_explain(const ExplainArgs& a) {
  const auto methods = parse_methods(a.methods, false);
  const Model model = load_model(a.model_path);
  if (!model.has_layer(a.layer))
    throw CLI::ValidationError("--layer", "unknown layer '" + a.layer + "'");
  if (a.target_class >= model.config().num_classes)
    throw CLI::ValidationError("--class", "class out of range");
  const Tensor image = read_ppm(a.image_path);
  const SegmentationOutput out = model.forward(image);
  const PixelSet region =
      resolve_region(a.region, a.mask_path, model, out, a.target_class);
  std::string prefix = a.out_prefix;
  if (prefix.empty()) {
    prefix = a.image_path;
    const auto dot = prefix.rfind('.');
    if (dot != std::string::npos && dot > prefix.rfind('/') + 1)
      prefix.resize(dot);
  }
  for (const std::string& method : methods) {
    const SaliencyMap map = compute_saliency(method, model, image,
                                             a.target_class, region, a.layer);
    write_pgm(prefix + "_" + method + ".pgm", map.values);
    write_ppm(prefix + "_" + method + "_overlay.ppm",
              render_overlay(image, map.values, a.alpha));
    std::cout << method << ": wrote " << prefix << "_" << method
              << ".pgm and overlay\n";
  }
  return 0;
}

struct EvaluateArgs {
  std::string model_path, data_dir, out_path = "report.csv";
  std::string methods = "all";
  std::string policies = "all";
  std::string threshold = "abs:0.5";
  std::size_t target_class = 1;
  std::string layer = "dec0";
  std::string region = "gt";
  std::string fill = "zeros";
  std::size_t workers = 1;
  std::uint64_t seed = 7;
};

int run_evaluate(const EvaluateArgs& a) {
  BenchmarkOptions opt;
  opt.methods = parse_methods(a.methods, true);
  opt.policies = parse_policy_list(a.policies);
  opt.threshold = parse_threshold_rule(a.threshold);
  opt.target_class = a.target_class;
  opt.layer = a.layer;
  if (a.region == "gt") {
    opt.use_predicted_target = false;
  } else if (a.region == "predicted") {
    opt.use_predicted_target = true;
  } else {
    throw CLI::ValidationError("--region", "expected gt or predicted");
  }
  opt.workers = a.workers;
  opt.seed = a.seed;
  const Model model = load_model(a.model_path);
  if (!model.has_layer(a.layer))
    throw CLI::ValidationError("--layer", "unknown layer '" + a.layer + "'");
  if (a.target_class >= model.config().num_classes)
    throw CLI::ValidationError("--class", "class out of range");
  const Dataset data = load_dataset(a.data_dir, model.config().num_classes);
  if (a.fill == "mean") {
    opt.fill.use_mean = true;
    opt.fill.mean = dataset_channel_mean(data);
  } else if (a.fill != "zeros") {
    throw CLI::ValidationError("--fill", "expected zeros or mean");
  }
  opt.progress = [](std::size_t done, std::size_t total) {
    std::cerr << "\rimage " << done << "/" << total << std::flush;
    if (done == total) std::cerr << "\n";
  };
  const EvalReport report = run_benchmark(model, data, opt);
  export_report(report, a.out_path);
  for (const auto& err : report.row_errors)
    std::cerr << "row error: " << err << "\n";
  std::cout << "wrote " << a.out_path << " (" << report.rows.size()
            << " rows, " << report.means.size() << " mean rows, "
            << report.row_errors.size() << " row errors)\n";
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::size_t trials = 60;
  std::string inject_fault;
};

int run_gradcheck(const GradcheckArgs& a) {
  constexpr double tolerance = 1e-5;
  gradcheck::Options opt;
  opt.seed = a.seed;
  opt.trials = a.trials;
  opt.inject_fault = a.inject_fault;
  auto reports = gradcheck::check_primitives(opt);
  const auto taps = gradcheck::check_layer_taps(opt);
  reports.insert(reports.end(), taps.begin(), taps.end());
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : reports) {
    std::cout << r.name << ": max rel err " << format_g6(r.max_rel_err)
              << " over " << r.trials << " trials\n";
    if (r.max_rel_err >= worst) {
      worst = r.max_rel_err;
      worst_name = r.name;
    }
  }
  const bool pass = gradcheck::all_pass(reports, tolerance);
  std::cout << (pass ? "gradcheck: PASS" : "gradcheck: FAIL") << " (worst "
            << format_g6(worst) << " at " << worst_name << ", tolerance "
            << format_g6(tolerance) << ")\n";
  if (!pass) {
    for (const auto& r : reports)
      if (!(r.max_rel_err < tolerance))
        std::cerr << "gradcheck failure: " << r.name << " max rel err "
                  << format_g6(r.max_rel_err) << "\n";
  }
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CAM-family saliency methods and perturbation benchmarks for "
               "convolutional segmentation networks"};
  app.require_subcommand(1);

  SynthArgs synth;
  TrainArgs train;
  ExplainArgs explain;
  EvaluateArgs evaluate;
  GradcheckArgs gradcheck_args;

  // --config is consumed by effective_args() before parsing; the option
  // exists so the flag is recognised and shows in help.
  std::string config_path_sink;
  auto add_config_option = [&config_path_sink](CLI::App* sub) {
    sub->add_option("--config", config_path_sink,
                    "flat key=value config file (flags take precedence)")
        ->option_text("FILE");
  };

  CLI::App* s = app.add_subcommand("synth", "generate a synthetic dataset");
  s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  add_config_option(s);
  s->add_option("--out", synth.out_dir, "output directory")->required();
  s->add_option("--train-count", synth.train_count, "training images");
  s->add_option("--test-count", synth.test_count, "held-out images");
  s->add_option("--size", synth.size, "square image size");
  s->add_option("--min-rects", synth.min_rects, "min rectangles per image");
  s->add_option("--max-rects", synth.max_rects, "max rectangles per image");
  s->add_option("--min-rect", synth.min_rect, "min rectangle side");
  s->add_option("--max-rect", synth.max_rect, "max rectangle side");
  s->add_option("--background-amplitude", synth.amplitude,
                "background noise amplitude");
  s->add_option("--seed", synth.seed, "generation seed");

  CLI::App* t = app.add_subcommand("train", "train the toy segmenter");
  t->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  add_config_option(t);
  t->add_option("--data", train.data_dir, "training data directory")
      ->required();
  t->add_option("--out", train.out_path, "output model path")->required();
  t->add_option("--test-data", train.test_dir,
                "held-out directory for an IoU report");
  t->add_option("--epochs", train.epochs, "SGD epochs");
  t->add_option("--lr", train.lr, "learning rate");
  t->add_option("--seed", train.seed, "init and shuffle seed");
  t->add_option("--classes", train.classes, "number of classes");
  t->add_option("--enc", train.enc, "encoder widths, comma separated");
  t->add_option("--dec", train.dec, "decoder widths, comma separated");

  CLI::App* x = app.add_subcommand(
      "explain", "write saliency maps and overlays for one image");
  x->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  add_config_option(x);
  x->add_option("--model", explain.model_path, "model file")->required();
  x->add_option("--image", explain.image_path, "input PPM image")->required();
  x->add_option("--methods", explain.methods,
                "comma list of methods, or 'all'");
  x->add_option("--layer", explain.layer, "inspected layer");
  x->add_option("--class", explain.target_class, "target class");
  x->add_option("--region", explain.region,
                "predicted | gt | rect:x,y,w,h");
  x->add_option("--mask", explain.mask_path, "PGM mask for --region gt");
  x->add_option("--alpha", explain.alpha, "overlay opacity");
  x->add_option("--out-prefix", explain.out_prefix,
                "output stem (default: image path without extension)");

  CLI::App* e = app.add_subcommand(
      "evaluate", "run the perturbation benchmark over a dataset");
  e->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  add_config_option(e);
  e->add_option("--model", evaluate.model_path, "model file")->required();
  e->add_option("--data", evaluate.data_dir, "dataset directory")->required();
  e->add_option("--out", evaluate.out_path, "output CSV path");
  e->add_option("--methods", evaluate.methods,
                "comma list; 'all' plus optional oracle,random baselines");
  e->add_option("--policies", evaluate.policies, "m1,m2,m3 or 'all'");
  e->add_option("--threshold", evaluate.threshold, "abs:T or quantile:Q");
  e->add_option("--class", evaluate.target_class, "target class");
  e->add_option("--layer", evaluate.layer, "inspected layer");
  e->add_option("--region", evaluate.region,
                "target pixels from gt or predicted mask");
  e->add_option("--fill", evaluate.fill, "removed-pixel fill: zeros or mean");
  e->add_option("--workers", evaluate.workers, "parallel image workers");
  e->add_option("--seed", evaluate.seed, "seed for the random baseline");

  CLI::App* gc = app.add_subcommand(
      "gradcheck", "finite-difference check of all gradients");
  gc->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  add_config_option(gc);
  gc->add_option("--seed", gradcheck_args.seed, "trial seed");
  gc->add_option("--trials", gradcheck_args.trials, "trials per primitive");
  gc->add_option("--inject-fault", gradcheck_args.inject_fault,
                 "test fixture: flip the named primitive's backward rule")
      ->group("");  // hidden

  try {
    auto args = effective_args(argc, argv);
    std::vector<const char*> cargs;
    cargs.push_back(argv[0]);
    for (const auto& s2 : args) cargs.push_back(s2.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e2) {
    return app.exit(e2);
  } catch (const CLI::CallForAllHelp& e2) {
    return app.exit(e2);
  } catch (const CLI::CallForVersion& e2) {
    return app.exit(e2);
  } catch (const CLI::ParseError& e2) {
    std::cerr << "usage error: " << e2.what() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand("synth")) return run_synth(synth);
    if (app.got_subcommand("train")) return run_train(train);
    if (app.got_subcommand("explain")) return run_explain(explain);
    if (app.got_subcommand("evaluate")) return run_evaluate(evaluate);
    if (app.got_subcommand("gradcheck")) return run_gradcheck(gradcheck_args);
    std::cerr << "usage error: no subcommand\n";
    return 2;
  } catch (const CLI::ParseError& e2) {
    std::cerr << "usage error: " << e2.what() << "\n";
    return 2;
  } catch (const std::exception& e2) {
    std::cerr << "error: " << e2.what() << "\n";
    return 1;
  }
}
