#include "bnet/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "bnet/analysis.hpp"
#include "bnet/checkpoint.hpp"
#include "bnet/data.hpp"
#include "bnet/graph.hpp"
#include "bnet/network.hpp"
#include "bnet/train.hpp"

namespace bnet {

namespace fs = std::filesystem;

namespace {

// Raised for bad invocations (missing files, bad flag combinations) as
// opposed to failures while executing a valid command.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CliArgs {
  std::string config;
  std::string data;
  std::string out = "out";
  std::string arch;
  std::string norm;
  std::string positions;
  std::string dtype;
  std::string layer;
  std::string image;
  std::string checkpoint;
  std::uint64_t seed = 0;
  int input = 0;
  bool emit_curves = false;
  double tolerance = 1e-6;
  int train_count = 256;
  int test_count = 128;
  int image_count = 0;

  bool has_seed = false, has_arch = false, has_norm = false, has_positions = false;
  bool has_dtype = false, has_data = false, has_input = false;
};

TrainConfig resolve_config(const CliArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    if (!fs::exists(a.config)) throw UsageError("config file not found: " + a.config);
    try {
      cfg = load_config_file(a.config);
    } catch (const std::exception& e) {
      throw UsageError(std::string("bad config file: ") + e.what());
    }
  }
  if (a.has_arch) cfg.arch = a.arch;
  if (a.has_norm) cfg.norm = a.norm;
  if (a.has_positions) cfg.positions = a.positions;
  if (a.has_dtype) cfg.dtype = a.dtype;
  if (a.has_seed) cfg.seed = a.seed;
  if (a.has_data) {
    cfg.data_path = a.data;
    cfg.dataset = "cifar10";
  }
  if (a.has_input) cfg.input_hw = a.input;
  try {
    cfg.validate();
    parse_norm_selection(cfg.norm, cfg.positions, cfg.gn_groups);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

std::string curves_csv(const std::vector<MetricsRow>& rows) {
  std::map<int, std::array<std::string, 4>> by_epoch;
  for (const auto& r : rows) {
    auto& e = by_epoch[r.epoch];
    if (r.split == "train") {
      e[0] = format_metric(r.loss);
      e[1] = format_metric(r.top1);
    } else {
      e[2] = format_metric(r.loss);
      e[3] = format_metric(r.top1);
    }
  }
  std::string out = "epoch,train_loss,train_top1,test_loss,test_top1\n";
  for (const auto& [epoch, e] : by_epoch) {
    out += std::to_string(epoch) + "," + e[0] + "," + e[1] + "," + e[2] + "," + e[3] + "\n";
  }
  return out;
}

int cmd_train(const CliArgs& a) {
  const TrainConfig cfg = resolve_config(a);
  TrainOutcome outcome = run_training(cfg, a.out);
  if (a.emit_curves) {
    write_file((fs::path(a.out) / "curves.csv").string(), curves_csv(outcome.rows));
  }
  for (const auto& r : outcome.rows) {
    if (r.epoch == cfg.epochs) {
      std::fprintf(stderr, "epoch %d %s: loss %s top1 %s\n", r.epoch, r.split.c_str(),
                   format_metric(r.loss).c_str(), format_metric(r.top1).c_str());
    }
  }
  std::fprintf(stderr, "wrote %s, %s\n", outcome.metrics_path.c_str(),
               outcome.checkpoint_path.c_str());
  return 0;
}

template <typename T>
int eval_impl(const TrainConfig& cfg, const std::string& checkpoint_path) {
  SplitDataset<T> data = load_dataset_for_config<T>(cfg);
  Network<T> net(build_graph_for_config(cfg), cfg.seed, network_options(cfg));
  net.load_state(load_checkpoint(checkpoint_path));
  auto [loss, top1] = evaluate(net, data.test, cfg.batch_size);
  std::printf("test,%s,%s\n", format_metric(loss).c_str(), format_metric(top1).c_str());
  return 0;
}

int cmd_eval(const CliArgs& a) {
  if (a.checkpoint.empty()) throw UsageError("eval needs --checkpoint");
  if (a.config.empty()) throw UsageError("eval needs --config (the resolved training config)");
  if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint not found: " + a.checkpoint);
  const TrainConfig cfg = resolve_config(a);
  if (cfg.dtype == "f64") return eval_impl<double>(cfg, a.checkpoint);
  return eval_impl<float>(cfg, a.checkpoint);
}

int cmd_count(const CliArgs& a) {
  if (!a.has_arch) throw UsageError("count needs --arch {mini|resnet18|resnet50}");
  TrainConfig cfg = resolve_config(a);
  if (!a.has_input) cfg.input_hw = cfg.arch == "mini" ? 32 : 224;
  const LayerGraph g = build_graph_for_config(cfg);
  const CostReport report = count_flops(g, cfg.input_hw);
  std::printf("%s", report.to_text().c_str());
  const double mparams = static_cast<double>(report.total_params) / 1e6;
  const double gmacs = static_cast<double>(report.total_macs) / 1e9;
  std::printf("headline: params %lld (%.1f M), macs %lld (%.2f GFLOPs at 1 MAC = 1 FLOP)\n",
              static_cast<long long>(report.total_params), mparams,
              static_cast<long long>(report.total_macs), gmacs);
  return 0;
}

template <typename T>
int gradcheck_impl(const TrainConfig& cfg, double tolerance) {
  Network<T> net(build_graph_for_config(cfg), cfg.seed, network_options(cfg));
  Rng rng(mix_seed(cfg.seed, 0x6c));
  Tensor<T> input({2, 3, cfg.input_hw, cfg.input_hw});
  for (auto& v : input.values()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  std::vector<int> labels(2);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, cfg.num_classes - 1));
  const GradCheckReport report = grad_check(net, input, labels);
  std::printf("%s", report.to_text().c_str());
  if (report.max_rel_err > tolerance) {
    std::fprintf(stderr, "gradcheck failed: max_rel_err %.3e > %.1e\n", report.max_rel_err,
                 tolerance);
    return 2;
  }
  return 0;
}

int cmd_gradcheck(const CliArgs& a) {
  TrainConfig cfg = resolve_config(a);
  if (cfg.arch != "mini") throw UsageError("gradcheck differences the mini architecture only");
  if (!a.has_dtype) cfg.dtype = "f64";
  // Reduced mini instance: the full end-to-end topology at a size central
  // differences can cover.
  cfg.depths = {1, 1, 1};
  cfg.base_width = 4;
  cfg.input_hw = 16;
  cfg.gn_groups = 2;
  if (cfg.dtype == "f64") return gradcheck_impl<double>(cfg, a.tolerance);
  return gradcheck_impl<float>(cfg, a.tolerance);
}

template <typename T>
Tensor<T> load_image_tensor(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  const NamedTensor* t = ckpt.find("image");
  if (t == nullptr) throw std::runtime_error("no tensor named 'image' in " + path);
  if (t->dtype != Tensor<T>::dtype()) {
    throw std::runtime_error("image dtype mismatch: file has " +
                             std::string(dtype_name(t->dtype)));
  }
  std::vector<std::uint32_t> dims = t->dims;
  if (dims.size() == 3) dims.insert(dims.begin(), 1);
  if (dims.size() != 4 || dims[0] != 1) {
    throw std::runtime_error("image tensor must have shape (1,c,h,w)");
  }
  Shape4 shape{1, dims[1], dims[2], dims[3]};
  if constexpr (std::is_same_v<T, float>) {
    return Tensor<T>(shape, t->f32);
  } else {
    return Tensor<T>(shape, t->f64);
  }
}

template <typename T>
int heatmap_impl(const TrainConfig& cfg, const CliArgs& a) {
  Network<T> net(build_graph_for_config(cfg), cfg.seed, network_options(cfg));
  net.load_state(load_checkpoint(a.checkpoint));
  Tensor<T> image = load_image_tensor<T>(a.image);

  std::string layer = a.layer;
  if (layer.empty()) {
    // Default to the last conv-recovery norm in the graph.
    for (const auto& node : net.graph().nodes) {
      if (node.kind == LayerKind::Norm &&
          (node.norm.kind == NormKind::Bnet || node.norm.kind == NormKind::Gnet)) {
        layer = node.name;
      }
    }
    if (layer.empty()) throw std::runtime_error("graph has no bnet/gnet layer to analyze");
  }
  const Heatmap hm = enhancement_heatmap(net, image, layer);
  fs::create_directories(a.out);
  write_file((fs::path(a.out) / "heatmap.csv").string(), heatmap_to_csv(hm));
  write_file((fs::path(a.out) / "heatmap.pgm").string(), heatmap_to_pgm(hm));
  std::fprintf(stderr, "heatmap for %s: %dx%d, %d channels, %zu skipped\n", layer.c_str(), hm.h,
               hm.w, hm.channels, hm.skipped_channels.size());
  return 0;
}

int cmd_heatmap(const CliArgs& a) {
  if (a.checkpoint.empty() || a.config.empty() || a.image.empty()) {
    throw UsageError("heatmap needs --checkpoint, --config and --image");
  }
  for (const std::string& p : {a.checkpoint, a.config, a.image}) {
    if (!fs::exists(p)) throw UsageError("file not found: " + p);
  }
  const TrainConfig cfg = resolve_config(a);
  if (cfg.dtype == "f64") return heatmap_impl<double>(cfg, a);
  return heatmap_impl<float>(cfg, a);
}

int cmd_synth_data(const CliArgs& a) {
  SynthSpec spec;
  spec.num_train = a.train_count;
  spec.num_test = a.test_count;
  const std::uint64_t seed = a.has_seed ? a.seed : 1;
  fs::create_directories(a.out);
  const SynthRaw train = synth_raw_images(spec.num_train, spec, mix_seed(seed, 0xd5));
  const SynthRaw test = synth_raw_images(spec.num_test, spec, mix_seed(seed, 0x7e));
  write_cifar_format((fs::path(a.out) / "train.bin").string(), train);
  write_cifar_format((fs::path(a.out) / "test.bin").string(), test);

  std::string boxes = "index,label,x0,y0,size\n";
  for (std::size_t i = 0; i < test.labels.size(); ++i) {
    const PatchBox& b = test.boxes[i];
    boxes += std::to_string(i) + "," + std::to_string(test.labels[i]) + "," +
             std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.size) +
             "\n";
  }
  write_file((fs::path(a.out) / "boxes.csv").string(), boxes);

  // Standardized single-image tensors for the heatmap tool.
  const int n_images = std::min<int>(a.image_count, spec.num_test);
  if (n_images > 0) {
    fs::create_directories(fs::path(a.out) / "images");
    PixelStandardize px;
    Dataset<float> ds = standardize_synth<float>(test, spec.num_classes, px);
    const std::int64_t per = 3LL * spec.image_hw * spec.image_hw;
    for (int i = 0; i < n_images; ++i) {
      Checkpoint ckpt;
      std::vector<float> values(ds.images.data() + i * per, ds.images.data() + (i + 1) * per);
      ckpt.tensors.push_back(NamedTensor::of_f32(
          "image",
          {1, 3, static_cast<std::uint32_t>(spec.image_hw),
           static_cast<std::uint32_t>(spec.image_hw)},
          std::move(values)));
      char name[64];
      std::snprintf(name, sizeof(name), "images/img_%03d.bin", i);
      save_checkpoint((fs::path(a.out) / name).string(), ckpt);
    }
  }
  std::fprintf(stderr, "wrote %d train and %d test records to %s\n", spec.num_train,
               spec.num_test, a.out.c_str());
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"training, counting and analysis for batch-norm layers with conv recovery"};
  app.require_subcommand(1);
  CliArgs a;

  const auto add_common = [&a](CLI::App* sub) {
    sub->add_option("--config", a.config, "JSON config file");
    sub->add_option("--out", a.out, "output directory");
    sub->add_option("--seed", a.seed)->each([&a](const std::string&) { a.has_seed = true; });
    sub->add_option("--arch", a.arch, "mini|resnet18|resnet50")
        ->each([&a](const std::string&) { a.has_arch = true; });
    sub->add_option("--norm", a.norm, "bn|bnet1|bnet3|bnet5|bnet7|bnet3d2|gn|gnet3|bnconv")
        ->each([&a](const std::string&) { a.has_norm = true; });
    sub->add_option("--positions", a.positions, "plug-in slots, subsets of a,b,c")
        ->each([&a](const std::string&) { a.has_positions = true; });
    sub->add_option("--dtype", a.dtype, "f32|f64")
        ->each([&a](const std::string&) { a.has_dtype = true; });
    sub->add_option("--data", a.data, "CIFAR-10 directory")
        ->each([&a](const std::string&) { a.has_data = true; });
    sub->add_option("--input", a.input, "input resolution")
        ->each([&a](const std::string&) { a.has_input = true; });
  };

  CLI::App* train = app.add_subcommand("train", "train a mini network");
  add_common(train);
  train->add_flag("--emit-curves", a.emit_curves, "write per-epoch loss/accuracy CSV");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval);
  eval->add_option("--checkpoint", a.checkpoint, "checkpoint file");

  CLI::App* count = app.add_subcommand("count", "parameter and FLOP report for an architecture");
  add_common(count);

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck);
  gradcheck->add_option("--tolerance", a.tolerance, "max relative error");

  CLI::App* heatmap = app.add_subcommand("heatmap", "enhancement heatmap of a bnet layer");
  add_common(heatmap);
  heatmap->add_option("--checkpoint", a.checkpoint, "checkpoint file");
  heatmap->add_option("--image", a.image, "image tensor file");
  heatmap->add_option("--layer", a.layer, "norm layer name");

  CLI::App* synth = app.add_subcommand("synth-data", "generate the synthetic dataset on disk");
  add_common(synth);
  synth->add_option("--train-count", a.train_count, "training records");
  synth->add_option("--test-count", a.test_count, "test records");
  synth->add_option("--images", a.image_count, "also write this many image tensor files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (train->parsed()) return cmd_train(a);
    if (eval->parsed()) return cmd_eval(a);
    if (count->parsed()) return cmd_count(a);
    if (gradcheck->parsed()) return cmd_gradcheck(a);
    if (heatmap->parsed()) return cmd_heatmap(a);
    if (synth->parsed()) return cmd_synth_data(a);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace bnet
