#include "bnet/train.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace bnet {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (lr0 <= 0.0) throw std::invalid_argument("config: lr0 must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("config: momentum must be in [0, 1)");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("config: weight_decay must be >= 0");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (dtype != "f32" && dtype != "f64") throw std::invalid_argument("config: dtype must be f32 or f64");
  if (dataset != "synthetic" && dataset != "cifar10") {
    throw std::invalid_argument("config: dataset must be synthetic or cifar10");
  }
  if (bnet_init != "identity" && bnet_init != "fanin") {
    throw std::invalid_argument("config: bnet_init must be identity or fanin");
  }
  if (pixels.mean.size() != 3 || pixels.stddev.size() != 3) {
    throw std::invalid_argument("config: pixel_mean and pixel_std need 3 entries");
  }
  if (epsilon <= 0.0) throw std::invalid_argument("config: epsilon must be > 0");
  if (norm_momentum <= 0.0 || norm_momentum > 1.0) {
    throw std::invalid_argument("config: norm_momentum must be in (0, 1]");
  }
}

TrainConfig parse_config_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "arch") cfg.arch = value.get<std::string>();
    else if (key == "norm") cfg.norm = value.get<std::string>();
    else if (key == "positions") cfg.positions = value.get<std::string>();
    else if (key == "epochs") cfg.epochs = value.get<int>();
    else if (key == "batch_size") cfg.batch_size = value.get<int>();
    else if (key == "lr0") cfg.lr0 = value.get<double>();
    else if (key == "schedule") {
      const auto s = value.get<std::string>();
      if (s == "cosine") cfg.schedule.kind = ScheduleKind::cosine;
      else if (s == "step") cfg.schedule.kind = ScheduleKind::step;
      else throw std::invalid_argument("config: schedule must be cosine or step");
    }
    else if (key == "step_period") cfg.schedule.period = value.get<int>();
    else if (key == "step_factor") cfg.schedule.factor = value.get<double>();
    else if (key == "momentum") cfg.momentum = value.get<double>();
    else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
    else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
    else if (key == "dtype") cfg.dtype = value.get<std::string>();
    else if (key == "dataset") cfg.dataset = value.get<std::string>();
    else if (key == "data_path") cfg.data_path = value.get<std::string>();
    else if (key == "synth_train") cfg.synth.num_train = value.get<int>();
    else if (key == "synth_test") cfg.synth.num_test = value.get<int>();
    else if (key == "synth_image") cfg.synth.image_hw = value.get<int>();
    else if (key == "synth_classes") cfg.synth.num_classes = value.get<int>();
    else if (key == "synth_patch") cfg.synth.patch = value.get<int>();
    else if (key == "synth_noise") cfg.synth.noise = value.get<double>();
    else if (key == "norm_momentum") cfg.norm_momentum = value.get<double>();
    else if (key == "epsilon") cfg.epsilon = value.get<double>();
    else if (key == "gn_groups") cfg.gn_groups = value.get<int>();
    else if (key == "bnet_init") cfg.bnet_init = value.get<std::string>();
    else if (key == "augment") cfg.augment = value.get<bool>();
    else if (key == "pixel_mean") cfg.pixels.mean = value.get<std::vector<double>>();
    else if (key == "pixel_std") cfg.pixels.stddev = value.get<std::vector<double>>();
    else if (key == "depths") {
      auto v = value.get<std::vector<int>>();
      if (v.size() != 3) throw std::invalid_argument("config: depths needs 3 entries");
      std::copy(v.begin(), v.end(), cfg.depths.begin());
    }
    else if (key == "base_width") cfg.base_width = value.get<int>();
    else if (key == "input_hw") cfg.input_hw = value.get<int>();
    else if (key == "num_classes") cfg.num_classes = value.get<int>();
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  // Synthetic class count feeds the classifier width unless overridden.
  if (cfg.dataset == "synthetic" && !j.contains("num_classes")) {
    cfg.num_classes = cfg.synth.num_classes;
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  std::string text(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>{});
  return parse_config_json(text);
}

std::string config_to_json(const TrainConfig& cfg) {
  json j;
  j["arch"] = cfg.arch;
  j["norm"] = cfg.norm;
  j["positions"] = cfg.positions;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr0"] = cfg.lr0;
  j["schedule"] = cfg.schedule.kind == ScheduleKind::cosine ? "cosine" : "step";
  j["step_period"] = cfg.schedule.period;
  j["step_factor"] = cfg.schedule.factor;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["dtype"] = cfg.dtype;
  j["dataset"] = cfg.dataset;
  j["data_path"] = cfg.data_path;
  j["synth_train"] = cfg.synth.num_train;
  j["synth_test"] = cfg.synth.num_test;
  j["synth_image"] = cfg.synth.image_hw;
  j["synth_classes"] = cfg.synth.num_classes;
  j["synth_patch"] = cfg.synth.patch;
  j["synth_noise"] = cfg.synth.noise;
  j["norm_momentum"] = cfg.norm_momentum;
  j["epsilon"] = cfg.epsilon;
  j["gn_groups"] = cfg.gn_groups;
  j["bnet_init"] = cfg.bnet_init;
  j["augment"] = cfg.augment;
  j["pixel_mean"] = cfg.pixels.mean;
  j["pixel_std"] = cfg.pixels.stddev;
  j["depths"] = std::vector<int>(cfg.depths.begin(), cfg.depths.end());
  j["base_width"] = cfg.base_width;
  j["input_hw"] = cfg.input_hw;
  j["num_classes"] = cfg.num_classes;
  return j.dump(2) + "\n";
}

LayerGraph build_graph_for_config(const TrainConfig& cfg) {
  const NormSelection sel = parse_norm_selection(cfg.norm, cfg.positions, cfg.gn_groups);
  if (cfg.arch == "mini") {
    MiniNetConfig mini;
    mini.depths = cfg.depths;
    mini.base_width = cfg.base_width;
    mini.input_hw = cfg.input_hw;
    mini.num_classes = cfg.num_classes;
    mini.norms = sel;
    return build_mini_resnet(mini);
  }
  if (cfg.arch == "resnet18") return build_resnet_shape_graph(18, sel, cfg.input_hw);
  if (cfg.arch == "resnet50") return build_resnet_shape_graph(50, sel, cfg.input_hw);
  throw std::invalid_argument("unknown arch '" + cfg.arch + "'");
}

NetworkOptions network_options(const TrainConfig& cfg) {
  NetworkOptions opts;
  opts.bnet_init = cfg.bnet_init == "fanin" ? BnetInit::fan_in : BnetInit::identity;
  opts.norm_momentum = cfg.norm_momentum;
  opts.epsilon = cfg.epsilon;
  return opts;
}

std::string format_metric(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "epoch,split,lr,loss,top1\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + r.split + "," + format_metric(r.lr) + "," +
           format_metric(r.loss) + "," + format_metric(r.top1) + "\n";
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> gather_batch(const Dataset<T>& data, const std::vector<std::int64_t>& order,
                       std::int64_t start, std::int64_t stop, bool augment, Rng& rng,
                       std::vector<int>& labels) {
  const std::int64_t C = data.images.c(), H = data.images.h(), W = data.images.w();
  const std::int64_t bs = stop - start;
  Tensor<T> batch({bs, C, H, W});
  labels.resize(static_cast<std::size_t>(bs));
  for (std::int64_t b = 0; b < bs; ++b) {
    const std::int64_t idx = order[static_cast<std::size_t>(start + b)];
    labels[static_cast<std::size_t>(b)] = data.labels[static_cast<std::size_t>(idx)];
    const T* src = data.images.data() + idx * C * H * W;
    T* dst = batch.data() + b * C * H * W;
    if (!augment) {
      std::copy_n(src, C * H * W, dst);
      continue;
    }
    // Horizontal flip with probability 1/2, then a random crop from a
    // 4-pixel zero pad.
    const bool flip = rng.uniform() < 0.5;
    const int pad = 4;
    const int dy = static_cast<int>(rng.uniform_int(-pad, pad));
    const int dx = static_cast<int>(rng.uniform_int(-pad, pad));
    for (std::int64_t c = 0; c < C; ++c) {
      for (std::int64_t y = 0; y < H; ++y) {
        const std::int64_t sy = y + dy;
        for (std::int64_t x = 0; x < W; ++x) {
          const std::int64_t sx0 = flip ? (W - 1 - x) : x;
          const std::int64_t sx = sx0 + dx;
          T v = T(0);
          if (sy >= 0 && sy < H && sx >= 0 && sx < W) v = src[(c * H + sy) * W + sx];
          dst[(c * H + y) * W + x] = v;
        }
      }
    }
  }
  return batch;
}

template <typename T>
TrainOutcome train_impl(const TrainConfig& cfg, const std::string& out_dir) {
  if (cfg.arch != "mini") {
    throw std::invalid_argument("arch '" + cfg.arch + "' is a counting-only shape graph; " +
                                "training runs use --arch mini");
  }
  fs::create_directories(out_dir);
  SplitDataset<T> data = load_dataset_for_config<T>(cfg);
  if (data.train.size() < cfg.batch_size && data.train.size() < 2) {
    throw std::invalid_argument("training set too small");
  }

  LayerGraph graph = build_graph_for_config(cfg);
  Network<T> net(graph, cfg.seed, network_options(cfg));
  auto params = net.parameters();
  std::vector<std::vector<T>> velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i].assign(params[i].value->size(), T(0));
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(data.train.size()));
  std::vector<int> labels;
  TrainOutcome out;
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.schedule, epoch - 1, cfg.epochs, cfg.lr0);
    // Shuffling order is a pure function of (seed, epoch); augmentation
    // draws continue on the same per-epoch stream.
    Rng erng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    erng.shuffle(order);

    net.set_mode(Mode::train);
    double loss_sum = 0.0;
    std::int64_t correct = 0, seen = 0;
    for (std::int64_t start = 0; start < data.train.size(); start += cfg.batch_size) {
      const std::int64_t stop = std::min<std::int64_t>(start + cfg.batch_size, data.train.size());
      if (stop - start < 2) break;  // a norm layer cannot standardize a single sample
      Tensor<T> batch = gather_batch(data.train, order, start, stop, cfg.augment, erng, labels);
      Tensor<T> logits = net.forward(batch);
      auto lg = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(lg.loss)) throw DivergenceError(epoch);
      loss_sum += lg.loss * static_cast<double>(stop - start);
      correct += lg.correct;
      seen += stop - start;
      net.zero_grad();
      net.backward(lg.grad);
      for (std::size_t i = 0; i < params.size(); ++i) {
        sgd_step<T>(*params[i].value, *params[i].grad, velocity[i], lr, cfg.momentum,
                    cfg.weight_decay);
      }
      ++step;
    }
    out.rows.push_back({epoch, "train", lr, loss_sum / static_cast<double>(seen),
                        100.0 * static_cast<double>(correct) / static_cast<double>(seen)});
    if (data.test.size() > 0) {
      auto [tl, tt] = evaluate(net, data.test, cfg.batch_size);
      out.rows.push_back({epoch, "test", lr, tl, tt});
    }
  }

  out.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  out.checkpoint_path = (fs::path(out_dir) / "checkpoint.bin").string();
  out.config_path = (fs::path(out_dir) / "config.resolved.json").string();
  {
    std::ofstream os(out.metrics_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + out.metrics_path);
    os << metrics_to_csv(out.rows);
  }
  save_checkpoint(out.checkpoint_path, net.save_state(step));
  {
    std::ofstream os(out.config_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + out.config_path);
    os << config_to_json(cfg);
  }
  return out;
}

}  // namespace

TrainOutcome run_training(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.dtype == "f64") return train_impl<double>(cfg, out_dir);
  return train_impl<float>(cfg, out_dir);
}

}  // namespace bnet
