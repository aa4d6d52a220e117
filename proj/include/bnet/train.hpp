#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bnet/data.hpp"
#include "bnet/graph.hpp"
#include "bnet/network.hpp"

namespace bnet {

enum class ScheduleKind { step, cosine };

struct Schedule {
  ScheduleKind kind = ScheduleKind::cosine;
  int period = 30;      // step schedule
  double factor = 0.1;  // step schedule
};

// step: lr0 * factor^floor(epoch / period); cosine: 0.5 * lr0 * (1 + cos(pi * epoch / total)).
inline double lr_at(const Schedule& s, int epoch, int total_epochs, double lr0) {
  if (epoch < 0) throw std::invalid_argument("negative epoch");
  if (s.kind == ScheduleKind::step) {
    if (s.period < 1) throw std::invalid_argument("step schedule needs period >= 1");
    return lr0 * std::pow(s.factor, static_cast<double>(epoch / s.period));
  }
  if (total_epochs < 1) throw std::invalid_argument("cosine schedule needs total epochs >= 1");
  return 0.5 * lr0 *
         (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                         static_cast<double>(total_epochs)));
}

// v <- momentum * v + (grad + wd * param); param <- param - lr * v.
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr,
              double momentum, double weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size()) {
    throw std::invalid_argument("sgd_step: shape mismatch");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]) +
                     weight_decay * static_cast<double>(param[i]);
    const double v = momentum * static_cast<double>(velocity[i]) + g;
    velocity[i] = static_cast<T>(v);
    param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * v);
  }
}

struct TrainConfig {
  std::string arch = "mini";
  std::string norm = "bn";
  std::string positions = "c";
  int epochs = 20;
  int batch_size = 64;
  double lr0 = 0.05;
  Schedule schedule;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  std::string dtype = "f32";
  std::string dataset = "synthetic";
  std::string data_path;
  SynthSpec synth;
  double norm_momentum = 0.1;
  double epsilon = 1e-5;
  int gn_groups = 8;
  std::string bnet_init = "identity";
  bool augment = false;
  PixelStandardize pixels;
  // mini architecture knobs
  std::array<int, 3> depths{2, 2, 2};
  int base_width = 16;
  int input_hw = 32;
  int num_classes = 10;

  void validate() const;
};

TrainConfig parse_config_json(const std::string& text);
TrainConfig load_config_file(const std::string& path);
std::string config_to_json(const TrainConfig& cfg);

// Graph/network construction shared by every subcommand.
LayerGraph build_graph_for_config(const TrainConfig& cfg);
NetworkOptions network_options(const TrainConfig& cfg);

struct MetricsRow {
  int epoch = 0;
  std::string split;
  double lr = 0.0;
  double loss = 0.0;
  double top1 = 0.0;  // percent
};

std::string format_metric(double v);
std::string metrics_to_csv(const std::vector<MetricsRow>& rows);

struct TrainOutcome {
  std::vector<MetricsRow> rows;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string config_path;
};

// Aborted training runs raise this with the offending epoch.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch)
      : std::runtime_error("divergence at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// Runs the configured experiment, writing metrics.csv, checkpoint.bin and
// config.resolved.json into out_dir. Deterministic given config + seed.
TrainOutcome run_training(const TrainConfig& cfg, const std::string& out_dir);

// Loss and top-1 (percent) on a dataset with all norm layers in eval mode.
template <typename T>
std::pair<double, double> evaluate(Network<T>& net, const Dataset<T>& data, int batch_size) {
  const Mode prev = net.mode();
  net.set_mode(Mode::eval);
  double total_loss = 0.0;
  std::int64_t correct = 0;
  const std::int64_t n = data.size();
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t stop = std::min<std::int64_t>(start + batch_size, n);
    const std::int64_t bs = stop - start;
    Tensor<T> batch({bs, data.images.c(), data.images.h(), data.images.w()});
    std::copy_n(data.images.data() + start * data.images.c() * data.images.h() * data.images.w(),
                batch.numel(), batch.data());
    std::vector<int> labels(data.labels.begin() + start, data.labels.begin() + stop);
    Tensor<T> logits = net.forward(batch);
    auto lg = softmax_cross_entropy(logits, labels);
    total_loss += lg.loss * static_cast<double>(bs);
    correct += lg.correct;
  }
  net.set_mode(prev);
  return {total_loss / static_cast<double>(n),
          100.0 * static_cast<double>(correct) / static_cast<double>(n)};
}

template <typename T>
SplitDataset<T> load_dataset_for_config(const TrainConfig& cfg) {
  if (cfg.dataset == "synthetic") {
    return synth_dataset<T>(cfg.synth, cfg.seed, cfg.pixels);
  }
  if (cfg.dataset == "cifar10") {
    if (cfg.data_path.empty()) throw std::invalid_argument("cifar10 dataset needs data_path");
    return load_cifar10<T>(cfg.data_path, cfg.pixels);
  }
  throw std::invalid_argument("unknown dataset '" + cfg.dataset + "'");
}

}  // namespace bnet
