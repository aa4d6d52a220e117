#include "bnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace bnet {

namespace fs = std::filesystem;

CifarRecords read_cifar10_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open CIFAR-10 file: " + path);
  CifarRecords rec;
  rec.bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  const auto size = static_cast<std::int64_t>(rec.bytes.size());
  if (size == 0) {
    throw std::runtime_error("CIFAR-10 file is empty: " + path);
  }
  if (size % kCifarRecordBytes != 0) {
    const std::int64_t whole = (size / kCifarRecordBytes) * kCifarRecordBytes;
    throw std::runtime_error("truncated CIFAR-10 record in " + path + ": file ends at byte " +
                             std::to_string(size) + ", record started at byte offset " +
                             std::to_string(whole));
  }
  return rec;
}

std::vector<std::string> cifar10_train_files(const std::string& dir) {
  std::vector<std::string> files;
  for (int i = 1; i <= 5; ++i) {
    const fs::path p = fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin");
    if (fs::exists(p)) files.push_back(p.string());
  }
  if (files.empty()) {
    const fs::path p = fs::path(dir) / "train.bin";
    if (fs::exists(p)) files.push_back(p.string());
  }
  if (files.empty()) {
    throw std::runtime_error("no CIFAR-10 training files (data_batch_*.bin or train.bin) in " +
                             dir);
  }
  return files;
}

std::string cifar10_test_file(const std::string& dir) {
  for (const char* name : {"test_batch.bin", "test.bin"}) {
    const fs::path p = fs::path(dir) / name;
    if (fs::exists(p)) return p.string();
  }
  throw std::runtime_error("no CIFAR-10 test file (test_batch.bin or test.bin) in " + dir);
}

namespace {

struct Rgb {
  double r, g, b;
};

// Bright, saturated class colors on top of darker textured backgrounds.
constexpr Rgb kPalette[10] = {
    {0.95, 0.15, 0.15}, {0.15, 0.95, 0.15}, {0.15, 0.25, 0.95}, {0.95, 0.95, 0.15},
    {0.95, 0.15, 0.95}, {0.15, 0.95, 0.95}, {0.95, 0.55, 0.15}, {0.55, 0.15, 0.95},
    {0.95, 0.95, 0.95}, {0.55, 0.95, 0.55},
};

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

SynthRaw synth_raw_images(int count, const SynthSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2 || spec.num_classes > 10) {
    throw std::invalid_argument("synthetic dataset supports 2..10 classes");
  }
  if (spec.patch < 2 || spec.patch > spec.image_hw) {
    throw std::invalid_argument("synthetic patch must fit inside the image");
  }
  const int hw = spec.image_hw;
  SynthRaw raw;
  raw.image_hw = hw;
  raw.pixels.assign(static_cast<std::size_t>(count) * 3 * hw * hw, 0.0f);
  raw.labels.resize(static_cast<std::size_t>(count));
  raw.boxes.resize(static_cast<std::size_t>(count));

  // Balanced labels (round-robin), then a seeded shuffle of the order.
  for (int i = 0; i < count; ++i) raw.labels[static_cast<std::size_t>(i)] = i % spec.num_classes;
  Rng rng(seed);
  rng.shuffle(raw.labels);

  const double tau = 6.283185307179586;
  for (int i = 0; i < count; ++i) {
    const int label = raw.labels[static_cast<std::size_t>(i)];
    const Rgb color = kPalette[label];
    // Background: random base color, low-frequency sinusoid, white noise.
    const double base[3] = {rng.uniform(0.20, 0.55), rng.uniform(0.20, 0.55),
                            rng.uniform(0.20, 0.55)};
    const double fx = rng.uniform(0.5, 2.0) * tau / hw;
    const double fy = rng.uniform(0.5, 2.0) * tau / hw;
    const double phase = rng.uniform(0.0, tau);
    const int x0 = static_cast<int>(rng.uniform_int(0, hw - spec.patch));
    const int y0 = static_cast<int>(rng.uniform_int(0, hw - spec.patch));
    raw.boxes[static_cast<std::size_t>(i)] = PatchBox{x0, y0, spec.patch};

    float* img = raw.pixels.data() + static_cast<std::int64_t>(i) * 3 * hw * hw;
    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x) {
        const double tex = 0.08 * std::sin(fx * x + fy * y + phase);
        const bool inside = y >= y0 && y < y0 + spec.patch && x >= x0 && x < x0 + spec.patch;
        for (int c = 0; c < 3; ++c) {
          const double object = c == 0 ? color.r : (c == 1 ? color.g : color.b);
          double v = inside ? object + rng.uniform(-0.05, 0.05)
                            : base[c] + tex + rng.uniform(-spec.noise, spec.noise);
          img[static_cast<std::int64_t>(c) * hw * hw + y * hw + x] =
              static_cast<float>(clamp01(v));
        }
      }
    }
  }
  return raw;
}

void write_cifar_format(const std::string& path, const SynthRaw& raw) {
  if (raw.image_hw != 32) {
    throw std::invalid_argument("CIFAR-10 record layout requires 32x32 images");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  const std::int64_t plane = 32 * 32;
  for (std::size_t i = 0; i < raw.labels.size(); ++i) {
    const char label = static_cast<char>(raw.labels[i]);
    os.write(&label, 1);
    const float* img = raw.pixels.data() + static_cast<std::int64_t>(i) * 3 * plane;
    for (std::int64_t p = 0; p < 3 * plane; ++p) {
      const auto byte =
          static_cast<unsigned char>(std::lround(clamp01(static_cast<double>(img[p])) * 255.0));
      os.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
  if (!os) throw std::runtime_error("error writing " + path);
}

}  // namespace bnet
