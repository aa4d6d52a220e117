#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnet/rng.hpp"
#include "bnet/tensor.hpp"

namespace bnet {

// One record is a label byte plus 3072 pixel bytes (1024 R, 1024 G, 1024 B,
// row-major 32x32), records concatenated.
inline constexpr std::int64_t kCifarImageBytes = 3 * 32 * 32;
inline constexpr std::int64_t kCifarRecordBytes = 1 + kCifarImageBytes;

struct PixelStandardize {
  std::vector<double> mean{0.5, 0.5, 0.5};
  std::vector<double> stddev{0.25, 0.25, 0.25};
};

struct PatchBox {
  int x0 = 0;  // column of the top-left corner
  int y0 = 0;  // row of the top-left corner
  int size = 0;

  bool contains(int row, int col) const {
    return row >= y0 && row < y0 + size && col >= x0 && col < x0 + size;
  }
};

template <typename T>
struct Dataset {
  Tensor<T> images;  // (N, C, H, W), standardized
  std::vector<int> labels;
  std::vector<PatchBox> boxes;  // synthetic datasets only
  int num_classes = 10;

  std::int64_t size() const { return images.n(); }
};

template <typename T>
struct SplitDataset {
  Dataset<T> train;
  Dataset<T> test;
};

// Raw CIFAR-10 records; validated to be a whole number of 3073-byte records.
struct CifarRecords {
  std::vector<std::uint8_t> bytes;
  std::int64_t count() const { return static_cast<std::int64_t>(bytes.size()) / kCifarRecordBytes; }
};

CifarRecords read_cifar10_file(const std::string& path);

// Scale pixels to [0,1], then standardize per channel with the declared
// constants.
template <typename T>
Dataset<T> decode_cifar(const CifarRecords& rec, const PixelStandardize& std_constants) {
  if (std_constants.mean.size() != 3 || std_constants.stddev.size() != 3) {
    throw std::invalid_argument("pixel standardization needs 3 mean and 3 stddev values");
  }
  Dataset<T> ds;
  const std::int64_t n = rec.count();
  ds.images = Tensor<T>({n, 3, 32, 32});
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    const std::uint8_t* p = rec.bytes.data() + r * kCifarRecordBytes;
    const int label = p[0];
    if (label > 9) {
      throw std::runtime_error("bad CIFAR-10 label " + std::to_string(label) +
                               " at byte offset " + std::to_string(r * kCifarRecordBytes));
    }
    ds.labels[static_cast<std::size_t>(r)] = label;
    for (int c = 0; c < 3; ++c) {
      const std::uint8_t* plane = p + 1 + c * 1024;
      const double m = std_constants.mean[static_cast<std::size_t>(c)];
      const double s = std_constants.stddev[static_cast<std::size_t>(c)];
      T* dst = ds.images.data() + (r * 3 + c) * 1024;
      for (int i = 0; i < 1024; ++i) {
        dst[i] = static_cast<T>((static_cast<double>(plane[i]) / 255.0 - m) / s);
      }
    }
  }
  return ds;
}

std::vector<std::string> cifar10_train_files(const std::string& dir);
std::string cifar10_test_file(const std::string& dir);

template <typename T>
SplitDataset<T> load_cifar10(const std::string& dir, const PixelStandardize& std_constants) {
  CifarRecords train;
  for (const std::string& f : cifar10_train_files(dir)) {
    CifarRecords part = read_cifar10_file(f);
    train.bytes.insert(train.bytes.end(), part.bytes.begin(), part.bytes.end());
  }
  SplitDataset<T> out;
  out.train = decode_cifar<T>(train, std_constants);
  out.test = decode_cifar<T>(read_cifar10_file(cifar10_test_file(dir)), std_constants);
  return out;
}

// ---- synthetic object-patch dataset ------------------------------------

struct SynthSpec {
  int num_train = 256;
  int num_test = 128;
  int image_hw = 32;
  int num_classes = 10;
  int patch = 10;        // side of the square object patch
  double noise = 0.03;   // white-noise amplitude on top of the textured background
};

// Raw [0,1] pixel images: textured background with a class-colored bright
// square patch at a random position. Deterministic per seed; labels balanced
// within +-1.
struct SynthRaw {
  std::vector<float> pixels;  // (N, 3, H, W) in [0,1]
  std::vector<int> labels;
  std::vector<PatchBox> boxes;
  int image_hw = 0;
};

SynthRaw synth_raw_images(int count, const SynthSpec& spec, std::uint64_t seed);

template <typename T>
Dataset<T> standardize_synth(const SynthRaw& raw, int num_classes,
                             const PixelStandardize& std_constants) {
  Dataset<T> ds;
  const std::int64_t n = static_cast<std::int64_t>(raw.labels.size());
  const std::int64_t hw = raw.image_hw;
  ds.images = Tensor<T>({n, 3, hw, hw});
  ds.labels = raw.labels;
  ds.boxes = raw.boxes;
  ds.num_classes = num_classes;
  const std::int64_t plane = hw * hw;
  for (std::int64_t i = 0; i < n * 3; ++i) {
    const double m = std_constants.mean[static_cast<std::size_t>(i % 3)];
    const double s = std_constants.stddev[static_cast<std::size_t>(i % 3)];
    const float* src = raw.pixels.data() + i * plane;
    T* dst = ds.images.data() + i * plane;
    for (std::int64_t p = 0; p < plane; ++p) {
      dst[p] = static_cast<T>((static_cast<double>(src[p]) - m) / s);
    }
  }
  return ds;
}

template <typename T>
SplitDataset<T> synth_dataset(const SynthSpec& spec, std::uint64_t seed,
                              const PixelStandardize& std_constants) {
  SplitDataset<T> out;
  out.train = standardize_synth<T>(synth_raw_images(spec.num_train, spec, mix_seed(seed, 0xd5)),
                                   spec.num_classes, std_constants);
  out.test = standardize_synth<T>(synth_raw_images(spec.num_test, spec, mix_seed(seed, 0x7e)),
                                  spec.num_classes, std_constants);
  return out;
}

// Writes images quantized to bytes in the CIFAR-10 record layout (32x32 only).
void write_cifar_format(const std::string& path, const SynthRaw& raw);

}  // namespace bnet
