#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnet/tensor.hpp"

namespace bnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// One named tensor of the checkpoint container. Exactly one of f32/f64 is
// populated, matching dtype.
struct NamedTensor {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

  static NamedTensor of_f32(std::string name, std::vector<std::uint32_t> dims,
                            std::vector<float> values);
  static NamedTensor of_f64(std::string name, std::vector<std::uint32_t> dims,
                            std::vector<double> values);
};

// Bit-exact binary container for parameters and running statistics. The
// training-step counter travels as a reserved tensor named "train/step".
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t step = 0;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bnet
