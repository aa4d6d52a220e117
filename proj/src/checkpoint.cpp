#include "bnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace bnet {

namespace {

constexpr char kMagic[8] = {'B', 'N', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr const char* kStepTensor = "train/step";

void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename U>
void write_le(std::ostream& os, U v) {
  // Host is little-endian on every supported target; the format is declared LE.
  write_bytes(os, &v, sizeof(U));
}

void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  }
}

template <typename U>
U read_le(std::istream& is, const char* what) {
  U v{};
  read_bytes(is, &v, sizeof(U), what);
  return v;
}

void write_tensor(std::ostream& os, const NamedTensor& t) {
  if (t.name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
  if (t.dims.size() > 0xff) throw std::invalid_argument("tensor rank too large");
  const std::int64_t expect = t.numel();
  const std::int64_t have =
      t.dtype == DType::f32 ? static_cast<std::int64_t>(t.f32.size())
                            : static_cast<std::int64_t>(t.f64.size());
  if (expect != have) {
    throw std::invalid_argument("tensor '" + t.name + "' dims do not match payload");
  }
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
  write_bytes(os, t.name.data(), t.name.size());
  write_le<std::uint8_t>(os, t.dtype == DType::f32 ? 0 : 1);
  write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) write_le<std::uint32_t>(os, d);
  if (t.dtype == DType::f32) {
    write_bytes(os, t.f32.data(), t.f32.size() * sizeof(float));
  } else {
    write_bytes(os, t.f64.data(), t.f64.size() * sizeof(double));
  }
}

NamedTensor read_tensor(std::istream& is) {
  NamedTensor t;
  const auto name_len = read_le<std::uint16_t>(is, "tensor name length");
  t.name.resize(name_len);
  if (name_len > 0) read_bytes(is, t.name.data(), name_len, "tensor name");
  const auto dtype_byte = read_le<std::uint8_t>(is, "tensor dtype");
  if (dtype_byte > 1) throw std::runtime_error("checkpoint has unknown dtype byte");
  t.dtype = dtype_byte == 0 ? DType::f32 : DType::f64;
  const auto rank = read_le<std::uint8_t>(is, "tensor rank");
  t.dims.resize(rank);
  for (auto& d : t.dims) d = read_le<std::uint32_t>(is, "tensor dims");
  const std::int64_t count = t.numel();
  if (count < 0) throw std::runtime_error("checkpoint tensor size overflow");
  if (t.dtype == DType::f32) {
    t.f32.resize(static_cast<std::size_t>(count));
    if (count > 0) read_bytes(is, t.f32.data(), t.f32.size() * sizeof(float), "tensor payload");
  } else {
    t.f64.resize(static_cast<std::size_t>(count));
    if (count > 0) read_bytes(is, t.f64.data(), t.f64.size() * sizeof(double), "tensor payload");
  }
  return t;
}

}  // namespace

NamedTensor NamedTensor::of_f32(std::string name, std::vector<std::uint32_t> dims,
                                std::vector<float> values) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = DType::f32;
  t.dims = std::move(dims);
  t.f32 = std::move(values);
  return t;
}

NamedTensor NamedTensor::of_f64(std::string name, std::vector<std::uint32_t> dims,
                                std::vector<double> values) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = DType::f64;
  t.dims = std::move(dims);
  t.f64 = std::move(values);
  return t;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint file for writing: " + path);
  write_bytes(os, kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, ckpt.version);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size() + 1));
  for (const auto& t : ckpt.tensors) write_tensor(os, t);
  write_tensor(os, NamedTensor::of_f64(kStepTensor, {1}, {static_cast<double>(ckpt.step)}));
  if (!os) throw std::runtime_error("error writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[8];
  read_bytes(is, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path);
  }
  Checkpoint ckpt;
  ckpt.version = read_le<std::uint32_t>(is, "version");
  if (ckpt.version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const auto count = read_le<std::uint32_t>(is, "tensor count");
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t = read_tensor(is);
    if (t.name == kStepTensor) {
      if (t.dtype != DType::f64 || t.f64.size() != 1) {
        throw std::runtime_error("malformed step counter tensor");
      }
      ckpt.step = static_cast<std::uint64_t>(t.f64[0]);
    } else {
      ckpt.tensors.push_back(std::move(t));
    }
  }
  return ckpt;
}

}  // namespace bnet
