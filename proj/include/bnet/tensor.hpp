#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace bnet {

enum class DType { f32, f64 };

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

struct Shape4 {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
};

inline std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

// Dense 4-D array in NCHW layout, w fastest. Values produced by library
// operations are finite; finiteness is enforced at every reduction boundary
// (statistics, losses), which any propagating NaN/Inf must eventually cross.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape4 s, T fill = T(0))
      : shape_(s), data_(static_cast<std::size_t>(check_shape(s)), fill) {}

  Tensor(Shape4 s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
    if (static_cast<std::int64_t>(data_.size()) != check_shape(s)) {
      throw std::invalid_argument("tensor data length does not match shape " + to_string(s));
    }
  }

  static constexpr DType dtype() {
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
  }

  const Shape4& shape() const { return shape_; }
  std::int64_t n() const { return shape_.n; }
  std::int64_t c() const { return shape_.c; }
  std::int64_t h() const { return shape_.h; }
  std::int64_t w() const { return shape_.w; }
  std::int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.empty(); }

  T& at(std::int64_t n, std::int64_t c, std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + i) * shape_.w + j)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + i) * shape_.w + j)];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  void release() {
    data_.clear();
    data_.shrink_to_fit();
    shape_ = Shape4{};
  }

 private:
  static std::int64_t check_shape(const Shape4& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw std::invalid_argument("negative tensor dimension");
    }
    return s.numel();
  }

  Shape4 shape_{};
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

inline void require_same_shape(const Shape4& a, const Shape4& b, const char* op) {
  if (!(a == b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a) +
                                " vs " + to_string(b));
  }
}

}  // namespace detail

// ---- elementwise maps -------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  return out;
}

// 1 where x > 0, else 0.
template <typename T>
Tensor<T> relu_grad(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? T(1) : T(0);
  return out;
}

// ---- reductions --------------------------------------------------------

template <typename T>
struct ChannelStats {
  std::vector<T> mean;
  std::vector<T> var;  // biased (divide by count)
};

// Per-channel mean and biased variance over (n, h, w). Accumulation runs in
// f64 in fixed index order (n, then h, then w), so results are deterministic
// per dtype. Two-pass.
template <typename T>
std::pair<std::vector<double>, std::vector<double>> channel_moments_f64(const Tensor<T>& x) {
  if (x.numel() == 0) throw std::invalid_argument("empty reduction");
  const std::int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const std::int64_t plane = H * W;
  const double count = static_cast<double>(N * plane);
  std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
  std::vector<double> var(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const T* p = x.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) sum += static_cast<double>(p[i]);
    }
    const double m = sum / count;
    double sq = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const T* p = x.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double d = static_cast<double>(p[i]) - m;
        sq += d * d;
      }
    }
    mean[static_cast<std::size_t>(c)] = m;
    var[static_cast<std::size_t>(c)] = sq / count;
    if (!std::isfinite(m) || !std::isfinite(var[static_cast<std::size_t>(c)])) {
      throw std::runtime_error("non-finite statistics in channel reduction");
    }
  }
  return {std::move(mean), std::move(var)};
}

template <typename T>
ChannelStats<T> channel_mean_var(const Tensor<T>& x) {
  auto [mean, var] = channel_moments_f64(x);
  ChannelStats<T> out;
  out.mean.assign(mean.begin(), mean.end());
  out.var.assign(var.begin(), var.end());
  return out;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  for (const T v : x.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace bnet
