#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bnet/norm.hpp"
#include "bnet/rng.hpp"
#include "support/oracles.hpp"

using namespace bnet;

namespace {

template <typename T>
NormState<T> random_bn(std::int64_t c, Rng& rng, double eps = 1e-5, double momentum = 0.1) {
  auto s = NormState<T>::batch_norm(c, eps, momentum);
  for (auto& g : s.gamma) g = static_cast<T>(rng.uniform(-2.0, 2.0));
  for (auto& b : s.beta) b = static_cast<T>(rng.uniform(-1.0, 1.0));
  for (auto& m : s.running_mean) m = static_cast<T>(rng.uniform(-1.0, 1.0));
  for (auto& v : s.running_var) v = static_cast<T>(rng.uniform(0.2, 2.0));
  return s;
}

template <typename T>
NormState<T> matching_bnet1(const NormState<T>& bn) {
  auto s = NormState<T>::bnet(bn.channels, 1, 1, bn.epsilon, bn.momentum);
  for (std::int64_t c = 0; c < bn.channels; ++c) {
    s.kernel.w(c, 0, 0) = bn.gamma[static_cast<std::size_t>(c)];
    s.kernel.bias[static_cast<std::size_t>(c)] = bn.beta[static_cast<std::size_t>(c)];
  }
  s.running_mean = bn.running_mean;
  s.running_var = bn.running_var;
  s.mode = bn.mode;
  return s;
}

}  // namespace

TEST_CASE("constant channel standardizes to zero and moves the running mean") {
  auto s = NormState<double>::batch_norm(1, 1e-5, 0.1);
  Tensor<double> x({2, 1, 2, 2}, 5.0);
  auto [xhat, cache] = normalize_train(x, s);
  for (double v : xhat.values()) CHECK(v == doctest::Approx(0.0));
  CHECK(s.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 5.0));
  CHECK(cache.valid);
}

TEST_CASE("two-point standardization with zero epsilon") {
  auto s = NormState<double>::batch_norm(1, 0.0, 0.1);
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  auto [xhat, cache] = normalize_train(x, s);
  CHECK(xhat.data()[0] == doctest::Approx(-1.0));
  CHECK(xhat.data()[1] == doctest::Approx(1.0));
}

TEST_CASE("post-normalization statistics land where epsilon puts them") {
  Rng rng(5);
  auto x = oracle::random_tensor<double>({3, 4, 5, 5}, rng, -2.0, 3.0);
  const double eps = 1e-3;
  auto s = NormState<double>::batch_norm(4, eps, 0.1);
  auto before = channel_moments_f64(x);
  auto [xhat, cache] = normalize_train(x, s);
  auto after = channel_moments_f64(xhat);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(std::abs(after.first[c]) <= 1e-6);
    const double want_var = before.second[c] / (before.second[c] + eps);
    CHECK(std::abs(after.second[c] - want_var) <= 1e-6);
  }
}

TEST_CASE("degenerate batches are rejected") {
  auto s = NormState<float>::batch_norm(2);
  Tensor<float> x({1, 2, 1, 1}, 1.0f);
  CHECK_THROWS_WITH_AS(normalize_train(x, s), doctest::Contains("degenerate batch"),
                       std::invalid_argument);
}

TEST_CASE("non-finite inputs surface as statistic errors") {
  auto s = NormState<double>::batch_norm(1);
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{1.0, std::nan("")});
  CHECK_THROWS_AS(normalize_train(x, s), std::runtime_error);
}

TEST_CASE("eval with unit running stats is the identity as epsilon vanishes") {
  auto s = NormState<double>::batch_norm(2, 1e-14, 0.1);
  s.mode = Mode::eval;
  Rng rng(17);
  auto x = oracle::random_tensor<double>({2, 2, 3, 3}, rng);
  auto y = normalize_eval(x, s);
  CHECK(oracle::rel_diff(y, x) <= 1e-10);
}

TEST_CASE("eval is independent of batch composition") {
  Rng rng(9);
  auto s = random_bn<float>(3, rng);
  s.mode = Mode::eval;
  auto sample = oracle::random_tensor<float>({1, 3, 4, 4}, rng);
  auto other1 = oracle::random_tensor<float>({1, 3, 4, 4}, rng);
  auto other2 = oracle::random_tensor<float>({2, 3, 4, 4}, rng);

  Tensor<float> batch1({2, 3, 4, 4});
  std::copy_n(sample.data(), sample.numel(), batch1.data());
  std::copy_n(other1.data(), other1.numel(), batch1.data() + sample.numel());
  Tensor<float> batch2({3, 3, 4, 4});
  std::copy_n(sample.data(), sample.numel(), batch2.data());
  std::copy_n(other2.data(), other2.numel(), batch2.data() + sample.numel());

  auto y1 = normalize_eval(batch1, s);
  auto y2 = normalize_eval(batch2, s);
  for (std::int64_t i = 0; i < sample.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("eval output matches train output when batch stats equal running stats") {
  Rng rng(9);
  auto x = oracle::random_tensor<double>({2, 3, 4, 4}, rng);
  auto stats = channel_moments_f64(x);
  auto s = NormState<double>::batch_norm(3, 1e-5, 0.1);
  for (std::size_t c = 0; c < 3; ++c) {
    s.running_mean[c] = stats.first[c];
    s.running_var[c] = stats.second[c];
  }
  auto strain = s;
  auto [xhat_train, cache] = normalize_train(x, strain);
  s.mode = Mode::eval;
  auto xhat_eval = normalize_eval(x, s);
  CHECK(oracle::rel_diff(xhat_eval, xhat_train) <= 1e-12);
}

TEST_CASE("eval rejects zero running variance with zero epsilon") {
  auto s = NormState<float>::batch_norm(1, 0.0, 0.1);
  s.running_var[0] = 0.0f;
  s.mode = Mode::eval;
  Tensor<float> x({1, 1, 2, 2}, 1.0f);
  CHECK_THROWS_AS(normalize_eval(x, s), std::runtime_error);
}

TEST_CASE("bnet-1 recovery equals bn recovery, outputs and gradients") {
  Rng rng(1357);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape4 shape{rng.uniform_int(2, 4), rng.uniform_int(1, 4), rng.uniform_int(1, 5),
                       rng.uniform_int(1, 5)};
    if (shape.n * shape.h * shape.w < 2) continue;
    auto x = oracle::random_tensor<double>(shape, rng);
    auto bn = random_bn<double>(shape.c, rng);
    auto bnet1 = matching_bnet1(bn);

    auto [ybn, cbn] = norm_forward(x, bn);
    auto [ybnet, cbnet] = norm_forward(x, bnet1);
    CHECK(oracle::rel_diff(ybnet, ybn) <= 1e-12);

    auto gy = oracle::random_tensor<double>(shape, rng);
    auto [gx_bn, g_bn] = norm_backward(gy, cbn, bn);
    auto [gx_bnet, g_bnet] = norm_backward(gy, cbnet, bnet1);
    CHECK(oracle::rel_diff(gx_bnet, gx_bn) <= 1e-12);
    CHECK(oracle::rel_diff(g_bnet.weights, g_bn.gamma) <= 1e-12);
    CHECK(oracle::rel_diff(g_bnet.bias, g_bn.beta) <= 1e-12);
    CHECK(oracle::rel_diff(bnet1.running_mean, bn.running_mean) <= 1e-12);
    CHECK(oracle::rel_diff(bnet1.running_var, bn.running_var) <= 1e-12);

    bn.mode = Mode::eval;
    bnet1.mode = Mode::eval;
    auto [ebn, cebn] = norm_forward(x, bn);
    auto [ebnet, cebnet] = norm_forward(x, bnet1);
    CHECK(oracle::rel_diff(ebnet, ebn) <= 1e-12);
  }
}

TEST_CASE("identity parameters recover the normalized input unchanged") {
  Rng rng(23);
  auto x = oracle::random_tensor<double>({2, 2, 3, 3}, rng);
  auto s = NormState<double>::batch_norm(2);
  auto [xhat, cache] = normalize_train(x, s);
  auto y = recover_bn(xhat, s);  // gamma = 1, beta = 0
  CHECK(oracle::rel_diff(y, xhat) == 0.0);
}

TEST_CASE("bnet-3 recovery matches the naive conv oracle") {
  Rng rng(13);
  auto x = oracle::random_tensor<double>({2, 3, 6, 6}, rng);
  auto s = NormState<double>::bnet(3, 3);
  for (auto& w : s.kernel.weights) w = rng.uniform(-1.0, 1.0);
  for (auto& b : s.kernel.bias) b = rng.uniform(-0.5, 0.5);
  auto [xhat, cache] = normalize_train(x, s);
  auto y = recover_bnet(xhat, s);
  auto want = oracle::depthwise_conv(xhat, s.kernel);
  CHECK(oracle::rel_diff(y, want) <= 1e-12);
}

TEST_CASE("recover with the wrong kind is rejected") {
  auto bn = NormState<float>::batch_norm(2);
  auto bnet = NormState<float>::bnet(2, 3);
  Tensor<float> xhat({1, 2, 2, 2});
  CHECK_THROWS_AS(recover_bnet(xhat, bn), std::invalid_argument);
  CHECK_THROWS_AS(recover_bn(xhat, bnet), std::invalid_argument);
}

TEST_CASE("norm_backward rejects stale caches and zero grads give zero") {
  Rng rng(3);
  auto x = oracle::random_tensor<double>({2, 2, 3, 3}, rng);
  auto s = NormState<double>::batch_norm(2);
  auto [y, cache] = norm_forward(x, s);
  Tensor<double> gzero(x.shape(), 0.0);
  auto [gx, grads] = norm_backward(gzero, cache, s);
  for (double v : gx.values()) CHECK(v == 0.0);
  for (double v : grads.gamma) CHECK(v == 0.0);

  NormCache<double> stale;
  CHECK_THROWS_WITH_AS(norm_backward(gzero, stale, s), doctest::Contains("stale"),
                       std::invalid_argument);
}

TEST_CASE("norm gradients match finite differences for every kind") {
  Rng rng(20240);
  const Shape4 shape{2, 4, 4, 4};
  auto make_states = [&]() {
    std::vector<NormState<double>> states;
    states.push_back(random_bn<double>(shape.c, rng));
    auto b3 = NormState<double>::bnet(shape.c, 3);
    auto b3d2 = NormState<double>::bnet(shape.c, 3, 2);
    auto b5 = NormState<double>::bnet(shape.c, 5);
    for (auto* s : {&b3, &b3d2, &b5}) {
      for (auto& w : s->kernel.weights) w = rng.uniform(-1.0, 1.0);
      for (auto& b : s->kernel.bias) b = rng.uniform(-0.5, 0.5);
    }
    states.push_back(b3);
    states.push_back(b3d2);
    states.push_back(b5);
    auto gn = NormState<double>::group_norm(shape.c, 2);
    for (auto& g : gn.gamma) g = rng.uniform(-2.0, 2.0);
    for (auto& b : gn.beta) b = rng.uniform(-1.0, 1.0);
    states.push_back(gn);
    auto gnet = NormState<double>::gnet(shape.c, 2, 3);
    for (auto& w : gnet.kernel.weights) w = rng.uniform(-1.0, 1.0);
    states.push_back(gnet);
    return states;
  };

  auto x = oracle::random_tensor<double>(shape, rng);
  auto r = oracle::random_tensor<double>(shape, rng, 0.5, 1.5);
  for (auto& s : make_states()) {
    CAPTURE(norm_kind_name(s.kind));
    const auto loss = [&]() {
      auto sc = s;
      auto [y, cache] = norm_forward(x, sc);
      double acc = 0.0;
      for (std::int64_t i = 0; i < y.numel(); ++i) acc += r.data()[i] * y.data()[i];
      return acc;
    };
    auto sc = s;
    auto [y, cache] = norm_forward(x, sc);
    auto [gx, grads] = norm_backward(r, cache, sc);
    CHECK(oracle::fd_rel_err(x.values(), gx.values(), loss) <= 1e-7);
    if (s.has_affine()) {
      CHECK(oracle::fd_rel_err(s.gamma, grads.gamma, loss) <= 1e-7);
      CHECK(oracle::fd_rel_err(s.beta, grads.beta, loss) <= 1e-7);
    } else {
      CHECK(oracle::fd_rel_err(s.kernel.weights, grads.weights, loss) <= 1e-7);
      CHECK(oracle::fd_rel_err(s.kernel.bias, grads.bias, loss) <= 1e-7);
    }
  }
}

TEST_CASE("per-channel input gradient sums vanish for bn") {
  Rng rng(31);
  auto x = oracle::random_tensor<double>({2, 3, 4, 4}, rng);
  auto s = random_bn<double>(3, rng);
  auto [y, cache] = norm_forward(x, s);
  auto gy = oracle::random_tensor<double>(x.shape(), rng);
  auto [gx, grads] = norm_backward(gy, cache, s);
  for (std::int64_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 4; ++j) sum += gx.at(n, c, i, j);
    CHECK(std::abs(sum) <= 1e-10);
  }
}

TEST_CASE("group normalize: g == c behaves per channel, g == 1 per sample") {
  Rng rng(43);
  auto x = oracle::random_tensor<double>({2, 4, 3, 3}, rng);
  SUBCASE("instance-norm behavior") {
    auto s = NormState<double>::group_norm(4, 4, 1e-6);
    auto [xhat, cache] = group_normalize(x, s);
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t c = 0; c < 4; ++c) {
        double sum = 0.0, sq = 0.0;
        for (std::int64_t i = 0; i < 3; ++i)
          for (std::int64_t j = 0; j < 3; ++j) sum += xhat.at(n, c, i, j);
        const double mean = sum / 9.0;
        for (std::int64_t i = 0; i < 3; ++i)
          for (std::int64_t j = 0; j < 3; ++j) {
            const double d = xhat.at(n, c, i, j) - mean;
            sq += d * d;
          }
        CHECK(std::abs(mean) <= 1e-6);
        CHECK(std::abs(sq / 9.0 - 1.0) <= 1e-4);
      }
  }
  SUBCASE("layer-wide behavior") {
    auto s = NormState<double>::group_norm(4, 1, 1e-6);
    auto [xhat, cache] = group_normalize(x, s);
    for (std::int64_t n = 0; n < 2; ++n) {
      double sum = 0.0;
      for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t i = 0; i < 3; ++i)
          for (std::int64_t j = 0; j < 3; ++j) sum += xhat.at(n, c, i, j);
      CHECK(std::abs(sum / 36.0) <= 1e-6);
    }
  }
  SUBCASE("indivisible groups are rejected") {
    CHECK_THROWS_AS(NormState<double>::group_norm(4, 3), std::invalid_argument);
  }
}

TEST_CASE("group stats are unit after normalization") {
  Rng rng(47);
  auto x = oracle::random_tensor<double>({2, 6, 4, 4}, rng, -3.0, 1.0);
  auto s = NormState<double>::group_norm(6, 3, 1e-7);
  auto [xhat, cache] = group_normalize(x, s);
  const std::int64_t cg = 2, plane = 16;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t g = 0; g < 3; ++g) {
      double sum = 0.0, sq = 0.0;
      for (std::int64_t cc = 0; cc < cg; ++cc)
        for (std::int64_t i = 0; i < 4; ++i)
          for (std::int64_t j = 0; j < 4; ++j) sum += xhat.at(n, g * cg + cc, i, j);
      const double mean = sum / static_cast<double>(cg * plane);
      for (std::int64_t cc = 0; cc < cg; ++cc)
        for (std::int64_t i = 0; i < 4; ++i)
          for (std::int64_t j = 0; j < 4; ++j) {
            const double d = xhat.at(n, g * cg + cc, i, j) - mean;
            sq += d * d;
          }
      CHECK(std::abs(mean) <= 1e-6);
      CHECK(std::abs(sq / static_cast<double>(cg * plane) - 1.0) <= 1e-4);
    }
}

TEST_CASE("running-stat EMA matches its closed form") {
  const double momentum = 0.25;
  auto s = NormState<double>::batch_norm(1, 1e-5, momentum);
  s.running_mean[0] = 0.8;
  s.running_var[0] = 1.7;
  const double init_mean = 0.8, init_var = 1.7;
  // Constant batches: mean 2, biased var 1 ({1,3} per channel).
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  const int T = 9;
  for (int t = 0; t < T; ++t) normalize_train(x, s);
  const double decay = std::pow(1.0 - momentum, T);
  CHECK(std::abs(s.running_mean[0] - (decay * init_mean + (1.0 - decay) * 2.0)) <= 1e-10);
  CHECK(std::abs(s.running_var[0] - (decay * init_var + (1.0 - decay) * 1.0)) <= 1e-10);
}

TEST_CASE("train-mode output is invariant to per-channel affine input changes") {
  Rng rng(51);
  auto x = oracle::random_tensor<float>({2, 3, 5, 5}, rng);
  auto s = NormState<float>::batch_norm(3, 0.0, 0.1);
  for (auto& g : s.gamma) g = static_cast<float>(rng.uniform(0.5, 2.0));
  for (auto& b : s.beta) b = static_cast<float>(rng.uniform(-1.0, 1.0));

  auto s1 = s;
  auto [y1, c1] = norm_forward(x, s1);

  Tensor<float> x2(x.shape());
  const float a[3] = {2.5f, 0.3f, 1.7f};
  const float b[3] = {-1.0f, 0.4f, 3.0f};
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t j = 0; j < 5; ++j) x2.at(n, c, i, j) = a[c] * x.at(n, c, i, j) + b[c];
  auto s2 = s;
  auto [y2, c2] = norm_forward(x2, s2);
  CHECK(oracle::rel_diff(y2, y1) <= 1e-5);
}
