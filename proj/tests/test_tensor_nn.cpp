#include <doctest.h>

#include <cmath>
#include <random>

#include "occlunet/nn/adam.hpp"
#include "occlunet/nn/ops.hpp"
#include "occlunet/util/errors.hpp"
#include "occlunet/util/parallel.hpp"
#include "oracles.hpp"

using namespace occlunet;
using nn::Shape;
using nn::Tensor;

namespace {

constexpr double kGradTol = 1e-4;

nn::ConvParams<double> random_conv(int out, int in, int k, std::mt19937_64& rng) {
  return {oracle::random_tensor(Shape{out, in, k, k}, rng), oracle::random_vector(out, rng)};
}

// L = <w, f(.)> for a fixed random w, so dL/d(output) = w.
double weighted(const Tensor<double>& y, const Tensor<double>& w) { return oracle::dot(y, w); }

}  // namespace

TEST_CASE("conv2d matches the direct convolution") {
  std::mt19937_64 rng(1);
  for (int k : {3, 5}) {
    for (int stride : {1, 2}) {
      const auto x = oracle::random_tensor(Shape{2, 3, 9, 8}, rng);
      const auto p = random_conv(4, 3, k, rng);
      const auto y = nn::conv2d(x, p, stride);
      const auto ref = oracle::conv2d(x, p.kernel, p.bias, stride);
      REQUIRE(y.shape() == ref.shape());
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d rejects mismatched input maps") {
  std::mt19937_64 rng(2);
  const auto x = oracle::random_tensor(Shape{1, 2, 4, 4}, rng);
  const auto p = random_conv(3, 1, 3, rng);
  CHECK_THROWS_AS(nn::conv2d(x, p, 1), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(3);
  for (int stride : {1, 2}) {
    auto x = oracle::random_tensor(Shape{2, 2, 6, 6}, rng);
    auto p = random_conv(3, 2, 3, rng);
    const auto w = oracle::random_tensor(nn::conv2d(x, p, stride).shape(), rng);
    auto f = [&] { return weighted(nn::conv2d(x, p, stride), w); };
    auto g = p.zeros_like();
    const auto dx = nn::conv2d_backward(x, p, stride, w, g);
    CHECK(oracle::max_rel_error(dx.data(), oracle::numeric_gradient(f, x.data())) < kGradTol);
    CHECK(oracle::max_rel_error(g.kernel.data(), oracle::numeric_gradient(f, p.kernel.data())) < kGradTol);
    CHECK(oracle::max_rel_error(g.bias, oracle::numeric_gradient(f, p.bias)) < kGradTol);
  }
}

TEST_CASE("transposed conv matches the scatter oracle and doubles the size") {
  std::mt19937_64 rng(4);
  for (int k : {3, 5}) {
    const auto x = oracle::random_tensor(Shape{2, 3, 4, 5}, rng);
    const nn::ConvParams<double> p{oracle::random_tensor(Shape{3, 2, k, k}, rng), oracle::random_vector(2, rng)};
    const auto y = nn::transposed_conv2d(x, p);
    CHECK(y.shape() == Shape{2, 2, 8, 10});
    const auto ref = oracle::transposed_conv2d(x, p.kernel, p.bias);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("transposed conv is the adjoint of the stride-2 conv") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = trial % 2 ? 3 : 5;
    const int h = 2 + static_cast<int>(rng() % 6), w = 2 + static_cast<int>(rng() % 6);
    const int cin = 1 + static_cast<int>(rng() % 3), cout = 1 + static_cast<int>(rng() % 3);
    // conv: (cin -> cout) on 2h x 2w; its adjoint maps cout maps at h x w back.
    nn::ConvParams<double> p{oracle::random_tensor(Shape{cout, cin, k, k}, rng), std::vector<double>(cout, 0.0)};
    nn::ConvParams<double> pt{p.kernel, std::vector<double>(cin, 0.0)};
    const auto x = oracle::random_tensor(Shape{1, cin, 2 * h, 2 * w}, rng);
    const auto y = oracle::random_tensor(Shape{1, cout, h, w}, rng);
    const double lhs = oracle::dot(nn::conv2d(x, p, 2), y);
    const double rhs = oracle::dot(x, nn::transposed_conv2d(y, pt));
    CHECK(oracle::rel_error(lhs, rhs, 1e-12) < 1e-6);
  }
}

TEST_CASE("transposed conv gradients match finite differences") {
  std::mt19937_64 rng(6);
  auto x = oracle::random_tensor(Shape{2, 3, 3, 3}, rng);
  nn::ConvParams<double> p{oracle::random_tensor(Shape{3, 2, 3, 3}, rng), oracle::random_vector(2, rng)};
  const auto w = oracle::random_tensor(Shape{2, 2, 6, 6}, rng);
  auto f = [&] { return weighted(nn::transposed_conv2d(x, p), w); };
  auto g = p.zeros_like();
  const auto dx = nn::transposed_conv2d_backward(x, p, w, g);
  CHECK(oracle::max_rel_error(dx.data(), oracle::numeric_gradient(f, x.data())) < kGradTol);
  CHECK(oracle::max_rel_error(g.kernel.data(), oracle::numeric_gradient(f, p.kernel.data())) < kGradTol);
  CHECK(oracle::max_rel_error(g.bias, oracle::numeric_gradient(f, p.bias)) < kGradTol);
}

TEST_CASE("parameter gradients accumulate into the caller's buffer") {
  std::mt19937_64 rng(7);
  const auto x = oracle::random_tensor(Shape{3, 2, 5, 5}, rng);
  const auto p = random_conv(2, 2, 3, rng);
  const auto w = oracle::random_tensor(Shape{3, 2, 5, 5}, rng);
  auto once = p.zeros_like();
  nn::conv2d_backward(x, p, 1, w, once);
  auto twice = p.zeros_like();
  nn::conv2d_backward(x, p, 1, w, twice);
  nn::conv2d_backward(x, p, 1, w, twice);
  for (std::size_t i = 0; i < once.kernel.size(); ++i) CHECK(twice.kernel[i] == doctest::Approx(2 * once.kernel[i]));
}

TEST_CASE("conv gradients are bit-identical for any worker count") {
  std::mt19937_64 rng(8);
  const auto x = oracle::random_tensor(Shape{11, 4, 8, 8}, rng).cast<float>();
  const auto p64 = random_conv(4, 4, 3, rng);
  const nn::ConvParams<float> p{p64.kernel.cast<float>(), std::vector<float>(4, 0.1f)};
  const auto w = oracle::random_tensor(Shape{11, 4, 8, 8}, rng).cast<float>();
  util::set_num_threads(1);
  auto g1 = p.zeros_like();
  const auto dx1 = nn::conv2d_backward(x, p, 1, w, g1);
  util::set_num_threads(3);
  auto g3 = p.zeros_like();
  const auto dx3 = nn::conv2d_backward(x, p, 1, w, g3);
  util::set_num_threads(1);
  CHECK(std::equal(g1.kernel.data().begin(), g1.kernel.data().end(), g3.kernel.data().begin()));
  CHECK(std::equal(dx1.data().begin(), dx1.data().end(), dx3.data().begin()));
}

TEST_CASE("maxpool picks block maxima, first on ties, and routes gradients") {
  // Every placement of the maximum inside a 2x2 block.
  for (int pos = 0; pos < 4; ++pos) {
    Tensor<double> x(Shape{1, 1, 2, 2}, 0.5);
    x[pos] = 2.0;
    std::vector<std::uint32_t> arg;
    const auto y = nn::maxpool2x2(x, &arg);
    CHECK(y[0] == 2.0);
    CHECK(arg[0] == static_cast<std::uint32_t>(pos));
    const auto dx = nn::maxpool_backward(Tensor<double>(Shape{1, 1, 1, 1}, 3.0), arg, x.shape());
    for (int i = 0; i < 4; ++i) CHECK(dx[i] == (i == pos ? 3.0 : 0.0));
  }
  Tensor<double> ties(Shape{1, 1, 2, 2}, 1.0);
  std::vector<std::uint32_t> arg;
  nn::maxpool2x2(ties, &arg);
  CHECK(arg[0] == 0);

  std::mt19937_64 rng(9);
  auto x = oracle::random_tensor(Shape{2, 3, 6, 4}, rng);
  const auto y = nn::maxpool2x2(x, &arg);
  CHECK(y.shape() == Shape{2, 3, 3, 2});
  const auto w = oracle::random_tensor(y.shape(), rng);
  auto f = [&] { return weighted(nn::maxpool2x2(x), w); };
  const auto dx = nn::maxpool_backward(w, arg, x.shape());
  CHECK(oracle::max_rel_error(dx.data(), oracle::numeric_gradient(f, x.data())) < kGradTol);
}

TEST_CASE("global maxpool gradient") {
  std::mt19937_64 rng(10);
  auto x = oracle::random_tensor(Shape{3, 4, 5, 5}, rng);
  std::vector<std::uint32_t> arg;
  const auto y = nn::global_maxpool(x, &arg);
  CHECK(y.shape() == Shape{3, 4, 1, 1});
  const auto w = oracle::random_tensor(y.shape(), rng);
  auto f = [&] { return weighted(nn::global_maxpool(x), w); };
  const auto dx = nn::global_maxpool_backward(w, arg, x.shape());
  CHECK(oracle::max_rel_error(dx.data(), oracle::numeric_gradient(f, x.data())) < kGradTol);
}

TEST_CASE("batchnorm normalizes with batch statistics and tracks running values per step") {
  auto bn = nn::BatchNormParams<double>::create(1, 2);
  Tensor<double> x(Shape{4, 1, 1, 1}, std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(nn::batchnorm(x, bn, nn::BnMode::eval, 0), doctest::Contains("uninitialized statistics"), Error);

  const auto y = nn::batchnorm(x, bn, nn::BnMode::train, 0);
  const double sd = std::sqrt(1.25 + 1e-5);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx((i + 1 - 2.5) / sd).epsilon(1e-12));
  // First update stores the batch statistics; variance unbiased.
  CHECK(bn.running_mean[0][0] == doctest::Approx(2.5));
  CHECK(bn.running_var[0][0] == doctest::Approx(5.0 / 3.0));
  CHECK(bn.initialized[1] == 0);

  Tensor<double> x2(Shape{2, 1, 1, 1}, std::vector<double>{10, 12});
  nn::batchnorm(x2, bn, nn::BnMode::train, 0);
  CHECK(bn.running_mean[0][0] == doctest::Approx(0.99 * 2.5 + 0.01 * 11));
  CHECK(bn.running_var[0][0] == doctest::Approx(0.99 * 5.0 / 3.0 + 0.01 * 2.0));

  const auto e = nn::batchnorm(x, bn, nn::BnMode::eval, 0);
  const double m = bn.running_mean[0][0], v = bn.running_var[0][0];
  CHECK(e[0] == doctest::Approx((1 - m) / std::sqrt(v + 1e-5)));
}

TEST_CASE("batchnorm gradients in train and eval mode") {
  std::mt19937_64 rng(11);
  for (auto mode : {nn::BnMode::train, nn::BnMode::eval}) {
    auto bn = nn::BatchNormParams<double>::create(3, 1);
    bn.gamma = oracle::random_vector(3, rng, 0.5, 1.5);
    bn.beta = oracle::random_vector(3, rng);
    auto x = oracle::random_tensor(Shape{4, 3, 3, 3}, rng, -2, 2);
    if (mode == nn::BnMode::eval) nn::batchnorm(x, bn, nn::BnMode::train, 0);
    const auto w = oracle::random_tensor(x.shape(), rng);
    auto f = [&] { return weighted(nn::batchnorm(x, bn, mode, 0), w); };
    nn::BatchNormCache<double> cache;
    nn::batchnorm(x, bn, mode, 0, &cache);
    std::vector<double> gg(3, 0.0), gb(3, 0.0);
    const auto dx = nn::batchnorm_backward(w, cache, bn, std::span<double>(gg), std::span<double>(gb));
    CHECK(oracle::max_rel_error(dx.data(), oracle::numeric_gradient(f, x.data())) < kGradTol);
    CHECK(oracle::max_rel_error(gg, oracle::numeric_gradient(f, bn.gamma)) < kGradTol);
    CHECK(oracle::max_rel_error(gb, oracle::numeric_gradient(f, bn.beta)) < kGradTol);
  }
}

TEST_CASE("batchnorm needs two samples in train mode") {
  auto bn = nn::BatchNormParams<double>::create(1, 1);
  CHECK_THROWS_AS(nn::batchnorm(Tensor<double>(Shape{1, 1, 2, 2}), bn, nn::BnMode::train, 0), ShapeError);
}

TEST_CASE("relu passes gradient only for positive inputs") {
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{-1, 0, 2});
  const auto y = nn::relu(x);
  CHECK(y[0] == 0);
  CHECK(y[1] == 0);
  CHECK(y[2] == 2);
  const auto d = nn::relu_backward(x, Tensor<double>(x.shape(), 5.0));
  CHECK(d[0] == 0);
  CHECK(d[1] == 0);
  CHECK(d[2] == 5);
}

TEST_CASE("lrn hand example and window clamping") {
  // Three maps, window of 5 covers all of them for every k.
  Tensor<double> x(Shape{1, 3, 1, 1}, std::vector<double>{1, 2, 3});
  nn::LrnParams p{5, 1.0, 0.01, 0.5};
  const auto y = nn::lrn(x, p);
  const double denom = std::sqrt(1 + 0.01 * 14);
  for (int k = 0; k < 3; ++k) CHECK(y[k] == doctest::Approx((k + 1) / denom).epsilon(1e-12));

  // Seven maps, n = 3: map 0 sees {0,1}, map 3 sees {2,3,4}, map 6 sees {5,6}.
  Tensor<double> z(Shape{1, 7, 1, 1}, std::vector<double>{1, 2, 3, 4, 5, 6, 7});
  nn::LrnParams q{3, 2.0, 0.1, 0.75};
  const auto out = nn::lrn(z, q);
  CHECK(out[0] == doctest::Approx(1 * std::pow(2 + 0.1 * (1 + 4), -0.75)));
  CHECK(out[3] == doctest::Approx(4 * std::pow(2 + 0.1 * (9 + 16 + 25), -0.75)));
  CHECK(out[6] == doctest::Approx(7 * std::pow(2 + 0.1 * (36 + 49), -0.75)));
}

TEST_CASE("lrn gradients for the fast and the general exponent") {
  std::mt19937_64 rng(12);
  for (double beta : {0.5, 0.75}) {
    nn::LrnParams p{5, 1.0, 0.2, beta};
    auto x = oracle::random_tensor(Shape{2, 7, 3, 3}, rng, -2, 2);
    const auto w = oracle::random_tensor(x.shape(), rng);
    auto f = [&] { return weighted(nn::lrn(x, p), w); };
    const auto dx = nn::lrn_backward(x, p, w);
    CHECK(oracle::max_rel_error(dx.data(), oracle::numeric_gradient(f, x.data())) < kGradTol);
  }
}

TEST_CASE("fully connected and softmax gradients") {
  std::mt19937_64 rng(13);
  auto x = oracle::random_tensor(Shape{3, 5, 1, 1}, rng);
  nn::DenseParams<double> d{oracle::random_tensor(Shape{4, 5, 1, 1}, rng), oracle::random_vector(4, rng)};
  const auto w = oracle::random_tensor(Shape{3, 4, 1, 1}, rng);
  auto f = [&] { return weighted(nn::softmax(nn::fully_connected(x, d)), w); };
  const auto logits = nn::fully_connected(x, d);
  const auto probs = nn::softmax(logits);
  auto g = d.zeros_like();
  const auto dlogits = nn::softmax_backward(probs, w);
  const auto dx = nn::fully_connected_backward(x, d, dlogits, g);
  CHECK(oracle::max_rel_error(dx.data(), oracle::numeric_gradient(f, x.data())) < kGradTol);
  CHECK(oracle::max_rel_error(g.weights.data(), oracle::numeric_gradient(f, d.weights.data())) < kGradTol);
  CHECK(oracle::max_rel_error(g.bias, oracle::numeric_gradient(f, d.bias)) < kGradTol);
}

TEST_CASE("softmax rows are probability vectors and shift invariant") {
  Tensor<double> z(Shape{2, 3, 1, 1}, std::vector<double>{1, 2, 3, 1001, 1002, 1003});
  const auto p = nn::softmax(z);
  for (int n = 0; n < 2; ++n) {
    double s = 0;
    for (int c = 0; c < 3; ++c) s += p.at(n, c, 0, 0);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (int c = 0; c < 3; ++c) CHECK(p.at(0, c, 0, 0) == doctest::Approx(p.at(1, c, 0, 0)).epsilon(1e-12));
}

TEST_CASE("time-summed cross-entropy") {
  const std::vector<int> labels = {3};
  const auto y = nn::one_hot<double>(labels, 10);
  const Tensor<double> uniform(Shape{1, 10, 1, 1}, 0.1);
  const std::vector<Tensor<double>> one{uniform};
  // Uniform output: -(log 0.1 + 9 log 0.9).
  const double per_step = -(std::log(0.1) + 9 * std::log(0.9));
  CHECK(nn::cross_entropy_time_loss<double>(one, y) == doctest::Approx(per_step).epsilon(1e-12));
  CHECK(per_step == doctest::Approx(3.2508).epsilon(1e-4));
  const std::vector<Tensor<double>> four(4, uniform);
  CHECK(nn::cross_entropy_time_loss<double>(four, y) == doctest::Approx(4 * per_step).epsilon(1e-12));

  // Perfect prediction: zero loss despite the log clamp.
  const std::vector<Tensor<double>> exact{y};
  CHECK(nn::cross_entropy_time_loss<double>(exact, y) == 0.0);

  Tensor<double> bad(Shape{1, 10, 1, 1}, 0.0);
  bad[0] = 0.5;
  bad[1] = 0.5;
  CHECK_THROWS_AS(nn::cross_entropy_time_loss<double>(one, bad), ValidationError);
}

TEST_CASE("cross-entropy gradient with respect to the probabilities") {
  std::mt19937_64 rng(14);
  const std::vector<int> labels = {1, 4};
  const auto y = nn::one_hot<double>(labels, 5);
  std::vector<Tensor<double>> probs{oracle::random_tensor(Shape{2, 5, 1, 1}, rng, 0.05, 0.95),
                                    oracle::random_tensor(Shape{2, 5, 1, 1}, rng, 0.05, 0.95)};
  std::vector<Tensor<double>> grads;
  nn::cross_entropy_time_loss<double>(probs, y, &grads);
  for (int t = 0; t < 2; ++t) {
    auto f = [&] { return nn::cross_entropy_time_loss<double>(probs, y); };
    CHECK(oracle::max_rel_error(grads[t].data(), oracle::numeric_gradient(f, probs[t].data())) < kGradTol);
  }
}

TEST_CASE("adam matches the scalar update rule") {
  std::vector<double> theta = {0.5, -1.0};
  nn::AdamState<double> state;
  const std::vector<std::vector<double>> grad_seq = {{0.2, -0.1}, {0.1, 0.3}, {-0.4, 0.05}};
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {0.5, -1.0};
  for (std::size_t step = 0; step < grad_seq.size(); ++step) {
    std::vector<double> g = grad_seq[step];
    nn::adam_step<double>({std::span<double>(theta)}, {std::span<const double>(g)}, state);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, step + 1));
      const double vh = v[i] / (1 - std::pow(0.999, step + 1));
      ref[i] -= 0.003 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 2; ++i) CHECK(theta[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  CHECK(state.step_count == 3);
  // First step moves every parameter by about eta regardless of scale.
  std::vector<double> p = {1.0};
  std::vector<double> g = {1e-3};
  nn::AdamState<double> fresh;
  nn::adam_step<double>({std::span<double>(p)}, {std::span<const double>(g)}, fresh);
  CHECK(p[0] == doctest::Approx(1.0 - 0.003).epsilon(1e-6));
}

TEST_CASE("adam rejects layout changes") {
  std::vector<double> a = {1, 2}, g = {0.1, 0.1}, g3 = {0.1, 0.1, 0.1};
  nn::AdamState<double> state;
  CHECK_THROWS_AS(nn::adam_step<double>({std::span<double>(a)}, {std::span<const double>(g3)}, state), ShapeError);
  nn::adam_step<double>({std::span<double>(a)}, {std::span<const double>(g)}, state);
  std::vector<double> b = {1, 2, 3};
  CHECK_THROWS_AS(nn::adam_step<double>({std::span<double>(b)}, {std::span<const double>(g3)}, state), ShapeError);
}

TEST_CASE("small hand examples") {
  SUBCASE("conv2d all-ones kernel over a padded 2x2 input") {
    Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    nn::ConvParams<double> p{Tensor<double>(Shape{1, 1, 3, 3}, 1.0), {0.0}};
    const auto y = nn::conv2d(x, p, 1);
    for (int i = 0; i < 4; ++i) CHECK(y[i] == 10.0);
    const auto ref = oracle::conv2d(x, p.kernel, p.bias, 1);
    for (int i = 0; i < 4; ++i) CHECK(ref[i] == 10.0);
  }
  SUBCASE("identity kernel") {
    std::mt19937_64 rng(20);
    const auto x = oracle::random_tensor(Shape{1, 1, 5, 5}, rng);
    nn::ConvParams<double> p{Tensor<double>(Shape{1, 1, 3, 3}, 0.0), {0.0}};
    p.kernel.at(0, 0, 1, 1) = 1.0;
    const auto y = nn::conv2d(x, p, 1);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("transposed conv of a single value") {
    Tensor<double> x(Shape{1, 1, 1, 1}, 5.0);
    nn::ConvParams<double> p{Tensor<double>(Shape{1, 1, 3, 3}, 1.0), {0.0}};
    const auto y = nn::transposed_conv2d(x, p);
    const auto ref = oracle::transposed_conv2d(x, p.kernel, p.bias);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) {
      CHECK(y[i] == ref[i]);
      CHECK(y[i] == 5.0);
    }
  }
  SUBCASE("maxpool over a ramp") {
    Tensor<double> x(Shape{1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) x[i] = i;
    const auto y = nn::maxpool2x2(x);
    CHECK(y[0] == 5);
    CHECK(y[1] == 7);
    CHECK(y[2] == 13);
    CHECK(y[3] == 15);
    CHECK_THROWS_AS(nn::maxpool2x2(Tensor<double>(Shape{1, 1, 3, 4})), ShapeError);
  }
  SUBCASE("batchnorm of two values") {
    auto bn = nn::BatchNormParams<double>::create(1, 1);
    bn.epsilon = 0.0;
    Tensor<double> x(Shape{2, 1, 1, 1}, std::vector<double>{1, 3});
    auto y = nn::batchnorm(x, bn, nn::BnMode::train, 0);
    CHECK(y[0] == doctest::Approx(-1.0));
    CHECK(y[1] == doctest::Approx(1.0));
    bn.gamma = {2.0};
    bn.beta = {1.0};
    y = nn::batchnorm(x, bn, nn::BnMode::train, 0);
    CHECK(y[0] == doctest::Approx(-1.0));
    CHECK(y[1] == doctest::Approx(3.0));
    bn.epsilon = 1e-5;
    y = nn::batchnorm(Tensor<double>(Shape{2, 1, 1, 1}, 7.0), bn, nn::BnMode::train, 0);
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 1.0);
  }
  SUBCASE("lrn of a single unit with defaults") {
    Tensor<double> x(Shape{1, 4, 1, 1}, 0.0);
    x[2] = 1.0;
    const auto y = nn::lrn(x, nn::LrnParams{});
    CHECK(y[2] == doctest::Approx(std::pow(1 + 1e-4, -0.5)).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(0.99995).epsilon(1e-6));
    nn::LrnParams none{5, 1.0, 0.0, 0.5};
    const auto z = nn::lrn(x, none);
    for (int i = 0; i < 4; ++i) CHECK(z[i] == x[i]);
  }
  SUBCASE("softmax with one boosted logit") {
    Tensor<double> z(Shape{1, 10, 1, 1}, 0.0);
    z[0] = std::log(9.0);
    const auto p = nn::softmax(z);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    for (int c = 1; c < 10; ++c) CHECK(p[c] == doctest::Approx(1.0 / 18).epsilon(1e-12));
  }
  SUBCASE("fully connected against a loop") {
    std::mt19937_64 rng(21);
    const auto x = oracle::random_tensor(Shape{2, 6, 1, 1}, rng);
    nn::DenseParams<double> d{oracle::random_tensor(Shape{10, 6, 1, 1}, rng), oracle::random_vector(10, rng)};
    const auto y = nn::fully_connected(x, d);
    for (int n = 0; n < 2; ++n) {
      for (int o = 0; o < 10; ++o) {
        double s = d.bias[o];
        for (int i = 0; i < 6; ++i) s += d.weights.at(o, i, 0, 0) * x.at(n, i, 0, 0);
        CHECK(y.at(n, o, 0, 0) == doctest::Approx(s).epsilon(1e-12));
      }
    }
    CHECK_THROWS_AS(nn::fully_connected(oracle::random_tensor(Shape{2, 5, 1, 1}, rng), d), ShapeError);
  }
}

TEST_CASE("adam on a quadratic follows the scalar reference for ten steps") {
  std::vector<double> x = {1.5};
  nn::AdamState<double> state;
  double ref = 1.5, m = 0, v = 0;
  for (int step = 1; step <= 10; ++step) {
    std::vector<double> g = {2 * x[0]};
    nn::adam_step<double>({std::span<double>(x)}, {std::span<const double>(g)}, state);
    const double gr = 2 * ref;
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    ref -= 0.003 * (m / (1 - std::pow(0.9, step))) / (std::sqrt(v / (1 - std::pow(0.999, step))) + 1e-8);
    CHECK(std::abs(x[0] - ref) < 1e-10);
  }
  std::vector<double> g0 = {0.0};
  const double before = x[0];
  nn::adam_step<double>({std::span<double>(x)}, {std::span<const double>(g0)}, state);
  CHECK(state.step_count == 11);
  CHECK(std::abs(x[0] - before) < 0.003);
}

TEST_CASE("property: batchnorm output is standardized per map") {
  std::mt19937_64 rng(22);
  auto bn = nn::BatchNormParams<double>::create(3, 1);
  const auto x = oracle::random_tensor(Shape{5, 3, 4, 4}, rng, -3, 7);
  const auto y = nn::batchnorm(x, bn, nn::BnMode::train, 0);
  for (int c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    int n = 0;
    for (int b = 0; b < 5; ++b)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          s += y.at(b, c, i, j);
          ss += y.at(b, c, i, j) * y.at(b, c, i, j);
          ++n;
        }
    const double mean = s / n;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(ss / n - mean * mean - 1.0) < 1e-3);
  }
}

TEST_CASE("property: lrn never increases magnitude and relu is idempotent") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = oracle::random_tensor(Shape{2, 6, 3, 3}, rng, -50, 50);
    nn::LrnParams p{5, 1.0 + trial * 0.1, trial * 1e-3, trial % 2 ? 0.75 : 0.5};
    const auto y = nn::lrn(x, p);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i]) <= std::abs(x[i]));
    const auto r = nn::relu(x);
    const auto rr = nn::relu(r);
    CHECK(std::equal(r.data().begin(), r.data().end(), rr.data().begin()));
  }
}

TEST_CASE("property: operators stay finite on extreme inputs") {
  std::mt19937_64 rng(24);
  const auto x = oracle::random_tensor(Shape{2, 3, 4, 4}, rng, -1e6, 1e6);
  const auto p = random_conv(3, 3, 3, rng);
  auto finite = [](const Tensor<double>& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
  };
  CHECK(finite(nn::conv2d(x, p, 1)));
  CHECK(finite(nn::conv2d(x, p, 2)));
  CHECK(finite(nn::transposed_conv2d(x, p)));
  auto bn = nn::BatchNormParams<double>::create(3, 1);
  CHECK(finite(nn::batchnorm(x, bn, nn::BnMode::train, 0)));
  CHECK(finite(nn::lrn(x, nn::LrnParams{})));
  const auto logits = nn::global_maxpool(x);
  const auto probs = nn::softmax(logits);
  CHECK(finite(probs));
  for (double v : probs.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const std::vector<int> labels = {0, 2};
  const std::vector<Tensor<double>> steps{probs};
  CHECK(std::isfinite(nn::cross_entropy_time_loss<double>(steps, nn::one_hot<double>(labels, 3))));
}
