// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "dgconv/nn.hpp"
#include "test_util.hpp"

using namespace dgconv;
using testutil::random_tensor;
using testutil::rel_err;

TEST_CASE("relu clamps negatives and routes gradients") {
  Tensor4<double> x(1, 2, 1, 1);
  x(0, 0, 0, 0) = -1.0;
  x(0, 1, 0, 0) = 2.0;
  ReLU<double> relu;
  auto y = relu.forward(x);
  REQUIRE(y(0, 0, 0, 0) == 0.0);
  REQUIRE(y(0, 1, 0, 0) == 2.0);
  Tensor4<double> dy(1, 2, 1, 1);
  dy.fill(3.0);
  auto dx = relu.backward(dy);
  REQUIRE(dx(0, 0, 0, 0) == 0.0);
  REQUIRE(dx(0, 1, 0, 0) == 3.0);
}

TEST_CASE("softmax cross entropy") {
  SECTION("uniform logits give ln(num_classes)") {
    Tensor4<double> logits(3, 10, 1, 1);
    logits.fill(0.42);
    SoftmaxXent<double> loss;
    REQUIRE_THAT(loss.forward(logits, {0, 5, 9}),
                 Catch::Matchers::WithinRel(std::log(10.0), 1e-12));
  }
  SECTION("backward is (probs - onehot)/N and sums to zero per sample") {
    std::mt19937_64 rng(1);
    auto logits = random_tensor<double>(4, 6, 1, 1, rng);
    SoftmaxXent<double> loss;
    loss.forward(logits, {1, 0, 5, 3});
    auto g = loss.backward();
    for (int s = 0; s < 4; ++s) {
      double sum = 0;
      for (int c = 0; c < 6; ++c) sum += g(s, c, 0, 0);
      REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
  }
  SECTION("gradient matches finite differences") {
    std::mt19937_64 rng(2);
    auto logits = random_tensor<double>(2, 5, 1, 1, rng);
    std::vector<int> labels{3, 0};
    SoftmaxXent<double> loss;
    loss.forward(logits, labels);
    auto g = loss.backward();
    const double h = 1e-6;
    for (std::size_t i = 0; i < logits.v.size(); ++i) {
      auto lp = logits, lm = logits;
      lp.v[i] += h;
      lm.v[i] -= h;
      SoftmaxXent<double> f;
      const double fd = (f.forward(lp, labels) - f.forward(lm, labels)) / (2 * h);
      REQUIRE(rel_err(g.v[i], fd) < 1e-5);
    }
  }
  SECTION("label range checked") {
    Tensor4<double> logits(1, 3, 1, 1);
    SoftmaxXent<double> loss;
    REQUIRE_THROWS_AS(loss.forward(logits, {3}), ValueError);
  }
}

TEST_CASE("batchnorm") {
  std::mt19937_64 rng(3);
  SECTION("training output is normalized per channel") {
    auto x = random_tensor<double>(4, 3, 5, 5, rng, 2.0);
    for (auto& v : x.v) v += 1.5;
    BatchNorm<double> bn(3);
    auto y = bn.forward(x, true);
    const int m = 4 * 5 * 5;
    for (int c = 0; c < 3; ++c) {
      double sum = 0, sq = 0;
      for (int s = 0; s < 4; ++s)
        for (int i = 0; i < 5; ++i)
          for (int j = 0; j < 5; ++j) {
            sum += y(s, c, i, j);
            sq += y(s, c, i, j) * y(s, c, i, j);
          }
      REQUIRE_THAT(sum / m, Catch::Matchers::WithinAbs(0.0, 1e-10));
      REQUIRE_THAT(sq / m, Catch::Matchers::WithinAbs(1.0, 1e-2));  // eps bias
    }
  }
  SECTION("backward matches finite differences on random (4,8,3,3)") {
    auto x = random_tensor<double>(4, 8, 3, 3, rng);
    auto up = random_tensor<double>(4, 8, 3, 3, rng);
    BatchNorm<double> bn(8);
    std::uniform_real_distribution<double> dist(0.5, 1.5);
    for (auto& g : bn.gamma) g = dist(rng);
    for (auto& b : bn.beta) b = dist(rng) - 1.0;
    auto loss = [&](const Tensor4<double>& xx) {
      BatchNorm<double> probe = bn;
      auto y = probe.forward(xx, true);
      double s = 0;
      for (std::size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * up.v[i];
      return s;
    };
    bn.forward(x, true);
    auto dx = bn.backward(up);
    const double h = 1e-5;
    for (std::size_t i = 0; i < x.v.size(); i += 7) {
      auto xp = x, xm = x;
      xp.v[i] += h;
      xm.v[i] -= h;
      const double fd = (loss(xp) - loss(xm)) / (2 * h);
      REQUIRE_THAT(dx.v[i], Catch::Matchers::WithinAbs(fd, 1e-4 * std::max(1.0, std::abs(fd))));
    }
    // gamma and beta grads against FD too
    for (int c = 0; c < 8; c += 3) {
      auto bp = bn, bm = bn;
      bp.gamma_grad.assign(8, 0.0);
      bm.gamma_grad.assign(8, 0.0);
      bp.gamma[c] += h;
      bm.gamma[c] -= h;
      auto yp = bp.forward(x, true);
      auto ym = bm.forward(x, true);
      double fp = 0, fm = 0;
      for (std::size_t i = 0; i < yp.v.size(); ++i) {
        fp += yp.v[i] * up.v[i];
        fm += ym.v[i] * up.v[i];
      }
      REQUIRE(rel_err(bn.gamma_grad[c], (fp - fm) / (2 * h)) < 1e-5);
    }
  }
  SECTION("eval mode uses running statistics") {
    BatchNorm<double> bn(2);
    auto x = random_tensor<double>(8, 2, 4, 4, rng, 3.0);
    for (int it = 0; it < 200; ++it) bn.forward(x, true);
    auto y_eval = bn.forward(x, false);
    auto y_train = bn.forward(x, true);
    REQUIRE(testutil::max_abs_diff(y_eval, y_train) < 0.2);
  }
  SECTION("channel mismatch rejected") {
    BatchNorm<double> bn(3);
    Tensor4<double> x(1, 4, 2, 2);
    REQUIRE_THROWS_AS(bn.forward(x, true), DimensionError);
  }
}

TEST_CASE("global average pool") {
  Tensor4<double> x(1, 1, 2, 2);
  x(0, 0, 0, 0) = 1;
  x(0, 0, 0, 1) = 2;
  x(0, 0, 1, 0) = 3;
  x(0, 0, 1, 1) = 6;
  GlobalAvgPool<double> pool;
  auto y = pool.forward(x);
  REQUIRE(y(0, 0, 0, 0) == 3.0);
  Tensor4<double> dy(1, 1, 1, 1);
  dy(0, 0, 0, 0) = 8.0;
  auto dx = pool.backward(dy);
  for (double v : dx.v) REQUIRE(v == 2.0);
}

TEST_CASE("linear layer gradient check") {
  std::mt19937_64 rng(4);
  Linear<double> fc(6, 4);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& w : fc.weight) w = dist(rng);
  for (auto& b : fc.bias) b = dist(rng);
  auto x = random_tensor<double>(2, 6, 1, 1, rng);
  auto up = random_tensor<double>(2, 4, 1, 1, rng);
  auto y = fc.forward(x);
  auto dx = fc.backward(up);
  auto loss = [&](Linear<double> f, const Tensor4<double>& xx) {
    auto yy = f.forward(xx);
    double s = 0;
    for (std::size_t i = 0; i < yy.v.size(); ++i) s += yy.v[i] * up.v[i];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    auto xp = x, xm = x;
    xp.v[i] += h;
    xm.v[i] -= h;
    REQUIRE(rel_err(dx.v[i], (loss(fc, xp) - loss(fc, xm)) / (2 * h)) < 1e-6);
  }
  for (std::size_t i = 0; i < fc.weight.size(); i += 5) {
    auto fp = fc, fm = fc;
    fp.weight[i] += h;
    fm.weight[i] -= h;
    REQUIRE(rel_err(fc.weight_grad[i], (loss(fp, x) - loss(fm, x)) / (2 * h)) < 1e-6);
  }
  (void)y;
}
