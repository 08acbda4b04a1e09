// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "dgconv/dgconv.hpp"
#include "dgconv/reference.hpp"
#include "test_util.hpp"

using namespace dgconv;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

// Masks a kernel with a real-valued relationship matrix (the relaxed U).
Tensor4<double> apply_relaxed(const Tensor4<double>& kernel, const Eigen::MatrixXd& u) {
  Tensor4<double> out = kernel;
  for (int m = 0; m < kernel.n; ++m)
    for (int n = 0; n < kernel.c; ++n)
      for (int p = 0; p < kernel.h; ++p)
        for (int q = 0; q < kernel.w; ++q) out(m, n, p, q) *= u(p, q);
  return out;
}

}  // namespace

TEST_CASE("dgconv forward limits") {
  std::mt19937_64 rng(1);
  SECTION("all gates >= 0: identical to the dense convolution") {
    DGConvLayer<double> layer(3, 8, 8);
    fill_normal(layer.kernel, rng, 0.3);
    layer.gates = {1e-8, 0.5, 2.0};
    auto x = random_tensor<double>(2, 8, 6, 6, rng);
    REQUIRE(rel_err(layer.forward(x), conv2d_forward(x, layer.kernel, 1, 1)) < 1e-12);
  }
  SECTION("all gates < 0: depthwise with diag(omega)") {
    DGConvLayer<double> layer(3, 8, 8);
    fill_normal(layer.kernel, rng, 0.3);
    layer.gates = {-1e-8, -0.5, -2.0};
    auto x = random_tensor<double>(1, 8, 6, 6, rng);
    auto y = layer.forward(x);
    auto spec = GroupSpec::contiguous(8, 8, 8);
    auto want = group_conv_forward(x, layer.kernel, spec, 1, 1);
    REQUIRE(rel_err(y, want) < 1e-12);
  }
  SECTION("g=[1,0], C=4, 1x1 kernel equals masked dense") {
    DGConvLayer<double> layer(1, 4, 4, 1, 0);
    fill_normal(layer.kernel, rng);
    layer.gates = {0.7, -0.3};
    auto masked = layer.kernel;
    const auto u = build_relationship_matrix({1, 0});
    for (int p = 0; p < 4; ++p)
      for (int q = 0; q < 4; ++q)
        if (!u.get(p, q)) masked(0, 0, p, q) = 0.0;
    auto x = random_tensor<double>(2, 4, 5, 5, rng);
    REQUIRE(rel_err(layer.forward(x), conv2d_forward_ref(x, masked, 1, 0)) < 1e-6);
  }
}

TEST_CASE("gate parameter count is log2(C)") {
  DGConvLayer<float> big(3, 1024, 1024);
  REQUIRE(big.gates.size() == 10);
  DGConvLayer<float> small(3, 16, 16);
  REQUIRE(small.gates.size() == 4);
  DGConvLayer<float> rect(3, 16, 32);
  REQUIRE(rect.gates.size() == 4);  // log2(min(Cin, Cout))
  REQUIRE_THROWS_AS(DGConvLayer<float>(3, 12, 12), ConfigError);
}

TEST_CASE("dgconv backward") {
  std::mt19937_64 rng(2);
  SECTION("zero upstream gives zero gradients everywhere") {
    DGConvLayer<double> layer(3, 8, 8);
    fill_normal(layer.kernel, rng);
    layer.gates = {0.5, -0.5, 0.5};
    auto x = random_tensor<double>(1, 8, 5, 5, rng);
    layer.forward(x);
    Tensor4<double> up(1, 8, 5, 5);
    auto dx = layer.backward(up);
    REQUIRE(testutil::max_abs(dx) == 0.0);
    REQUIRE(testutil::max_abs(layer.kernel_grad) == 0.0);
    for (double g : layer.gate_grad.task) REQUIRE(g == 0.0);
  }
  SECTION("kernel gradient is exactly zero where U is zero") {
    DGConvLayer<double> layer(3, 8, 8);
    fill_normal(layer.kernel, rng);
    layer.gates = {0.5, -0.5, -0.5};
    auto x = random_tensor<double>(2, 8, 5, 5, rng);
    layer.forward(x);
    auto up = random_tensor<double>(2, 8, 5, 5, rng);
    layer.backward(up);
    const auto& u = layer.relationship();
    for (int p = 0; p < 8; ++p)
      for (int q = 0; q < 8; ++q)
        if (!u.get(p, q))
          for (int m = 0; m < 3; ++m)
            for (int n = 0; n < 3; ++n) REQUIRE(layer.kernel_grad(m, n, p, q) == 0.0);
  }
  SECTION("input and kernel gradients match the masked-dense oracle") {
    DGConvLayer<double> layer(3, 8, 8);
    fill_normal(layer.kernel, rng, 0.4);
    layer.gates = {-0.1, 0.9, -0.3};
    auto x = random_tensor<double>(2, 8, 5, 5, rng);
    layer.forward(x);
    auto up = random_tensor<double>(2, 8, 5, 5, rng);
    auto dx = layer.backward(up);
    auto ref = conv2d_backward_ref(x, layer.effective_kernel(), up, 1, 1);
    REQUIRE(rel_err(dx, ref.input) < 1e-9);
    // dgconv masks the oracle's kernel grad where U = 0
    const auto& u = layer.relationship();
    for (int p = 0; p < 8; ++p)
      for (int q = 0; q < 8; ++q)
        for (int m = 0; m < 3; ++m)
          for (int n = 0; n < 3; ++n) {
            const double want = u.get(p, q) ? ref.kernel(m, n, p, q) : 0.0;
            REQUIRE_THAT(layer.kernel_grad(m, n, p, q),
                         Catch::Matchers::WithinAbs(want, 1e-9));
          }
  }
  SECTION("gate gradients match FD of the relaxed construction, >= 50 cases") {
    int cases = 0;
    for (int trial = 0; trial < 20 && cases < 60; ++trial) {
      const int K = 2 + int(rng() % 2);  // C in {4, 8}
      const int C = 1 << K;
      DGConvLayer<double> layer(3, C, C);
      fill_normal(layer.kernel, rng, 0.4);
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (auto& g : layer.gates) g = dist(rng);
      auto x = random_tensor<double>(1, C, 4, 4, rng);
      layer.forward(x);
      auto up = random_tensor<double>(1, C, 4, 4, rng);
      layer.zero_grad();
      layer.backward(up);
      // FD of loss(g) = <conv(x, U_relaxed(g) (*) omega), up> at the binarized point
      const auto gb = layer.binary_gates();
      GateVector g0(gb.begin(), gb.end());
      auto loss = [&](const GateVector& g) {
        auto eff = apply_relaxed(layer.kernel, relaxed_relationship(g));
        auto y = conv2d_forward(x, eff, 1, 1);
        double s = 0;
        for (std::size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * up.v[i];
        return s;
      };
      const double h = 1e-6;
      for (int k = 0; k < K; ++k) {
        auto gp = g0, gm = g0;
        gp[k] += h;
        gm[k] -= h;
        const double fd = (loss(gp) - loss(gm)) / (2 * h);
        REQUIRE(rel_err(layer.gate_grad.task[k], fd) < 1e-3);
        ++cases;
      }
    }
    REQUIRE(cases >= 50);
  }
}

TEST_CASE("effective kernel") {
  std::mt19937_64 rng(3);
  DGConvLayer<double> layer(3, 8, 8);
  fill_normal(layer.kernel, rng);
  SECTION("all-one gates return omega unchanged") {
    layer.gates = {1.0, 1.0, 1.0};
    REQUIRE(testutil::max_abs_diff(layer.effective_kernel(), layer.kernel) == 0.0);
  }
  SECTION("all-zero gates zero the off-diagonal") {
    layer.gates = {-1.0, -1.0, -1.0};
    auto eff = layer.effective_kernel();
    for (int p = 0; p < 8; ++p)
      for (int q = 0; q < 8; ++q)
        for (int m = 0; m < 3; ++m)
          for (int n = 0; n < 3; ++n) {
            if (p == q)
              REQUIRE(eff(m, n, p, q) == layer.kernel(m, n, p, q));
            else
              REQUIRE(eff(m, n, p, q) == 0.0);
          }
  }
  SECTION("per-tap nnz equals layer_complexity for every g") {
    // make every weight nonzero so the count is exactly nnz(U)
    for (auto& w : layer.kernel.v) w = std::abs(w) + 0.1;
    for (unsigned mask = 0; mask < 8; ++mask) {
      layer.gates = {mask & 1 ? 1.0 : -1.0, mask & 2 ? 1.0 : -1.0,
                     mask & 4 ? 1.0 : -1.0};
      auto eff = layer.effective_kernel();
      const auto z = layer_complexity(layer.binary_gates(), 8);
      for (int m = 0; m < 3; ++m)
        for (int n = 0; n < 3; ++n) {
          std::uint64_t nnz = 0;
          for (int p = 0; p < 8; ++p)
            for (int q = 0; q < 8; ++q)
              if (eff(m, n, p, q) != 0.0) ++nnz;
          REQUIRE(nnz == z);
        }
    }
  }
}

TEST_CASE("equivalence family across gate settings (f32 and f64)") {
  // layer forward vs masked dense reference, all gate patterns K <= 4
  std::mt19937_64 rng(4);
  for (int K = 1; K <= 4; ++K) {
    const int C = 1 << K;
    for (unsigned mask = 0; mask < (1u << K); ++mask) {
      DGConvLayer<double> layer(3, C, C);
      fill_normal(layer.kernel, rng, 0.4);
      for (int k = 0; k < K; ++k) layer.gates[k] = (mask >> k) & 1 ? 0.5 : -0.5;
      auto x = random_tensor<double>(1, C, 5, 5, rng);
      auto want = conv2d_forward_ref(x, layer.effective_kernel(), 1, 1);
      REQUIRE(rel_err(layer.forward(x), want) < 1e-10);

      DGConvLayer<float> layer32(3, C, C);
      for (std::size_t i = 0; i < layer.kernel.v.size(); ++i)
        layer32.kernel.v[i] = float(layer.kernel.v[i]);
      layer32.gates = layer.gates;
      auto x32 = x.template cast<float>();
      auto got32 = layer32.forward(x32);
      REQUIRE(rel_err(got32.template cast<double>(), want) < 1e-5);
    }
  }
}

TEST_CASE("rectangular dgconv layer forward matches the replicated mask") {
  std::mt19937_64 rng(5);
  DGConvLayer<double> layer(3, 4, 8);
  fill_normal(layer.kernel, rng, 0.4);
  layer.gates = {0.5, -0.5};
  auto x = random_tensor<double>(1, 4, 5, 5, rng);
  auto want = conv2d_forward_ref(x, layer.effective_kernel(), 1, 1);
  REQUIRE(rel_err(layer.forward(x), want) < 1e-10);
  const auto& u = layer.relationship();
  REQUIRE(u.rows == 4);
  REQUIRE(u.cols == 8);
}
