// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "dgconv/compile.hpp"
#include "dgconv/trainer.hpp"
#include "test_util.hpp"

using namespace dgconv;
using testutil::random_tensor;
using testutil::rel_err;

TEST_CASE("compile limits") {
  std::mt19937_64 rng(1);
  SECTION("all-one gates: one group, identity permutation, kernels unchanged") {
    DGConvLayer<float> layer(3, 8, 8);
    fill_normal(layer.kernel, rng);
    layer.gates = {1.0, 1.0, 1.0};
    auto c = compile(layer);
    REQUIRE(c.group_count == 1);
    REQUIRE(c.perm == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    REQUIRE(c.kernels.size() == 1);
    REQUIRE(testutil::max_abs_diff(c.kernels[0], layer.kernel) == 0.0);
    REQUIRE(c.connections == 64);
  }
  SECTION("g=[1,0], C=4: two groups, P=[0,2,1,3], compact 2x2-per-tap kernels") {
    DGConvLayer<float> layer(3, 4, 4);
    fill_normal(layer.kernel, rng);
    layer.gates = {0.5, -0.5};
    auto c = compile(layer);
    REQUIRE(c.group_count == 2);
    REQUIRE(c.perm == std::vector<int>{0, 2, 1, 3});
    REQUIRE(c.kernels.size() == 2);
    REQUIRE(c.kernels[0].h == 2);
    REQUIRE(c.kernels[0].w == 2);
    // compact kernels carry exactly the in-block entries of omega
    const auto u = layer.relationship();
    for (int grp = 0; grp < 2; ++grp)
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q) {
          const int op = c.perm[grp * 2 + p], oq = c.perm[grp * 2 + q];
          REQUIRE(u.get(op, oq));
          for (int m = 0; m < 3; ++m)
            for (int n = 0; n < 3; ++n)
              REQUIRE(c.kernels[grp](m, n, p, q) == layer.kernel(m, n, op, oq));
        }
  }
  SECTION("non-square layer rejected") {
    DGConvLayer<float> layer(3, 4, 8);
    REQUIRE_THROWS_AS(compile(layer), ConfigError);
  }
}

TEST_CASE("compiled forward equals dgconv forward, random cases") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 12; ++trial) {
    const int K = 2 + int(rng() % 3);  // C in {4, 8, 16}
    const int C = 1 << K;
    const int stride = (trial % 3 == 2) ? 2 : 1;
    DGConvLayer<float> layer(3, C, C, stride, 1);
    fill_normal(layer.kernel, rng, 0.4);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& g : layer.gates) g = dist(rng);
    auto c = compile(layer);
    auto x = random_tensor<float>(2, C, 8, 8, rng);
    auto want = layer.forward(x);
    auto got = c.forward(x);
    REQUIRE(rel_err(got, want) <= 1e-5);
  }
}

TEST_CASE("compiled connection count matches nnz") {
  std::mt19937_64 rng(3);
  for (unsigned mask = 0; mask < 16; ++mask) {
    DGConvLayer<float> layer(3, 16, 16);
    for (int k = 0; k < 4; ++k) layer.gates[k] = (mask >> k) & 1 ? 1.0 : -1.0;
    auto c = compile(layer);
    REQUIRE(c.connections == nnz_oracle(layer.relationship()));
    // compact kernels hold exactly `connections` channel pairs
    std::uint64_t pairs = 0;
    for (const auto& kg : c.kernels) pairs += std::uint64_t(kg.h) * kg.w;
    REQUIRE(pairs == c.connections);
  }
}

TEST_CASE("savings report") {
  ModelConfig cfg;
  cfg.blocks = {1, 1, 1};
  SECTION("all-dense gates give ratio 1.0") {
    GroupableNet<float> net(cfg);
    init_gates(net, 1);
    for (auto* l : net.dg_layers())
      for (double& g : l->gates) g = 1.0;
    REQUIRE(savings_report(net).ratio_vs_dense() == 1.0);
  }
  SECTION("all-depthwise gives 1/C per layer") {
    GroupableNet<float> net(cfg);
    init_gates(net, 1);
    for (auto* l : net.dg_layers())
      for (double& g : l->gates) g = -1.0;
    const auto r = savings_report(net);
    for (const auto& layer : r.layers) {
      REQUIRE(layer.connections == std::uint64_t(layer.channels));
      REQUIRE(layer.dense_connections ==
              std::uint64_t(layer.channels) * layer.channels);
    }
    // totals combine harmonically: sum C / sum C^2
    const double want = double(16 + 32 + 64) / double(16 * 16 + 32 * 32 + 64 * 64);
    REQUIRE_THAT(r.ratio_vs_dense(), Catch::Matchers::WithinRel(want, 1e-12));
  }
  SECTION("mixed gates cross-check against brute-force nnz") {
    GroupableNet<float> net(cfg);
    init_gates(net, 2);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto* l : net.dg_layers())
      for (double& g : l->gates) g = dist(rng);
    const auto r = savings_report(net);
    std::uint64_t want = 0;
    for (auto* l : net.dg_layers()) want += nnz_oracle(l->relationship());
    REQUIRE(r.total_connections == want);
  }
}

TEST_CASE("compiled layer inside the network is inference-only") {
  ModelConfig cfg;
  cfg.widths = {8};
  cfg.blocks = {1};
  cfg.stem_channels = 8;
  GroupableNet<float> net(cfg);
  init_gates(net, 6);
  Tensor4<float> x(1, 3, 8, 8);
  std::mt19937_64 rng(5);
  fill_normal(x, rng);
  auto before = net.forward(x, false);
  auto& block = net.stages[0][0];
  auto compiled = compile(*block.conv2_dg);
  block.conv2_compiled = [compiled](const Tensor4<float>& in) {
    return compiled.forward(in);
  };
  auto after = net.forward(x, false);
  REQUIRE(rel_err(after, before) <= 1e-5);
  REQUIRE_THROWS_AS(net.forward(x, true), ConfigError);
}
