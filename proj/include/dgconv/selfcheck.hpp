// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dgconv/compile.hpp"
#include "dgconv/complexity.hpp"
#include "dgconv/dgconv.hpp"
#include "dgconv/gates.hpp"
#include "dgconv/nn.hpp"
#include "dgconv/reference.hpp"

namespace dgconv {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace selfcheck_detail {

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
  return std::abs(got - want) / denom;
}

template <typename T>
double max_rel_err(const Tensor4<T>& a, const Tensor4<T>& b) {
  double scale = 1e-12, diff = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i)
    scale = std::max(scale, std::abs(double(a.v[i])));
  for (std::size_t i = 0; i < a.v.size(); ++i)
    diff = std::max(diff, std::abs(double(a.v[i]) - double(b.v[i])));
  return diff / scale;
}

inline std::vector<std::uint8_t> bits_of(int value, int K) {
  std::vector<std::uint8_t> g(K);
  for (int k = 0; k < K; ++k) g[k] = (value >> (K - 1 - k)) & 1;
  return g;
}

}  // namespace selfcheck_detail

/// Fast one-shot oracle suite behind the `verify` command. `corrupt` names a
/// test fixture that deliberately breaks one convention ("sign") so the
/// failure path can be exercised.
inline std::vector<CheckResult> run_selfchecks(const std::string& corrupt = "") {
  using namespace selfcheck_detail;
  std::vector<CheckResult> results;
  auto add = [&](const std::string& name, bool pass, const std::string& detail = "") {
    results.push_back({name, pass, detail});
  };
  std::mt19937_64 rng(20240817);

  // --- binarize sign convention (Eq.-of-paper sign, sign(0) = 1)
  {
    const int zero_expect = corrupt == "sign" ? 0 : 1;
    bool ok = true;
    ok &= binarize({-1e-8})[0] == 0;
    ok &= binarize({1e-8})[0] == 1;
    ok &= binarize({0.0})[0] == zero_expect;
    auto v = binarize({0.5, -0.2, 0.0});
    ok &= v == std::vector<std::uint8_t>({1, 0, std::uint8_t(zero_expect)});
    bool threw = false;
    try {
      binarize({std::nan("")});
    } catch (const ValueError&) {
      threw = true;
    }
    ok &= threw;
    add("binarize.sign_convention", ok);
  }

  // --- relationship-matrix structure, exhaustive K <= 5
  {
    bool ok = true;
    std::string detail;
    for (int K = 0; K <= 5 && ok; ++K)
      for (int v = 0; v < (1 << K) && ok; ++v) {
        const auto g = bits_of(v, K);
        const RelationshipMatrix u = build_relationship_matrix(g);
        std::uint64_t row_target = 1;
        for (auto b : g) row_target *= 1 + b;
        for (int i = 0; i < u.rows && ok; ++i) {
          if (!u.get(i, i)) ok = false;
          std::uint64_t rs = 0, cs = 0;
          for (int j = 0; j < u.cols; ++j) {
            if (u.get(i, j) != u.get(j, i)) ok = false;
            rs += u.get(i, j);
            cs += u.get(j, i);
          }
          if (rs != row_target || cs != row_target) ok = false;
        }
        if (!ok) detail = "K=" + std::to_string(K) + " g=" + std::to_string(v);
      }
    add("relationship.symmetric_unit_diagonal_row_sums", ok, detail);
  }

  // --- zeta closed form vs brute-force nonzero count, exhaustive K <= 6
  {
    bool ok = true;
    for (int K = 0; K <= 6 && ok; ++K)
      for (int v = 0; v < (1 << K) && ok; ++v) {
        const auto g = bits_of(v, K);
        ok &= layer_complexity(g, 1 << K) == nnz_oracle(build_relationship_matrix(g));
      }
    add("complexity.closed_form_equals_nnz", ok);
  }

  // --- block-diagonal permutation, exhaustive K <= 5
  {
    bool ok = true;
    for (int K = 0; K <= 5 && ok; ++K)
      for (int v = 0; v < (1 << K) && ok; ++v) {
        const auto g = bits_of(v, K);
        const RelationshipMatrix u = build_relationship_matrix(g);
        const auto perm = block_diagonal_permutation(g);
        const int C = 1 << K, G = group_count(g), per = C / G;
        for (int a = 0; a < C && ok; ++a)
          for (int b = 0; b < C; ++b) {
            const bool want = a / per == b / per;
            if (u.get(perm[a], perm[b]) != want) {
              ok = false;
              break;
            }
          }
      }
    add("permutation.block_diagonalizes", ok);
  }

  // --- fast conv vs nested-loop oracle
  {
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) {
      Tensor4<double> x(2, 3, 7, 6), k(3, 3, 3, 5);
      fill_normal(x, rng, 1.0);
      fill_normal(k, rng, 0.5);
      const int stride = 1 + trial % 2;
      worst = std::max(worst, max_rel_err(conv2d_forward(x, k, stride, 1),
                                          conv2d_forward_ref(x, k, stride, 1)));
    }
    add("conv.fast_vs_nested_loop", worst < 1e-10,
        "max rel err " + std::to_string(worst));
  }

  // --- conv adjoint identity <conv(u), v> = <u, conv_backward_input(v)>
  {
    double worst = 0;
    for (int trial = 0; trial < 5; ++trial) {
      Tensor4<double> x(2, 3, 6, 6), k(3, 3, 3, 4);
      fill_normal(x, rng, 1.0);
      fill_normal(k, rng, 0.5);
      Tensor4<double> y = conv2d_forward(x, k, 1, 1);
      Tensor4<double> v(y.n, y.c, y.h, y.w);
      fill_normal(v, rng, 1.0);
      ConvGrads<double> g = conv2d_backward(x, k, v, 1, 1);
      double lhs = 0, rhs = 0;
      for (std::size_t i = 0; i < y.v.size(); ++i) lhs += y.v[i] * v.v[i];
      for (std::size_t i = 0; i < x.v.size(); ++i) rhs += x.v[i] * g.input.v[i];
      worst = std::max(worst, rel_err(lhs, rhs));
    }
    add("conv.adjoint_identity", worst < 1e-6, "max rel err " + std::to_string(worst));
  }

  // --- conv gradients vs central finite differences
  {
    Tensor4<double> x(1, 2, 5, 5), k(3, 3, 2, 3);
    fill_normal(x, rng, 1.0);
    fill_normal(k, rng, 0.5);
    Tensor4<double> y0 = conv2d_forward(x, k, 1, 1);
    Tensor4<double> up(y0.n, y0.c, y0.h, y0.w);
    fill_normal(up, rng, 1.0);
    auto loss = [&](const Tensor4<double>& xx, const Tensor4<double>& kk) {
      Tensor4<double> y = conv2d_forward(xx, kk, 1, 1);
      double s = 0;
      for (std::size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * up.v[i];
      return s;
    };
    ConvGrads<double> g = conv2d_backward(x, k, up, 1, 1);
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t i = 0; i < x.v.size(); i += 7) {
      Tensor4<double> xp = x, xm = x;
      xp.v[i] += h;
      xm.v[i] -= h;
      worst = std::max(worst, rel_err((loss(xp, k) - loss(xm, k)) / (2 * h), g.input.v[i]));
    }
    for (std::size_t i = 0; i < k.v.size(); i += 5) {
      Tensor4<double> kp = k, km = k;
      kp.v[i] += h;
      km.v[i] -= h;
      worst = std::max(worst, rel_err((loss(x, kp) - loss(x, km)) / (2 * h), g.kernel.v[i]));
    }
    add("conv.gradients_vs_finite_differences", worst < 1e-4,
        "max rel err " + std::to_string(worst));
  }

  // --- dgconv equivalence family: masked dense == dgconv == compiled
  {
    double worst = 0;
    bool ok = true;
    for (int K = 1; K <= 4 && ok; ++K)
      for (int v = 0; v < (1 << K); ++v) {
        const int C = 1 << K;
        DGConvLayer<double> layer(3, C, C, 1, 1);
        fill_normal(layer.kernel, rng, 0.5);
        const auto g = bits_of(v, K);
        for (int k2 = 0; k2 < K; ++k2) layer.gates[k2] = g[k2] ? 0.5 : -0.5;
        Tensor4<double> x(2, C, 5, 5);
        fill_normal(x, rng, 1.0);
        Tensor4<double> a = layer.forward(x);
        Tensor4<double> b = conv2d_forward(x, layer.effective_kernel(), 1, 1);
        Tensor4<double> c = compile(layer).forward(x);
        worst = std::max({worst, max_rel_err(a, b), max_rel_err(a, c)});
      }
    add("dgconv.equivalence_family", worst < 1e-10, "max rel err " + std::to_string(worst));
  }

  // --- gate gradients vs FD of the relaxed construction
  {
    const int K = 3, C = 8;
    DGConvLayer<double> layer(3, C, C, 1, 1);
    fill_normal(layer.kernel, rng, 0.5);
    layer.gates = {0.3, -0.4, 0.2};
    Tensor4<double> x(2, C, 4, 4);
    fill_normal(x, rng, 1.0);
    Tensor4<double> y0 = layer.forward(x);
    Tensor4<double> up(y0.n, y0.c, y0.h, y0.w);
    fill_normal(up, rng, 1.0);
    layer.zero_grad();
    layer.backward(up);
    auto relaxed_loss = [&](const GateVector& gc) {
      Eigen::MatrixXd u = relaxed_relationship(gc);
      Tensor4<double> eff = layer.kernel;
      for (int m = 0; m < 3; ++m)
        for (int n = 0; n < 3; ++n)
          for (int p = 0; p < C; ++p)
            for (int q = 0; q < C; ++q) eff(m, n, p, q) *= u(p, q);
      Tensor4<double> y = conv2d_forward(x, eff, 1, 1);
      double s = 0;
      for (std::size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * up.v[i];
      return s;
    };
    GateVector g0(K);
    {
      auto gb = layer.binary_gates();
      for (int k = 0; k < K; ++k) g0[k] = gb[k];
    }
    double worst = 0;
    const double h = 1e-5;
    for (int k = 0; k < K; ++k) {
      GateVector gp = g0, gm = g0;
      gp[k] += h;
      gm[k] -= h;
      worst = std::max(worst, rel_err((relaxed_loss(gp) - relaxed_loss(gm)) / (2 * h),
                                      layer.gate_grad.task[k]));
    }
    add("dgconv.gate_gradients_vs_finite_differences", worst < 1e-3,
        "max rel err " + std::to_string(worst));
  }

  // --- penalty multiplier closed form
  {
    bool ok = true;
    for (double ratio : {1.5, 2.0, 4.0}) {
      ComplexityBudget budget;
      budget.channels = {64};
      budget.b = ratio * 64.0;  // o = 64/ratio... zeta = 64 with all-zero gates
      std::vector<LayerGates> lg{{64, std::vector<std::uint8_t>(6, 0)}};
      ComplexityState st = network_complexity(lg, budget);
      const double want = std::pow(ratio, 0.02);
      ok &= rel_err(st.multiplier, want) < 1e-12;
    }
    // satisfied budget: multiplier exactly 1
    ComplexityBudget budget;
    budget.channels = {64};
    budget.b = 1.0;
    std::vector<LayerGates> lg{{64, std::vector<std::uint8_t>(6, 0)}};
    ok &= network_complexity(lg, budget).multiplier == 1.0;
    add("penalty.multiplier_closed_form", ok);
  }

  // --- batchnorm backward vs finite differences
  {
    Tensor4<double> x(4, 8, 3, 3);
    fill_normal(x, rng, 1.0);
    Tensor4<double> up(4, 8, 3, 3);
    fill_normal(up, rng, 1.0);
    BatchNorm<double> bn(8);
    bn.forward(x, true);
    Tensor4<double> dx = bn.backward(up);
    auto loss = [&](const Tensor4<double>& xx) {
      BatchNorm<double> b2(8);
      Tensor4<double> y = b2.forward(xx, true);
      double s = 0;
      for (std::size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * up.v[i];
      return s;
    };
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t i = 0; i < x.v.size(); i += 11) {
      Tensor4<double> xp = x, xm = x;
      xp.v[i] += h;
      xm.v[i] -= h;
      worst = std::max(worst, rel_err((loss(xp) - loss(xm)) / (2 * h), dx.v[i]));
    }
    add("batchnorm.backward_vs_finite_differences", worst < 1e-4,
        "max rel err " + std::to_string(worst));
  }

  return results;
}

}  // namespace dgconv
