// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "dgconv/conv.hpp"
#include "dgconv/gates.hpp"
#include "dgconv/nn.hpp"
#include "dgconv/tensor.hpp"

namespace dgconv {

/// Per-gate gradient, with the task and penalty pathways kept apart so either
/// can be logged or ablated.
struct GateGradient {
  std::vector<double> task;
  std::vector<double> penalty;

  double total(int k) const { return task[k] + penalty[k]; }
};

/// Convolution whose channel connectivity is the learned Kronecker mask U:
/// forward computes conv(input, U (*) kernel), backward adds straight-through
/// gradients for the continuous gates.
template <typename T>
struct DGConvLayer {
  Tensor4<T> kernel;  // (k, k, Cin, Cout)
  Tensor4<T> kernel_grad;
  GateVector gates;  // continuous g~, length log2(min(Cin,Cout))
  GateGradient gate_grad;
  int stride = 1;
  int padding = 1;

  // cache, rebuilt only when a binarized gate flips
  mutable RelationshipMatrix cached_u;
  mutable std::vector<std::uint8_t> cached_g;
  Tensor4<T> cached_input;

  DGConvLayer() = default;
  DGConvLayer(int k, int cin, int cout, int stride_ = 1, int padding_ = -1)
      : kernel(k, k, cin, cout),
        kernel_grad(k, k, cin, cout),
        stride(stride_),
        padding(padding_ < 0 ? k / 2 : padding_) {
    if (!is_power_of_two(cin) || !is_power_of_two(cout))
      throw ConfigError("DGConvLayer: channel counts must be powers of two");
    const int K = int_log2(std::min(cin, cout));
    gates.assign(K, 0.0);
    gate_grad.task.assign(K, 0.0);
    gate_grad.penalty.assign(K, 0.0);
  }

  int cin() const { return kernel.h; }
  int cout() const { return kernel.w; }
  int ksize() const { return kernel.n; }

  const RelationshipMatrix& relationship() const {
    auto g = binarize(gates);
    if (g != cached_g || cached_u.rows == 0) {
      cached_u = build_relationship_matrix(g, cin(), cout());
      cached_g = g;
    }
    return cached_u;
  }

  std::vector<std::uint8_t> binary_gates() const { return binarize(gates); }
  int group_count() const { return dgconv::group_count(binarize(gates)); }

  /// U (*) kernel, materialized per tap.
  Tensor4<T> effective_kernel() const {
    const RelationshipMatrix& u = relationship();
    Tensor4<T> eff = kernel;
    for (int p = 0; p < cin(); ++p)
      for (int q = 0; q < cout(); ++q)
        if (!u.get(p, q))
          for (int m = 0; m < ksize(); ++m)
            for (int n = 0; n < ksize(); ++n) eff(m, n, p, q) = T(0);
    return eff;
  }

  Tensor4<T> forward(const Tensor4<T>& input) {
    cached_input = input;
    return conv2d_forward(input, effective_kernel(), stride, padding);
  }

  /// Populates kernel_grad (accumulating, exactly zero where U is zero) and
  /// gate_grad.task; returns the input gradient. The gate task gradient is
  /// the chain rule through the relaxed U at the binarized point, passed
  /// straight through sign to g~.
  Tensor4<T> backward(const Tensor4<T>& upstream) {
    ConvGrads<T> plain =
        conv2d_backward(cached_input, effective_kernel(), upstream, stride, padding);
    const RelationshipMatrix& u = relationship();
    // s(p,q) = sum_mn plain_kernel_grad * omega: the gradient w.r.t. U itself
    EMatrix<double> s = EMatrix<double>::Zero(cin(), cout());
    for (int m = 0; m < ksize(); ++m)
      for (int n = 0; n < ksize(); ++n)
        for (int p = 0; p < cin(); ++p)
          for (int q = 0; q < cout(); ++q)
            s(p, q) += double(plain.kernel(m, n, p, q)) * double(kernel(m, n, p, q));
    const auto g = binarize(gates);
    const int r_out = cout() > cin() ? cout() / cin() : 1;
    const int r_in = cin() > cout() ? cin() / cout() : 1;
    for (int k = 0; k < static_cast<int>(gates.size()); ++k) {
      Eigen::MatrixXd d = du_dgk(g, k);
      double acc = 0;
      for (int p = 0; p < cin(); ++p)
        for (int q = 0; q < cout(); ++q) acc += s(p, q) * d(p / r_in, q / r_out);
      gate_grad.task[k] += acc;
    }
    for (int m = 0; m < ksize(); ++m)
      for (int n = 0; n < ksize(); ++n)
        for (int p = 0; p < cin(); ++p)
          for (int q = 0; q < cout(); ++q)
            if (u.get(p, q)) kernel_grad(m, n, p, q) += plain.kernel(m, n, p, q);
    return plain.input;
  }

  void zero_grad() {
    kernel_grad.zero();
    std::fill(gate_grad.task.begin(), gate_grad.task.end(), 0.0);
    std::fill(gate_grad.penalty.begin(), gate_grad.penalty.end(), 0.0);
  }

  void visit_params(const ParamVisitor<T>& fn, const std::string& prefix) {
    fn(prefix + ".kernel", kernel.v, kernel_grad.v, true);
  }
};

}  // namespace dgconv
