// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "dgconv/conv.hpp"
#include "dgconv/dgconv.hpp"
#include "dgconv/gates.hpp"
#include "dgconv/model.hpp"

namespace dgconv {

/// A trained DGConv layer lowered to input permutation + standard group
/// convolution + inverse permutation. Immutable once built.
template <typename T>
struct CompiledLayer {
  std::vector<int> perm;  // perm[position] = original channel
  int group_count = 1;
  std::vector<Tensor4<T>> kernels;  // per group, (k,k,C/G,C/G)
  int stride = 1, padding = 1;
  std::uint64_t connections = 0;

  int channels() const { return static_cast<int>(perm.size()); }

  Tensor4<T> forward(const Tensor4<T>& input) const {
    const int C = channels();
    if (input.c != C) throw DimensionError("CompiledLayer: input channel mismatch");
    Tensor4<T> permuted(input.n, C, input.h, input.w);
    for (int s = 0; s < input.n; ++s)
      for (int a = 0; a < C; ++a)
        std::memcpy(&permuted(s, a, 0, 0), &input(s, perm[a], 0, 0),
                    sizeof(T) * input.h * input.w);
    GroupSpec spec = GroupSpec::contiguous(group_count, C, C);
    Tensor4<T> grouped = group_conv_forward(permuted, kernels, spec, stride, padding);
    Tensor4<T> out(grouped.n, C, grouped.h, grouped.w);
    for (int s = 0; s < grouped.n; ++s)
      for (int a = 0; a < C; ++a)
        std::memcpy(&out(s, perm[a], 0, 0), &grouped(s, a, 0, 0),
                    sizeof(T) * grouped.h * grouped.w);
    return out;
  }
};

/// Lowers a square DGConv layer. The permutation block-diagonalizes U; the
/// compact kernels are the in-block entries of the effective kernel. Entries
/// outside the blocks are zero by construction and are discarded.
template <typename T>
CompiledLayer<T> compile(const DGConvLayer<T>& layer) {
  if (layer.cin() != layer.cout())
    throw ConfigError("compile: only square DGConv layers are supported");
  const auto g = layer.binary_gates();
  CompiledLayer<T> c;
  c.perm = block_diagonal_permutation(g);
  c.group_count = dgconv::group_count(g);
  c.stride = layer.stride;
  c.padding = layer.padding;
  c.connections = layer_complexity(g, layer.cin());
  const int C = layer.cin();
  const int per = C / c.group_count;
  const int k = layer.ksize();
  for (int grp = 0; grp < c.group_count; ++grp) {
    Tensor4<T> kg(k, k, per, per);
    for (int m = 0; m < k; ++m)
      for (int n = 0; n < k; ++n)
        for (int p = 0; p < per; ++p)
          for (int q = 0; q < per; ++q)
            kg(m, n, p, q) =
                layer.kernel(m, n, c.perm[grp * per + p], c.perm[grp * per + q]);
    c.kernels.push_back(std::move(kg));
  }
  return c;
}

struct LayerSavings {
  int channels = 0;
  int group_count = 1;
  std::uint64_t connections = 0;
  std::uint64_t dense_connections = 0;
};

/// Connection counts of the grouped layers and their FLOPs ratios against the
/// dense network and a uniform-G baseline.
struct SavingsReport {
  std::vector<LayerSavings> layers;
  std::uint64_t total_connections = 0;
  std::uint64_t total_dense = 0;
  int baseline_groups = 1;

  double ratio_vs_dense() const {
    return total_dense ? double(total_connections) / double(total_dense) : 1.0;
  }
  double ratio_vs_uniform() const {
    return total_dense ? double(total_connections) * baseline_groups / double(total_dense)
                       : 1.0;
  }
};

template <typename T>
SavingsReport savings_report(const GroupableNet<T>& net, int baseline_groups = 8) {
  SavingsReport r;
  r.baseline_groups = baseline_groups;
  for (const auto* l : net.dg_layers()) {
    LayerSavings s;
    s.channels = l->cin();
    const auto g = l->binary_gates();
    s.group_count = dgconv::group_count(g);
    s.connections = layer_complexity(g, l->cin());
    s.dense_connections = std::uint64_t(l->cin()) * l->cout();
    r.layers.push_back(s);
    r.total_connections += s.connections;
    r.total_dense += s.dense_connections;
  }
  return r;
}

}  // namespace dgconv
