// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstring>
#include <vector>

#include "dgconv/tensor.hpp"
#include "dgconv/threads.hpp"

namespace dgconv {

template <typename T>
using EMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

struct ConvDims {
  int n, cin, h, w, k, cout, oh, ow;
};

template <typename T>
inline ConvDims conv_dims(const Tensor4<T>& input, const Tensor4<T>& kernel, int stride,
                          int padding) {
  if (kernel.n != kernel.c)
    throw DimensionError("conv: kernel must be square, got " + kernel.shape_str());
  if (input.c != kernel.h)
    throw DimensionError("conv: input channels " + std::to_string(input.c) +
                         " != kernel Cin " + std::to_string(kernel.h));
  if (stride < 1) throw ConfigError("conv: stride must be positive");
  if (padding < 0) throw ConfigError("conv: padding must be non-negative");
  int k = kernel.n;
  int oh = (input.h + 2 * padding - k) / stride + 1;
  int ow = (input.w + 2 * padding - k) / stride + 1;
  if (input.h + 2 * padding < k || input.w + 2 * padding < k || oh < 1 || ow < 1)
    throw ConfigError("conv: non-positive output dims for input " + input.shape_str());
  return {input.n, input.c, input.h, input.w, k, kernel.w, oh, ow};
}

namespace detail {

// cols is (Cin*k*k) x (oh*ow), column index = oy*ow + ox,
// row index = (cin*k + m)*k + n.
template <typename T>
void im2col(const Tensor4<T>& x, int sample, const ConvDims& d, int stride, int padding,
            EMatrix<T>& cols) {
  const int P = d.oh * d.ow;
  cols.setZero(d.cin * d.k * d.k, P);
  for (int p = 0; p < d.cin; ++p) {
    const T* chan = &x(sample, p, 0, 0);
    for (int m = 0; m < d.k; ++m) {
      for (int n = 0; n < d.k; ++n) {
        const int row = (p * d.k + m) * d.k + n;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride - padding + m;
          if (iy < 0 || iy >= d.h) continue;
          T* dst = cols.data() + static_cast<std::size_t>(oy) * d.ow * cols.rows() + row;
          // column-major: element (row, oy*ow+ox) is at col*rows + row
          if (stride == 1) {
            const int ox0 = std::max(0, padding - n);
            const int ox1 = std::min(d.ow, d.w + padding - n);
            const T* src = &x(sample, p, iy, ox0 - padding + n);
            for (int ox = ox0; ox < ox1; ++ox)
              dst[static_cast<std::size_t>(ox) * cols.rows()] = src[ox - ox0];
          } else {
            for (int ox = 0; ox < d.ow; ++ox) {
              const int ix = ox * stride - padding + n;
              if (ix < 0 || ix >= d.w) continue;
              dst[static_cast<std::size_t>(ox) * cols.rows()] = x(sample, p, iy, ix);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the padded image.
template <typename T>
void col2im_add(const EMatrix<T>& cols, int sample, const ConvDims& d, int stride,
                int padding, Tensor4<T>& dx) {
  for (int p = 0; p < d.cin; ++p) {
    for (int m = 0; m < d.k; ++m) {
      for (int n = 0; n < d.k; ++n) {
        const int row = (p * d.k + m) * d.k + n;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride - padding + m;
          if (iy < 0 || iy >= d.h) continue;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * stride - padding + n;
            if (ix < 0 || ix >= d.w) continue;
            dx(sample, p, iy, ix) += cols(row, oy * d.ow + ox);
          }
        }
      }
    }
  }
}

// Kernel (k,k,Cin,Cout) flattened to (Cout) x (Cin*k*k) to match im2col rows.
template <typename T>
EMatrix<T> kernel_matrix(const Tensor4<T>& kernel) {
  const int k = kernel.n, cin = kernel.h, cout = kernel.w;
  EMatrix<T> w2(cout, cin * k * k);
  for (int m = 0; m < k; ++m)
    for (int n = 0; n < k; ++n)
      for (int p = 0; p < cin; ++p)
        for (int q = 0; q < cout; ++q) w2(q, (p * k + m) * k + n) = kernel(m, n, p, q);
  return w2;
}

template <typename T>
void kernel_matrix_to_tensor(const EMatrix<T>& w2, Tensor4<T>& kernel) {
  const int k = kernel.n, cin = kernel.h, cout = kernel.w;
  for (int m = 0; m < k; ++m)
    for (int n = 0; n < k; ++n)
      for (int p = 0; p < cin; ++p)
        for (int q = 0; q < cout; ++q) kernel(m, n, p, q) = w2(q, (p * k + m) * k + n);
}

}  // namespace detail

/// Dense convolution via im2col + GEMM. Zero padding, square kernel.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const Tensor4<T>& kernel,
                          int stride = 1, int padding = -1) {
  if (padding < 0) padding = kernel.n / 2;  // "same" for odd k, stride 1
  const ConvDims d = conv_dims(input, kernel, stride, padding);
  Tensor4<T> out(d.n, d.cout, d.oh, d.ow);
  const EMatrix<T> w2 = detail::kernel_matrix(kernel);
  const int P = d.oh * d.ow;
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (thread_count() > 1)
  for (int s = 0; s < d.n; ++s) {
    EMatrix<T> cols;
    detail::im2col(input, s, d, stride, padding, cols);
    EMatrix<T> res = (w2 * cols).transpose();  // P x Cout
    for (int q = 0; q < d.cout; ++q)
      std::memcpy(&out(s, q, 0, 0), res.col(q).data(), sizeof(T) * P);
  }
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> kernel;
};

/// Exact adjoints of conv2d_forward in (input, kernel).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& input, const Tensor4<T>& kernel,
                             const Tensor4<T>& upstream, int stride = 1,
                             int padding = -1) {
  if (padding < 0) padding = kernel.n / 2;
  const ConvDims d = conv_dims(input, kernel, stride, padding);
  if (upstream.n != d.n || upstream.c != d.cout || upstream.h != d.oh ||
      upstream.w != d.ow)
    throw DimensionError("conv2d_backward: upstream shape " + upstream.shape_str() +
                         " does not match forward output");
  ConvGrads<T> g{Tensor4<T>(d.n, d.cin, d.h, d.w), Tensor4<T>(d.k, d.k, d.cin, d.cout)};
  const EMatrix<T> w2 = detail::kernel_matrix(kernel);
  const int P = d.oh * d.ow;
  const int nthreads = thread_count();
  std::vector<EMatrix<T>> dw2_per(d.n);
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
  for (int s = 0; s < d.n; ++s) {
    EMatrix<T> cols;
    detail::im2col(input, s, d, stride, padding, cols);
    EMatrix<T> dy(d.cout, P);
    for (int q = 0; q < d.cout; ++q)
      for (int idx = 0; idx < P; ++idx) dy(q, idx) = upstream(s, q, idx / d.ow, idx % d.ow);
    dw2_per[s].noalias() = dy * cols.transpose();
    EMatrix<T> dcols = w2.transpose() * dy;
    detail::col2im_add(dcols, s, d, stride, padding, g.input);
  }
  // fixed-order reduction keeps results independent of thread count
  EMatrix<T> dw2 = EMatrix<T>::Zero(d.cout, d.cin * d.k * d.k);
  for (int s = 0; s < d.n; ++s) dw2 += dw2_per[s];
  detail::kernel_matrix_to_tensor(dw2, g.kernel);
  return g;
}

/// Partition of channels into G equal groups.
struct GroupSpec {
  int group_count = 1;
  std::vector<int> in_assignment;   // input channel -> group in [0, G)
  std::vector<int> out_assignment;  // output channel -> group in [0, G)

  static GroupSpec contiguous(int G, int cin, int cout) {
    if (G < 1 || cin % G != 0 || cout % G != 0)
      throw ConfigError("GroupSpec: G=" + std::to_string(G) + " must divide Cin=" +
                        std::to_string(cin) + " and Cout=" + std::to_string(cout));
    GroupSpec s;
    s.group_count = G;
    s.in_assignment.resize(cin);
    s.out_assignment.resize(cout);
    for (int i = 0; i < cin; ++i) s.in_assignment[i] = i / (cin / G);
    for (int i = 0; i < cout; ++i) s.out_assignment[i] = i / (cout / G);
    return s;
  }

  void validate(int cin, int cout) const {
    if (static_cast<int>(in_assignment.size()) != cin ||
        static_cast<int>(out_assignment.size()) != cout)
      throw ConfigError("GroupSpec: assignment size mismatch");
    std::vector<int> in_sz(group_count, 0), out_sz(group_count, 0);
    for (int g : in_assignment) {
      if (g < 0 || g >= group_count) throw ConfigError("GroupSpec: group index out of range");
      ++in_sz[g];
    }
    for (int g : out_assignment) {
      if (g < 0 || g >= group_count) throw ConfigError("GroupSpec: group index out of range");
      ++out_sz[g];
    }
    for (int g = 0; g < group_count; ++g)
      if (in_sz[g] != cin / group_count || out_sz[g] != cout / group_count)
        throw ConfigError("GroupSpec: groups must be equal-sized");
  }

  /// Input channel indices of group g, in channel order.
  std::vector<int> in_members(int g) const {
    std::vector<int> m;
    for (int i = 0; i < static_cast<int>(in_assignment.size()); ++i)
      if (in_assignment[i] == g) m.push_back(i);
    return m;
  }
  std::vector<int> out_members(int g) const {
    std::vector<int> m;
    for (int i = 0; i < static_cast<int>(out_assignment.size()); ++i)
      if (out_assignment[i] == g) m.push_back(i);
    return m;
  }
};

/// Group convolution with per-group kernels of shape (k,k,Cin/G,Cout/G).
/// Output channels of group g land on the channels spec assigns to g.
template <typename T>
Tensor4<T> group_conv_forward(const Tensor4<T>& input,
                              const std::vector<Tensor4<T>>& kernels,
                              const GroupSpec& spec, int stride = 1, int padding = -1) {
  if (static_cast<int>(kernels.size()) != spec.group_count)
    throw ConfigError("group_conv: kernel count != group count");
  const int G = spec.group_count;
  const int cin = static_cast<int>(spec.in_assignment.size());
  const int cout = static_cast<int>(spec.out_assignment.size());
  spec.validate(cin, cout);
  if (input.c != cin) throw DimensionError("group_conv: input channel mismatch");
  if (padding < 0) padding = kernels[0].n / 2;
  Tensor4<T> out;
  for (int g = 0; g < G; ++g) {
    const auto in_idx = spec.in_members(g);
    const auto out_idx = spec.out_members(g);
    if (kernels[g].h != static_cast<int>(in_idx.size()) ||
        kernels[g].w != static_cast<int>(out_idx.size()))
      throw DimensionError("group_conv: kernel " + std::to_string(g) + " shape mismatch");
    Tensor4<T> sub(input.n, static_cast<int>(in_idx.size()), input.h, input.w);
    for (int s = 0; s < input.n; ++s)
      for (std::size_t j = 0; j < in_idx.size(); ++j)
        std::memcpy(&sub(s, static_cast<int>(j), 0, 0), &input(s, in_idx[j], 0, 0),
                    sizeof(T) * input.h * input.w);
    Tensor4<T> sub_out = conv2d_forward(sub, kernels[g], stride, padding);
    if (out.size() == 0) out = Tensor4<T>(input.n, cout, sub_out.h, sub_out.w);
    for (int s = 0; s < input.n; ++s)
      for (std::size_t j = 0; j < out_idx.size(); ++j)
        std::memcpy(&out(s, out_idx[j], 0, 0), &sub_out(s, static_cast<int>(j), 0, 0),
                    sizeof(T) * sub_out.h * sub_out.w);
  }
  return out;
}

/// Group convolution given a full (k,k,Cin,Cout) kernel; taps outside the
/// block structure are ignored (treated as zero).
template <typename T>
Tensor4<T> group_conv_forward(const Tensor4<T>& input, const Tensor4<T>& full_kernel,
                              const GroupSpec& spec, int stride = 1, int padding = -1) {
  const int G = spec.group_count;
  std::vector<Tensor4<T>> kernels;
  kernels.reserve(G);
  for (int g = 0; g < G; ++g) {
    const auto in_idx = spec.in_members(g);
    const auto out_idx = spec.out_members(g);
    Tensor4<T> kg(full_kernel.n, full_kernel.c, static_cast<int>(in_idx.size()),
                  static_cast<int>(out_idx.size()));
    for (int m = 0; m < full_kernel.n; ++m)
      for (int nn = 0; nn < full_kernel.c; ++nn)
        for (std::size_t p = 0; p < in_idx.size(); ++p)
          for (std::size_t q = 0; q < out_idx.size(); ++q)
            kg(m, nn, static_cast<int>(p), static_cast<int>(q)) =
                full_kernel(m, nn, in_idx[p], out_idx[q]);
    kernels.push_back(std::move(kg));
  }
  return group_conv_forward(input, kernels, spec, stride, padding);
}

}  // namespace dgconv
