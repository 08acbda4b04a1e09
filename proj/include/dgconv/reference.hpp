// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dgconv/conv.hpp"
#include "dgconv/tensor.hpp"

namespace dgconv {

/// Nested-loop convolution, the slow oracle for conv2d_forward. No im2col,
/// no GEMM; shares nothing with the fast path beyond shape computation.
template <typename T>
Tensor4<T> conv2d_forward_ref(const Tensor4<T>& input, const Tensor4<T>& kernel,
                              int stride = 1, int padding = -1) {
  if (padding < 0) padding = kernel.n / 2;
  const ConvDims d = conv_dims(input, kernel, stride, padding);
  Tensor4<T> out(d.n, d.cout, d.oh, d.ow);
  for (int s = 0; s < d.n; ++s)
    for (int q = 0; q < d.cout; ++q)
      for (int oy = 0; oy < d.oh; ++oy)
        for (int ox = 0; ox < d.ow; ++ox) {
          double acc = 0.0;
          for (int m = 0; m < d.k; ++m)
            for (int n = 0; n < d.k; ++n) {
              const int iy = oy * stride - padding + m;
              const int ix = ox * stride - padding + n;
              if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
              for (int p = 0; p < d.cin; ++p)
                acc += static_cast<double>(input(s, p, iy, ix)) *
                       static_cast<double>(kernel(m, n, p, q));
            }
          out(s, q, oy, ox) = static_cast<T>(acc);
        }
  return out;
}

/// Nested-loop adjoints; oracle for conv2d_backward.
template <typename T>
ConvGrads<T> conv2d_backward_ref(const Tensor4<T>& input, const Tensor4<T>& kernel,
                                 const Tensor4<T>& upstream, int stride = 1,
                                 int padding = -1) {
  if (padding < 0) padding = kernel.n / 2;
  const ConvDims d = conv_dims(input, kernel, stride, padding);
  ConvGrads<T> g{Tensor4<T>(d.n, d.cin, d.h, d.w), Tensor4<T>(d.k, d.k, d.cin, d.cout)};
  for (int s = 0; s < d.n; ++s)
    for (int q = 0; q < d.cout; ++q)
      for (int oy = 0; oy < d.oh; ++oy)
        for (int ox = 0; ox < d.ow; ++ox) {
          const T u = upstream(s, q, oy, ox);
          for (int m = 0; m < d.k; ++m)
            for (int n = 0; n < d.k; ++n) {
              const int iy = oy * stride - padding + m;
              const int ix = ox * stride - padding + n;
              if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
              for (int p = 0; p < d.cin; ++p) {
                g.input(s, p, iy, ix) += u * kernel(m, n, p, q);
                g.kernel(m, n, p, q) += u * input(s, p, iy, ix);
              }
            }
        }
  return g;
}

}  // namespace dgconv
