// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "dgconv/errors.hpp"

namespace dgconv {

/// Dense rank-4 tensor, row-major with layout (N, C, H, W): W fastest.
/// Also used for kernels with layout (k, k, Cin, Cout).
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {
    if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
      throw DimensionError("Tensor4: all dimensions must be >= 1");
  }

  std::size_t size() const { return v.size(); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator()(int i, int j, int y, int x) {
    return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
  }
  const T& operator()(int i, int j, int y, int x) const {
    return v[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
           "," + std::to_string(w) + ")";
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(T(0)); }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> r(n, c, h, w);
    for (std::size_t i = 0; i < v.size(); ++i) r.v[i] = static_cast<U>(v[i]);
    return r;
  }
};

template <typename T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* where) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(where) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
}

/// Fills with N(0, sigma^2) draws; deterministic for a given engine state.
template <typename T>
void fill_normal(Tensor4<T>& t, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (T& x : t.v) x = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Tensor4<T>& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (T& x : t.v) x = static_cast<T>(dist(rng));
}

inline bool is_power_of_two(long long x) { return x > 0 && (x & (x - 1)) == 0; }

inline int int_log2(long long x) {
  if (!is_power_of_two(x)) throw ConfigError("int_log2: " + std::to_string(x) + " is not a power of two");
  int k = 0;
  while ((1LL << k) < x) ++k;
  return k;
}

}  // namespace dgconv
