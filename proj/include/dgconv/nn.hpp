// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dgconv/tensor.hpp"

namespace dgconv {

/// Callback used to enumerate learnable parameters. `decay` is false for
/// parameters excluded from weight decay (batchnorm affine, biases).
template <typename T>
using ParamVisitor =
    std::function<void(const std::string& name, std::vector<T>& value,
                       std::vector<T>& grad, bool decay)>;

template <typename T>
struct ReLU {
  Tensor4<T> cached_in;

  Tensor4<T> forward(const Tensor4<T>& x) {
    cached_in = x;
    Tensor4<T> y = x;
    for (T& v : y.v) v = v > T(0) ? v : T(0);
    return y;
  }
  Tensor4<T> backward(const Tensor4<T>& dy) const {
    require_same_shape(dy, cached_in, "ReLU::backward");
    Tensor4<T> dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i)
      if (cached_in.v[i] <= T(0)) dx.v[i] = T(0);
    return dx;
  }
};

/// Per-channel batch normalization with affine transform. Training uses
/// minibatch statistics; eval uses running averages (momentum 0.9).
template <typename T>
struct BatchNorm {
  int channels = 0;
  double eps = 1e-5;
  double momentum = 0.9;
  std::vector<T> gamma, beta, gamma_grad, beta_grad;
  std::vector<T> running_mean, running_var;

  // caches for backward
  Tensor4<T> cached_xhat;
  std::vector<double> cached_invstd;

  explicit BatchNorm(int c = 0) { init(c); }
  void init(int c) {
    channels = c;
    gamma.assign(c, T(1));
    beta.assign(c, T(0));
    gamma_grad.assign(c, T(0));
    beta_grad.assign(c, T(0));
    running_mean.assign(c, T(0));
    running_var.assign(c, T(1));
  }

  Tensor4<T> forward(const Tensor4<T>& x, bool train) {
    if (x.c != channels) throw DimensionError("BatchNorm: channel mismatch");
    const std::size_t m = static_cast<std::size_t>(x.n) * x.h * x.w;
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    if (train) {
      cached_xhat = Tensor4<T>(x.n, x.c, x.h, x.w);
      cached_invstd.assign(channels, 0.0);
    }
    for (int c = 0; c < channels; ++c) {
      double mean, var;
      if (train) {
        double sum = 0, sq = 0;
        for (int s = 0; s < x.n; ++s)
          for (int y0 = 0; y0 < x.h; ++y0)
            for (int x0 = 0; x0 < x.w; ++x0) {
              double v = x(s, c, y0, x0);
              sum += v;
              sq += v * v;
            }
        mean = sum / m;
        var = sq / m - mean * mean;
        if (var < 0) var = 0;
        running_mean[c] = static_cast<T>(momentum * running_mean[c] + (1 - momentum) * mean);
        running_var[c] = static_cast<T>(momentum * running_var[c] + (1 - momentum) * var);
      } else {
        mean = running_mean[c];
        var = running_var[c];
      }
      const double invstd = 1.0 / std::sqrt(var + eps);
      if (train) cached_invstd[c] = invstd;
      for (int s = 0; s < x.n; ++s)
        for (int y0 = 0; y0 < x.h; ++y0)
          for (int x0 = 0; x0 < x.w; ++x0) {
            const double xhat = (x(s, c, y0, x0) - mean) * invstd;
            if (train) cached_xhat(s, c, y0, x0) = static_cast<T>(xhat);
            y(s, c, y0, x0) = static_cast<T>(gamma[c] * xhat + beta[c]);
          }
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    require_same_shape(dy, cached_xhat, "BatchNorm::backward");
    const std::size_t m = static_cast<std::size_t>(dy.n) * dy.h * dy.w;
    Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
    for (int c = 0; c < channels; ++c) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int s = 0; s < dy.n; ++s)
        for (int y0 = 0; y0 < dy.h; ++y0)
          for (int x0 = 0; x0 < dy.w; ++x0) {
            const double g = dy(s, c, y0, x0);
            sum_dy += g;
            sum_dy_xhat += g * cached_xhat(s, c, y0, x0);
          }
      gamma_grad[c] += static_cast<T>(sum_dy_xhat);
      beta_grad[c] += static_cast<T>(sum_dy);
      const double scale = gamma[c] * cached_invstd[c];
      for (int s = 0; s < dy.n; ++s)
        for (int y0 = 0; y0 < dy.h; ++y0)
          for (int x0 = 0; x0 < dy.w; ++x0) {
            const double g = dy(s, c, y0, x0);
            const double xhat = cached_xhat(s, c, y0, x0);
            dx(s, c, y0, x0) = static_cast<T>(
                scale * (g - sum_dy / m - xhat * sum_dy_xhat / m));
          }
    }
    return dx;
  }

  void visit_params(const ParamVisitor<T>& fn, const std::string& prefix) {
    fn(prefix + ".gamma", gamma, gamma_grad, false);
    fn(prefix + ".beta", beta, beta_grad, false);
  }

  /// Non-learnable state that still belongs in checkpoints.
  void visit_buffers(const std::function<void(const std::string&, std::vector<T>&)>& fn,
                     const std::string& prefix) {
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
  }
};

/// Global average pooling (N,C,H,W) -> (N,C,1,1).
template <typename T>
struct GlobalAvgPool {
  int cached_h = 0, cached_w = 0;

  Tensor4<T> forward(const Tensor4<T>& x) {
    cached_h = x.h;
    cached_w = x.w;
    Tensor4<T> y(x.n, x.c, 1, 1);
    const double inv = 1.0 / (x.h * x.w);
    for (int s = 0; s < x.n; ++s)
      for (int c = 0; c < x.c; ++c) {
        double acc = 0;
        for (int i = 0; i < x.h; ++i)
          for (int j = 0; j < x.w; ++j) acc += x(s, c, i, j);
        y(s, c, 0, 0) = static_cast<T>(acc * inv);
      }
    return y;
  }
  Tensor4<T> backward(const Tensor4<T>& dy) const {
    Tensor4<T> dx(dy.n, dy.c, cached_h, cached_w);
    const double inv = 1.0 / (cached_h * cached_w);
    for (int s = 0; s < dy.n; ++s)
      for (int c = 0; c < dy.c; ++c) {
        const T g = static_cast<T>(dy(s, c, 0, 0) * inv);
        for (int i = 0; i < cached_h; ++i)
          for (int j = 0; j < cached_w; ++j) dx(s, c, i, j) = g;
      }
    return dx;
  }
};

/// Fully connected layer on flattened (N, C*H*W) input.
template <typename T>
struct Linear {
  int in_features = 0, out_features = 0;
  std::vector<T> weight, bias, weight_grad, bias_grad;  // weight is (out, in) row-major
  Tensor4<T> cached_in;

  Linear() = default;
  Linear(int in, int out) : in_features(in), out_features(out) {
    weight.assign(static_cast<std::size_t>(in) * out, T(0));
    bias.assign(out, T(0));
    weight_grad.assign(weight.size(), T(0));
    bias_grad.assign(out, T(0));
  }

  Tensor4<T> forward(const Tensor4<T>& x) {
    if (x.c * x.h * x.w != in_features) throw DimensionError("Linear: input size mismatch");
    cached_in = x;
    Tensor4<T> y(x.n, out_features, 1, 1);
    for (int s = 0; s < x.n; ++s) {
      const T* xs = &x.v[static_cast<std::size_t>(s) * in_features];
      for (int o = 0; o < out_features; ++o) {
        double acc = bias[o];
        const T* wr = &weight[static_cast<std::size_t>(o) * in_features];
        for (int i = 0; i < in_features; ++i) acc += double(wr[i]) * xs[i];
        y(s, o, 0, 0) = static_cast<T>(acc);
      }
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> dx(cached_in.n, cached_in.c, cached_in.h, cached_in.w);
    for (int s = 0; s < dy.n; ++s) {
      const T* xs = &cached_in.v[static_cast<std::size_t>(s) * in_features];
      T* dxs = &dx.v[static_cast<std::size_t>(s) * in_features];
      for (int o = 0; o < out_features; ++o) {
        const T g = dy(s, o, 0, 0);
        bias_grad[o] += g;
        T* wg = &weight_grad[static_cast<std::size_t>(o) * in_features];
        const T* wr = &weight[static_cast<std::size_t>(o) * in_features];
        for (int i = 0; i < in_features; ++i) {
          wg[i] += g * xs[i];
          dxs[i] += g * wr[i];
        }
      }
    }
    return dx;
  }

  void visit_params(const ParamVisitor<T>& fn, const std::string& prefix) {
    fn(prefix + ".weight", weight, weight_grad, true);
    fn(prefix + ".bias", bias, bias_grad, false);
  }
};

/// Softmax + cross entropy, mean over the batch. Logits are (N, classes, 1, 1).
template <typename T>
struct SoftmaxXent {
  Tensor4<T> cached_probs;
  std::vector<int> cached_labels;

  double forward(const Tensor4<T>& logits, const std::vector<int>& labels) {
    if (logits.h != 1 || logits.w != 1 || logits.n != static_cast<int>(labels.size()))
      throw DimensionError("SoftmaxXent: logits (N,classes,1,1) and N labels expected");
    cached_probs = Tensor4<T>(logits.n, logits.c, 1, 1);
    cached_labels = labels;
    double loss = 0;
    for (int s = 0; s < logits.n; ++s) {
      if (labels[s] < 0 || labels[s] >= logits.c)
        throw ValueError("SoftmaxXent: label out of range");
      double mx = logits(s, 0, 0, 0);
      for (int c = 1; c < logits.c; ++c) mx = std::max(mx, double(logits(s, c, 0, 0)));
      double z = 0;
      for (int c = 0; c < logits.c; ++c) z += std::exp(double(logits(s, c, 0, 0)) - mx);
      for (int c = 0; c < logits.c; ++c)
        cached_probs(s, c, 0, 0) =
            static_cast<T>(std::exp(double(logits(s, c, 0, 0)) - mx) / z);
      loss -= std::log(std::max(1e-30, double(cached_probs(s, labels[s], 0, 0))));
    }
    return loss / logits.n;
  }

  Tensor4<T> backward() const {
    Tensor4<T> dx = cached_probs;
    const T inv = static_cast<T>(1.0 / dx.n);
    for (int s = 0; s < dx.n; ++s) {
      dx(s, cached_labels[s], 0, 0) -= T(1);
      for (int c = 0; c < dx.c; ++c) dx(s, c, 0, 0) *= inv;
    }
    return dx;
  }
};

}  // namespace dgconv
