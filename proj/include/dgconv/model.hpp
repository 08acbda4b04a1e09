// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dgconv/conv.hpp"
#include "dgconv/dgconv.hpp"
#include "dgconv/gates.hpp"
#include "dgconv/nn.hpp"

namespace dgconv {

enum class ConvMode { Dense, FixedGroup, DGConv };

inline const char* to_string(ConvMode m) {
  switch (m) {
    case ConvMode::Dense: return "dense";
    case ConvMode::FixedGroup: return "fixed-group";
    default: return "dgconv";
  }
}

/// Topology of a Groupable residual network. The defaults are the desk-scale
/// 3-stage model; `table1()` is the full-scale ResNeXt-50 style preset.
struct ModelConfig {
  std::vector<int> widths{16, 32, 64};  // middle (grouped) width per stage
  std::vector<int> blocks{2, 2, 2};
  int expansion = 2;
  int stem_channels = 16;
  int in_channels = 3;
  int image_size = 32;
  int classes = 10;
  ConvMode mode = ConvMode::DGConv;
  int fixed_groups = 1;

  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig table1() {
    ModelConfig c;
    c.widths = {128, 256, 512, 1024};
    c.blocks = {3, 4, 6, 3};
    c.expansion = 2;
    c.stem_channels = 64;
    c.image_size = 224;
    c.classes = 1000;
    return c;
  }

  void validate() const {
    if (widths.size() != blocks.size() || widths.empty())
      throw ConfigError("ModelConfig: widths and blocks must be same, nonzero length");
    if (mode == ConvMode::DGConv)
      for (int w : widths)
        if (!is_power_of_two(w))
          throw ConfigError("ModelConfig: dgconv width " + std::to_string(w) +
                            " is not a power of two");
    if (mode == ConvMode::FixedGroup)
      for (int w : widths)
        if (w % fixed_groups != 0)
          throw ConfigError("ModelConfig: fixed_groups must divide every width");
  }
};

/// Plain convolution, optionally with a fixed structural mask on channel
/// connectivity (used for the fixed-group mode). Masked entries never receive
/// gradient.
template <typename T>
struct MaskedConv {
  Tensor4<T> kernel, kernel_grad;
  int stride = 1, padding = 0;
  std::optional<RelationshipMatrix> mask;
  Tensor4<T> cached_input;

  MaskedConv() = default;
  MaskedConv(int k, int cin, int cout, int stride_ = 1, int padding_ = -1)
      : kernel(k, k, cin, cout),
        kernel_grad(k, k, cin, cout),
        stride(stride_),
        padding(padding_ < 0 ? k / 2 : padding_) {}

  static RelationshipMatrix block_diagonal_mask(int cin, int cout, int G) {
    if (G < 1 || cin % G || cout % G)
      throw ConfigError("block_diagonal_mask: G must divide both channel counts");
    RelationshipMatrix u;
    u.rows = cin;
    u.cols = cout;
    u.bits.assign(static_cast<std::size_t>(cin) * u.words_per_row(), 0);
    for (int i = 0; i < cin; ++i)
      for (int j = 0; j < cout; ++j)
        if (i / (cin / G) == j / (cout / G)) u.set(i, j);
    return u;
  }

  Tensor4<T> masked_kernel() const {
    if (!mask) return kernel;
    Tensor4<T> eff = kernel;
    for (int p = 0; p < kernel.h; ++p)
      for (int q = 0; q < kernel.w; ++q)
        if (!mask->get(p, q))
          for (int m = 0; m < kernel.n; ++m)
            for (int n = 0; n < kernel.c; ++n) eff(m, n, p, q) = T(0);
    return eff;
  }

  Tensor4<T> forward(const Tensor4<T>& x) {
    cached_input = x;
    return conv2d_forward(x, masked_kernel(), stride, padding);
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    ConvGrads<T> g = conv2d_backward(cached_input, masked_kernel(), dy, stride, padding);
    for (int m = 0; m < kernel.n; ++m)
      for (int n = 0; n < kernel.c; ++n)
        for (int p = 0; p < kernel.h; ++p)
          for (int q = 0; q < kernel.w; ++q)
            if (!mask || mask->get(p, q)) kernel_grad(m, n, p, q) += g.kernel(m, n, p, q);
    return g.input;
  }

  void visit_params(const ParamVisitor<T>& fn, const std::string& prefix) {
    fn(prefix + ".kernel", kernel.v, kernel_grad.v, true);
  }
};

/// ResNeXt-style bottleneck: 1x1 dense -> 3x3 (dense | fixed-group | dgconv)
/// -> 1x1 dense, batchnorm + relu after each, residual shortcut.
template <typename T>
struct Bottleneck {
  ConvMode mode = ConvMode::DGConv;
  int width = 0;

  MaskedConv<T> conv1;
  BatchNorm<T> bn1;
  ReLU<T> relu1;
  std::optional<MaskedConv<T>> conv2_plain;   // dense / fixed-group middle
  std::optional<DGConvLayer<T>> conv2_dg;     // dgconv middle
  // set by the inference compiler; takes over the forward path when present
  std::function<Tensor4<T>(const Tensor4<T>&)> conv2_compiled;
  BatchNorm<T> bn2;
  ReLU<T> relu2;
  MaskedConv<T> conv3;
  BatchNorm<T> bn3;
  std::optional<MaskedConv<T>> shortcut_conv;
  std::optional<BatchNorm<T>> shortcut_bn;
  ReLU<T> relu_out;

  Tensor4<T> cached_residual;

  Bottleneck() = default;
  Bottleneck(int cin, int w, int expansion, int stride, ConvMode mode_, int fixed_groups) {
    mode = mode_;
    width = w;
    const int cout = w * expansion;
    conv1 = MaskedConv<T>(1, cin, w, 1, 0);
    bn1.init(w);
    if (mode == ConvMode::DGConv) {
      conv2_dg.emplace(3, w, w, stride, 1);
    } else {
      conv2_plain.emplace(3, w, w, stride, 1);
      if (mode == ConvMode::FixedGroup && fixed_groups > 1)
        conv2_plain->mask = MaskedConv<T>::block_diagonal_mask(w, w, fixed_groups);
    }
    bn2.init(w);
    conv3 = MaskedConv<T>(1, w, cout, 1, 0);
    bn3.init(cout);
    if (stride != 1 || cin != cout) {
      shortcut_conv.emplace(1, cin, cout, stride, 0);
      shortcut_bn.emplace(cout);
    }
  }

  Tensor4<T> forward(const Tensor4<T>& x, bool train) {
    Tensor4<T> y = relu1.forward(bn1.forward(conv1.forward(x), train));
    if (conv2_compiled) {
      if (train) throw ConfigError("Bottleneck: compiled layers are inference-only");
      y = conv2_compiled(y);
    } else {
      y = conv2_dg ? conv2_dg->forward(y) : conv2_plain->forward(y);
    }
    y = relu2.forward(bn2.forward(y, train));
    y = bn3.forward(conv3.forward(y), train);
    Tensor4<T> res = shortcut_conv
                         ? shortcut_bn->forward(shortcut_conv->forward(x), train)
                         : x;
    require_same_shape(y, res, "Bottleneck: residual");
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += res.v[i];
    return relu_out.forward(y);
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> d = relu_out.backward(dy);
    Tensor4<T> d_res = d;  // residual branch
    Tensor4<T> dm = bn3.backward(d);
    dm = conv3.backward(dm);
    dm = bn2.backward(relu2.backward(dm));
    dm = conv2_dg ? conv2_dg->backward(dm) : conv2_plain->backward(dm);
    dm = bn1.backward(relu1.backward(dm));
    Tensor4<T> dx = conv1.backward(dm);
    if (shortcut_conv) {
      Tensor4<T> ds = shortcut_conv->backward(shortcut_bn->backward(d_res));
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += ds.v[i];
    } else {
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += d_res.v[i];
    }
    return dx;
  }

  void visit_params(const ParamVisitor<T>& fn, const std::string& prefix) {
    conv1.visit_params(fn, prefix + ".conv1");
    bn1.visit_params(fn, prefix + ".bn1");
    if (conv2_dg)
      conv2_dg->visit_params(fn, prefix + ".conv2");
    else
      conv2_plain->visit_params(fn, prefix + ".conv2");
    bn2.visit_params(fn, prefix + ".bn2");
    conv3.visit_params(fn, prefix + ".conv3");
    bn3.visit_params(fn, prefix + ".bn3");
    if (shortcut_conv) {
      shortcut_conv->visit_params(fn, prefix + ".shortcut.conv");
      shortcut_bn->visit_params(fn, prefix + ".shortcut.bn");
    }
  }
};

/// Groupable residual network: stem conv, staged bottlenecks, global average
/// pool, linear classifier.
template <typename T>
class GroupableNet {
 public:
  ModelConfig config;
  MaskedConv<T> stem;
  BatchNorm<T> stem_bn;
  ReLU<T> stem_relu;
  std::vector<std::vector<Bottleneck<T>>> stages;
  GlobalAvgPool<T> pool;
  Linear<T> fc;

  GroupableNet() = default;
  explicit GroupableNet(const ModelConfig& cfg) : config(cfg) {
    cfg.validate();
    stem = MaskedConv<T>(3, cfg.in_channels, cfg.stem_channels, 1, 1);
    stem_bn.init(cfg.stem_channels);
    int cin = cfg.stem_channels;
    for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
      std::vector<Bottleneck<T>> stage;
      for (int b = 0; b < cfg.blocks[s]; ++b) {
        const int stride = (b == 0 && s > 0) ? 2 : 1;
        stage.emplace_back(cin, cfg.widths[s], cfg.expansion, stride, cfg.mode,
                           cfg.fixed_groups);
        cin = cfg.widths[s] * cfg.expansion;
      }
      stages.push_back(std::move(stage));
    }
    fc = Linear<T>(cin, cfg.classes);
  }

  Tensor4<T> forward(const Tensor4<T>& x, bool train) {
    Tensor4<T> y = stem_relu.forward(stem_bn.forward(stem.forward(x), train));
    for (auto& stage : stages)
      for (auto& block : stage) y = block.forward(y, train);
    return fc.forward(pool.forward(y));
  }

  Tensor4<T> backward(const Tensor4<T>& dlogits) {
    Tensor4<T> d = pool.backward(fc.backward(dlogits));
    for (auto it = stages.rbegin(); it != stages.rend(); ++it)
      for (auto bit = it->rbegin(); bit != it->rend(); ++bit) d = bit->backward(d);
    return stem.backward(stem_bn.backward(stem_relu.backward(d)));
  }

  void visit_params(const ParamVisitor<T>& fn) {
    stem.visit_params(fn, "stem");
    stem_bn.visit_params(fn, "stem.bn");
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t b = 0; b < stages[s].size(); ++b)
        stages[s][b].visit_params(
            fn, "stage" + std::to_string(s) + ".block" + std::to_string(b));
    fc.visit_params(fn, "fc");
  }

  void visit_buffers(const std::function<void(const std::string&, std::vector<T>&)>& fn) {
    stem_bn.visit_buffers(fn, "stem.bn");
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t b = 0; b < stages[s].size(); ++b) {
        const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        stages[s][b].bn1.visit_buffers(fn, p + ".bn1");
        stages[s][b].bn2.visit_buffers(fn, p + ".bn2");
        stages[s][b].bn3.visit_buffers(fn, p + ".bn3");
        if (stages[s][b].shortcut_bn)
          stages[s][b].shortcut_bn->visit_buffers(fn, p + ".shortcut.bn");
      }
  }

  /// DGConv middle layers in network order (empty unless mode is dgconv).
  std::vector<DGConvLayer<T>*> dg_layers() {
    std::vector<DGConvLayer<T>*> out;
    for (auto& stage : stages)
      for (auto& block : stage)
        if (block.conv2_dg) out.push_back(&*block.conv2_dg);
    return out;
  }
  std::vector<const DGConvLayer<T>*> dg_layers() const {
    std::vector<const DGConvLayer<T>*> out;
    for (auto& stage : stages)
      for (auto& block : stage)
        if (block.conv2_dg) out.push_back(&*block.conv2_dg);
    return out;
  }

  void zero_grad() {
    visit_params([](const std::string&, std::vector<T>&, std::vector<T>& g, bool) {
      std::fill(g.begin(), g.end(), T(0));
    });
    for (auto* l : dg_layers()) {
      std::fill(l->gate_grad.task.begin(), l->gate_grad.task.end(), 0.0);
      std::fill(l->gate_grad.penalty.begin(), l->gate_grad.penalty.end(), 0.0);
    }
  }

  std::size_t param_count() {
    std::size_t n = 0;
    visit_params([&](const std::string&, std::vector<T>& v, std::vector<T>&, bool) {
      n += v.size();
    });
    for (auto* l : dg_layers()) n += l->gates.size();
    return n;
  }

  std::size_t gate_param_count() {
    std::size_t n = 0;
    for (auto* l : dg_layers()) n += l->gates.size();
    return n;
  }
};

}  // namespace dgconv
