// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dgconv/errors.hpp"
#include "dgconv/gates.hpp"

namespace dgconv {

/// Resource budget o = sum C_l^2 / b over the grouped layers, with the
/// weighted-product penalty exponent alpha (< 0).
struct ComplexityBudget {
  double b = 32.0;
  double alpha = -0.02;
  std::vector<int> channels;  // C_l of every grouped layer

  double target() const {
    if (b <= 0) throw ConfigError("ComplexityBudget: b must be positive");
    double o = 0;
    for (int c : channels) o += double(c) * c;
    return o / b;
  }
};

/// Binarized gates of one grouped layer.
struct LayerGates {
  int channels = 0;
  std::vector<std::uint8_t> g;
};

/// Current network complexity relative to the budget. The exponent is chosen
/// from this step's zeta and held fixed within the step.
struct ComplexityState {
  std::vector<std::uint64_t> zeta_layers;
  std::uint64_t zeta = 0;
  double o = 0;
  double alpha = -0.02;
  double exponent = 0;                        // 0 when zeta <= o, else alpha
  double multiplier = 1;                      // (o/zeta)^exponent
  std::vector<std::vector<std::uint8_t>> gates;  // per layer, binarized
};

inline ComplexityState network_complexity(const std::vector<LayerGates>& layers,
                                          const ComplexityBudget& budget) {
  ComplexityState st;
  st.o = budget.target();
  st.alpha = budget.alpha;
  for (const LayerGates& l : layers) {
    st.zeta_layers.push_back(layer_complexity(l.g, l.channels));
    st.zeta += st.zeta_layers.back();
    st.gates.push_back(l.g);
  }
  if (st.zeta == 0) throw ValueError("network_complexity: zeta is zero");
  st.exponent = (double(st.zeta) <= st.o) ? 0.0 : st.alpha;
  st.multiplier = std::exp(st.exponent * (std::log(st.o) - std::log(double(st.zeta))));
  return st;
}

struct PenaltyResult {
  double total = 0;
  double d_task = 1;                             // d total / d task_loss
  std::vector<std::vector<double>> gate_grads;   // d total / d g~ per layer/gate
};

/// total = task_loss * (o/zeta)^a. Penalty gradients reach the continuous
/// gates through zeta's product form via the straight-through estimator:
/// d total / d g_k = total * (-a) * zeta_l / (zeta * (1 + g_k)).
inline PenaltyResult penalized_loss(double task_loss, const ComplexityState& st) {
  if (task_loss < 0) throw ValueError("penalized_loss: task loss must be >= 0");
  PenaltyResult r;
  r.d_task = st.multiplier;
  r.total = task_loss * st.multiplier;
  r.gate_grads.resize(st.gates.size());
  for (std::size_t l = 0; l < st.gates.size(); ++l) {
    r.gate_grads[l].assign(st.gates[l].size(), 0.0);
    if (st.exponent == 0.0) continue;
    for (std::size_t k = 0; k < st.gates[l].size(); ++k) {
      const double dzeta = double(st.zeta_layers[l]) / (1.0 + st.gates[l][k]);
      r.gate_grads[l][k] = r.total * (-st.exponent) * dzeta / double(st.zeta);
    }
  }
  return r;
}

}  // namespace dgconv
