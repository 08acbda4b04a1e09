// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgconv/complexity.hpp"
#include "dgconv/data.hpp"
#include "dgconv/model.hpp"

namespace dgconv {

/// lr = base/2 * (1 + cos(pi * step / total)).
inline double cosine_lr(long step, long total_steps, double base_lr) {
  if (step < 0 || step > total_steps)
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) +
                            " outside [0, " + std::to_string(total_steps) + "]");
  return 0.5 * base_lr * (1.0 + std::cos(M_PI * double(step) / double(total_steps)));
}

/// One SGD-with-momentum update on a flat parameter array:
/// v <- momentum*v + grad + wd*param; param <- param - lr*v.
template <typename T>
void sgd_step(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& velocity,
              double lr, double momentum, double weight_decay) {
  if (param.size() != grad.size()) throw DimensionError("sgd_step: grad size mismatch");
  if (velocity.size() != param.size()) velocity.assign(param.size(), T(0));
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = static_cast<T>(momentum * velocity[i] + grad[i] + weight_decay * param[i]);
    param[i] = static_cast<T>(param[i] - lr * velocity[i]);
  }
}

/// He fan-in initialization for kernels and the classifier, gates set to
/// +-1e-8 with equal probability. Deterministic for a given seed.
template <typename T>
void init_gates(GroupableNet<T>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto init_kernel = [&](Tensor4<T>& kern) {
    // kernels are (k,k,Cin,Cout): fan-in = k*k*Cin
    const double fan_in = double(kern.n) * kern.c * kern.h;
    fill_normal(kern, rng, std::sqrt(2.0 / fan_in));
  };
  init_kernel(net.stem.kernel);
  for (auto& stage : net.stages)
    for (auto& block : stage) {
      init_kernel(block.conv1.kernel);
      if (block.conv2_dg)
        init_kernel(block.conv2_dg->kernel);
      else
        init_kernel(block.conv2_plain->kernel);
      init_kernel(block.conv3.kernel);
      if (block.shortcut_conv) init_kernel(block.shortcut_conv->kernel);
    }
  {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / net.fc.in_features));
    for (T& w : net.fc.weight) w = static_cast<T>(dist(rng));
    std::fill(net.fc.bias.begin(), net.fc.bias.end(), T(0));
  }
  for (auto* l : net.dg_layers())
    for (double& g : l->gates) g = (rng() & 1) ? 1e-8 : -1e-8;
}

/// Per-step training record (Fig. 5 style instrumentation).
struct DynamicsRecord {
  long step = 0;
  int epoch = 0;
  double lr = 0, task_loss = 0, total_loss = 0;
  std::uint64_t zeta = 0;
  double o = 0, multiplier = 1;
  std::vector<int> group_counts;               // per DGConv layer
  std::vector<std::vector<double>> gate_values;  // g~ snapshot per layer
  double train_acc = 0;
};

struct DynamicsLog {
  std::vector<DynamicsRecord> records;

  static std::string csv_header(int num_layers) {
    std::string h = "step,epoch,lr,task_loss,total_loss,zeta,o,multiplier";
    for (int l = 0; l < num_layers; ++l) h += ",G_layer_" + std::to_string(l);
    return h + ",train_acc";
  }
  static std::string csv_row(const DynamicsRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%ld,%d,%.9g,%.9g,%.9g,%llu,%.9g,%.9g", r.step,
                  r.epoch, r.lr, r.task_loss, r.total_loss,
                  static_cast<unsigned long long>(r.zeta), r.o, r.multiplier);
    std::string row = buf;
    for (int g : r.group_counts) row += "," + std::to_string(g);
    std::snprintf(buf, sizeof buf, ",%.9g", r.train_acc);
    return row + buf;
  }
};

struct TrainConfig {
  int epochs = 20;
  int batch = 64;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
};

struct EvalResult {
  double loss = 0, accuracy = 0;
};

template <typename T>
EvalResult evaluate(GroupableNet<T>& net, const Dataset& data, const DatasetHandle& h,
                    int batch_size = 128) {
  SoftmaxXent<T> xent;
  std::mt19937_64 dummy(0);
  double loss = 0;
  long correct = 0;
  int done = 0;
  while (done < data.count()) {
    const int n = std::min(batch_size, data.count() - done);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), done);
    Batch b = make_batch(data, h, idx, dummy, /*augment=*/false);
    Tensor4<T> logits = net.forward(b.images.template cast<T>(), /*train=*/false);
    loss += xent.forward(logits, b.labels) * n;
    for (int s = 0; s < n; ++s) {
      int best = 0;
      for (int c = 1; c < logits.c; ++c)
        if (logits(s, c, 0, 0) > logits(s, best, 0, 0)) best = c;
      if (best == b.labels[s]) ++correct;
    }
    done += n;
  }
  return {loss / data.count(), double(correct) / data.count()};
}

struct TrainResult {
  DynamicsLog log;
  ComplexityState initial_state, final_state;
  double final_train_acc = 0;
};

/// Minibatch SGD on the penalized objective. Deterministic for a fixed seed
/// and thread policy. `on_step` (if set) streams each record as it is made.
template <typename T>
TrainResult train(GroupableNet<T>& net, const Dataset& trainset, const DatasetHandle& h,
                  const ComplexityBudget& budget_in, const TrainConfig& cfg,
                  const std::function<void(const DynamicsRecord&)>& on_step = nullptr) {
  if (trainset.count() == 0) throw ConfigError("train: empty dataset");
  auto dgs = net.dg_layers();
  ComplexityBudget budget = budget_in;
  budget.channels.clear();
  for (auto* l : dgs) budget.channels.push_back(l->cin());

  auto current_state = [&]() {
    std::vector<LayerGates> lg;
    for (auto* l : dgs) lg.push_back({l->cin(), l->binary_gates()});
    return network_complexity(lg, budget);
  };

  TrainResult result;
  const bool constrained = !dgs.empty();
  if (constrained) result.initial_state = current_state();

  SoftmaxXent<T> xent;
  std::mt19937_64 rng(cfg.seed);
  const long steps_per_epoch = (trainset.count() + cfg.batch - 1) / cfg.batch;
  const long total_steps = steps_per_epoch * cfg.epochs;

  // velocity buffers, keyed by visit order (stable)
  std::vector<std::vector<T>> velocity;
  std::vector<std::vector<double>> gate_velocity(dgs.size());
  for (std::size_t l = 0; l < dgs.size(); ++l)
    gate_velocity[l].assign(dgs[l]->gates.size(), 0.0);

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(trainset.count());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (long bi = 0; bi < steps_per_epoch; ++bi, ++step) {
      std::vector<int> idx(order.begin() + bi * cfg.batch,
                           order.begin() + std::min<long>((bi + 1) * cfg.batch,
                                                          trainset.count()));
      Batch b = make_batch(trainset, h, idx, rng, h.augment);

      net.zero_grad();
      Tensor4<T> logits = net.forward(b.images.template cast<T>(), /*train=*/true);
      const double task_loss = xent.forward(logits, b.labels);
      if (!std::isfinite(task_loss))
        throw DivergenceError("train: non-finite loss at step " + std::to_string(step) +
                              " (epoch " + std::to_string(epoch) + ")");
      net.backward(xent.backward());

      DynamicsRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = cosine_lr(step, total_steps, cfg.base_lr);
      rec.task_loss = task_loss;
      double mult = 1.0;
      PenaltyResult pen;
      if (constrained) {
        const ComplexityState st = current_state();
        pen = penalized_loss(task_loss, st);
        mult = pen.d_task;
        rec.zeta = st.zeta;
        rec.o = st.o;
        rec.multiplier = st.multiplier;
        rec.total_loss = pen.total;
      } else {
        rec.total_loss = task_loss;
      }
      {
        int correct = 0;
        for (int s = 0; s < logits.n; ++s) {
          int best = 0;
          for (int c = 1; c < logits.c; ++c)
            if (logits(s, c, 0, 0) > logits(s, best, 0, 0)) best = c;
          if (best == b.labels[s]) ++correct;
        }
        rec.train_acc = double(correct) / logits.n;
      }
      for (auto* l : dgs) {
        rec.group_counts.push_back(l->group_count());
        rec.gate_values.push_back(l->gates);
      }

      // optimizer step; task gradients carry the penalty multiplier
      std::size_t pi = 0;
      net.visit_params([&](const std::string&, std::vector<T>& v, std::vector<T>& g,
                           bool decay) {
        if (pi >= velocity.size()) velocity.emplace_back();
        if (mult != 1.0)
          for (T& x : g) x = static_cast<T>(x * mult);
        sgd_step(v, g, velocity[pi], rec.lr, cfg.momentum,
                 decay ? cfg.weight_decay : 0.0);
        ++pi;
      });
      for (std::size_t l = 0; l < dgs.size(); ++l) {
        auto* layer = dgs[l];
        std::vector<double> total_grad(layer->gates.size());
        for (std::size_t k = 0; k < total_grad.size(); ++k) {
          layer->gate_grad.penalty[k] = constrained ? pen.gate_grads[l][k] : 0.0;
          total_grad[k] = mult * layer->gate_grad.task[k] + layer->gate_grad.penalty[k];
        }
        // gates never receive weight decay
        sgd_step(layer->gates, total_grad, gate_velocity[l], rec.lr, cfg.momentum, 0.0);
      }

      result.log.records.push_back(rec);
      if (on_step) on_step(rec);
    }
  }
  if (constrained) result.final_state = current_state();
  if (!result.log.records.empty()) result.final_train_acc = result.log.records.back().train_acc;
  return result;
}

}  // namespace dgconv
