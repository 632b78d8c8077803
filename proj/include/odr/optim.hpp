#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "odr/core.hpp"

namespace odr {

enum class OptimizerKind { AdaptiveDecoupledWd, MomentumSgd };

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::AdaptiveDecoupledWd ? "adaptive_decoupled_wd" : "momentum_sgd";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adaptive_decoupled_wd") return OptimizerKind::AdaptiveDecoupledWd;
  if (s == "momentum_sgd") return OptimizerKind::MomentumSgd;
  throw ContractViolation("unknown optimizer: " + s);
}

/// First/second moment buffers aligned with a parameter list.
struct OptimState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;

  void init(const std::vector<Param>& params) {
    m.clear();
    v.clear();
    for (const Param& p : params) {
      m.push_back(Tensor::zeros_like(p.value));
      v.push_back(Tensor::zeros_like(p.value));
    }
    step = 0;
  }
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdaptiveDecoupledWd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// One update over all parameters. lrs[i] is the effective learning rate of
/// params[i]; a negative lr marks a frozen parameter (skipped entirely).
/// The adaptive optimizer applies weight decay directly to the parameters,
/// decoupled from the moment update; momentum SGD couples it into the
/// gradient before the heavy-ball step.
inline void optimizer_step(const OptimizerConfig& cfg, std::vector<Param>& params,
                           OptimState& state, const std::vector<double>& lrs) {
  if (params.size() != lrs.size() || params.size() != state.m.size())
    throw ContractViolation("optimizer_step: state/parameter size mismatch");
  state.step++;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double lr = lrs[i];
    if (lr < 0) continue;
    Param& p = params[i];
    if (cfg.kind == OptimizerKind::AdaptiveDecoupledWd) {
      double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
      double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        double g = p.grad[j];
        state.m[i][j] = cfg.beta1 * state.m[i][j] + (1.0 - cfg.beta1) * g;
        state.v[i][j] = cfg.beta2 * state.v[i][j] + (1.0 - cfg.beta2) * g * g;
        double mhat = state.m[i][j] / bc1;
        double vhat = state.v[i][j] / bc2;
        p.value[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.value[j]);
      }
    } else {
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        double g = p.grad[j] + cfg.weight_decay * p.value[j];
        state.m[i][j] = cfg.momentum * state.m[i][j] + g;
        p.value[j] -= lr * state.m[i][j];
      }
    }
  }
}

inline void zero_grads(std::vector<Param>& params) {
  for (Param& p : params) {
    if (!p.grad.same_shape(p.value)) p.grad = Tensor::zeros_like(p.value);
    else p.grad.fill(0.0);
  }
}

inline void scale_grads(std::vector<Param>& params, double s) {
  for (Param& p : params) p.grad *= s;
}

}  // namespace odr
