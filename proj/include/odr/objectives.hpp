#pragma once

#include <map>
#include <string>
#include <vector>

#include "odr/core.hpp"

namespace odr {

inline std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::CLS: return "cls";
    case ObjectiveKind::REG: return "reg";
    case ObjectiveKind::VANILLA: return "vanilla";
    case ObjectiveKind::CWA: return "cwa";
    case ObjectiveKind::MTD: return "mtd";
  }
  throw ContractViolation("unknown ObjectiveKind");
}

inline ObjectiveKind parse_objective(const std::string& s) {
  if (s == "cls") return ObjectiveKind::CLS;
  if (s == "reg") return ObjectiveKind::REG;
  if (s == "vanilla") return ObjectiveKind::VANILLA;
  if (s == "cwa") return ObjectiveKind::CWA;
  if (s == "mtd") return ObjectiveKind::MTD;
  throw ContractViolation("unknown objective: " + s);
}

struct ClassWeightVector {
  std::vector<double> weights;
};

/// Inverse in-image class frequency, normalized so the weights sum to K.
/// Reduces to all-ones when every class is equally represented.
inline ClassWeightVector cwa_weights(const std::vector<int>& labels) {
  if (labels.empty()) throw ContractViolation("cwa_weights: no instances");
  std::map<int, int> counts;
  for (int c : labels) counts[c]++;
  double inv_sum = 0.0;
  for (int c : labels) inv_sum += 1.0 / counts[c];
  double scale = static_cast<double>(labels.size()) / inv_sum;
  ClassWeightVector out;
  out.weights.reserve(labels.size());
  for (int c : labels) out.weights.push_back(scale / counts[c]);
  return out;
}

/// Per-instance contribution weights (w_cls, w_reg) that the backward pass
/// seeds with; objective_value is their weighted sum. For MTD the gradient
/// flows through the larger of the two terms only.
inline void objective_seed(ObjectiveKind kind, const PerInstanceLosses& losses,
                           const ClassWeightVector* weights, std::vector<double>& w_cls,
                           std::vector<double>& w_reg) {
  losses.validate();
  int k = losses.K();
  if (k < 1) throw ContractViolation("objective: K must be >= 1");
  if (kind == ObjectiveKind::CWA) {
    if (weights == nullptr) throw ContractViolation("objective: CWA requires weights");
    if (static_cast<int>(weights->weights.size()) != k)
      throw ContractViolation("objective: weight length mismatch");
  }
  w_cls.assign(k, 0.0);
  w_reg.assign(k, 0.0);
  for (int i = 0; i < k; ++i) {
    switch (kind) {
      case ObjectiveKind::CLS: w_cls[i] = 1.0; break;
      case ObjectiveKind::REG: w_reg[i] = 1.0; break;
      case ObjectiveKind::VANILLA: w_cls[i] = w_reg[i] = 1.0; break;
      case ObjectiveKind::CWA: w_cls[i] = w_reg[i] = weights->weights[i]; break;
      case ObjectiveKind::MTD:
        if (losses.cls[i] >= losses.reg[i]) w_cls[i] = 1.0;
        else w_reg[i] = 1.0;
        break;
    }
  }
}

inline double objective_value(ObjectiveKind kind, const PerInstanceLosses& losses,
                              const ClassWeightVector* weights = nullptr) {
  std::vector<double> w_cls, w_reg;
  objective_seed(kind, losses, weights, w_cls, w_reg);
  double sum = 0.0;
  for (int i = 0; i < losses.K(); ++i)
    sum += w_cls[i] * losses.cls[i] + w_reg[i] * losses.reg[i];
  return sum;
}

}  // namespace odr
