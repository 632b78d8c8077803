#pragma once

#include <atomic>
#include <string>
#include <thread>
#include <vector>

#include "odr/core.hpp"
#include "odr/objectives.hpp"

namespace odr {

struct AttackSpec {
  AttackBudget budget;
  ObjectiveKind objective = ObjectiveKind::CLS;
  bool random_start = false;
  std::uint64_t seed = 0;
};

struct AttackResult {
  PixelImage image;
  bool skipped_empty = false;  // K == 0: nothing to maximize, input returned
};

/// Projected sign-gradient ascent on the chosen objective: delta starts at
/// zero (or uniform in the eps-ball when random_start), then
/// delta <- project(delta + alpha * sign(grad)) for the configured number of
/// steps. Deterministic given (detector parameters, x, gt, spec).
inline AttackResult pgd_attack(const Detector& detector, const PixelImage& x,
                               const GroundTruthSet& gt, const AttackSpec& spec) {
  spec.budget.validate();
  if (gt.K() == 0) return {x, true};

  double eps = spec.budget.eps01();
  double alpha = spec.budget.alpha01();
  Perturbation delta{Tensor::zeros_like(x.data)};
  if (spec.random_start) {
    Rng rng(spec.seed);
    for (std::size_t i = 0; i < delta.delta.size(); ++i)
      delta.delta[i] = rng.uniform(-eps, eps);
  }
  delta = project_to_budget(delta, x, spec.budget);

  for (int t = 0; t < spec.budget.steps; ++t) {
    PixelImage cur = apply_perturbation(x, delta, spec.budget);
    Tensor g = detector.input_gradient(spec.objective, cur, gt);
    if (!g.all_finite()) throw ContractViolation("pgd_attack: diverged objective");
    for (std::size_t i = 0; i < delta.delta.size(); ++i)
      delta.delta[i] += alpha * sign0(g[i]);
    delta = project_to_budget(delta, x, spec.budget);
  }
  return {apply_perturbation(x, delta, spec.budget), false};
}

/// Elementwise identical to sequential pgd_attack calls, independent of the
/// worker count; per-image failures are reported with the image id attached.
inline std::vector<AttackResult> attack_batch(const Detector& detector,
                                              const std::vector<PixelImage>& images,
                                              const std::vector<GroundTruthSet>& gts,
                                              const AttackSpec& spec, int workers = 1) {
  if (images.empty()) throw ContractViolation("attack_batch: empty image list");
  if (images.size() != gts.size()) throw ContractViolation("attack_batch: images/gts mismatch");
  if (workers < 1) workers = 1;

  std::vector<AttackResult> out(images.size(), AttackResult{PixelImage{}, false});
  std::vector<std::exception_ptr> errors(images.size());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= images.size()) break;
      try {
        out[i] = pgd_attack(detector, images[i], gts[i], spec);
      } catch (const std::exception& e) {
        try {
          throw ContractViolation("attack_batch[" + images[i].id + "]: " + e.what());
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace odr
