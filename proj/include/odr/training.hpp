#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "odr/attacks.hpp"
#include "odr/checkpoint.hpp"
#include "odr/core.hpp"
#include "odr/objectives.hpp"
#include "odr/optim.hpp"
#include "odr/toydet.hpp"

namespace odr {

enum class BackboneInit { UpstreamAdversarial, UpstreamBenign, DownstreamBenign, Random };

inline std::string to_string(BackboneInit b) {
  switch (b) {
    case BackboneInit::UpstreamAdversarial: return "upstream_adversarial";
    case BackboneInit::UpstreamBenign: return "upstream_benign";
    case BackboneInit::DownstreamBenign: return "downstream_benign";
    case BackboneInit::Random: return "random";
  }
  throw ContractViolation("unknown BackboneInit");
}

inline BackboneInit parse_backbone_init(const std::string& s) {
  if (s == "upstream_adversarial") return BackboneInit::UpstreamAdversarial;
  if (s == "upstream_benign") return BackboneInit::UpstreamBenign;
  if (s == "downstream_benign") return BackboneInit::DownstreamBenign;
  if (s == "random") return BackboneInit::Random;
  throw ContractViolation("unknown backbone_init: " + s);
}

struct RecipeConfig {
  int replay_m = 4;
  int epochs_equivalent = 24;
  double base_lr = 1e-4;
  double backbone_lr_multiplier = 0.1;
  double weight_decay = 1e-4;
  OptimizerKind optimizer = OptimizerKind::AdaptiveDecoupledWd;
  std::vector<int> lr_decay_points = {16, 20};  // in equivalent epochs
  double lr_decay_factor = 0.1;
  AttackBudget budget;  // eps on the 0-255 scale, default 8
  ObjectiveKind objective = ObjectiveKind::VANILLA;
  BackboneInit backbone_init = BackboneInit::UpstreamAdversarial;
  int batch_size = 8;

  void validate() const {
    if (replay_m < 1) throw ContractViolation("RecipeConfig: replay_m must be >= 1");
    if (epochs_equivalent < 1 || epochs_equivalent % replay_m != 0)
      throw ContractViolation("RecipeConfig: epochs_equivalent must be a positive multiple of replay_m");
    if (backbone_lr_multiplier < 0.0 || backbone_lr_multiplier > 1.0)
      throw ContractViolation("RecipeConfig: backbone_lr_multiplier must be in [0,1]");
    if (batch_size < 1) throw ContractViolation("RecipeConfig: batch_size must be >= 1");
    budget.validate();
  }
};

struct TrainState {
  Tensor delta;  // carried FreeAT perturbation, always eps-ball projected
  OptimState optim;
  long epoch = 0;  // next outer epoch to execute (resume point)
  long minibatches = 0;
  long param_updates = 0;
  long delta_updates = 0;
  long grad_computations = 0;
  std::string backbone_provenance = "random";
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Parameter groups
// ---------------------------------------------------------------------------

struct ParamGroup {
  std::string group;
  double effective_lr = 0.0;
  bool frozen = false;
  long n_params = 0;
};

inline std::vector<ParamGroup> build_param_groups(const Detector& detector,
                                                  const RecipeConfig& cfg) {
  cfg.validate();
  long bb = 0, hd = 0;
  for (const Param& p : detector.params()) {
    if (p.group == "backbone") bb += static_cast<long>(p.value.size());
    else if (p.group == "head") hd += static_cast<long>(p.value.size());
    else throw ContractViolation("build_param_groups: untagged parameter " + p.name);
  }
  double bb_lr = cfg.base_lr * cfg.backbone_lr_multiplier;
  std::vector<ParamGroup> groups;
  groups.push_back({"backbone", bb_lr, cfg.backbone_lr_multiplier == 0.0, bb});
  groups.push_back({"head", cfg.base_lr, false, hd});
  return groups;
}

/// Per-parameter effective learning rates aligned with detector.params();
/// negative marks a frozen parameter (excluded from the optimizer).
inline std::vector<double> effective_lrs(const Detector& detector, const RecipeConfig& cfg) {
  auto groups = build_param_groups(detector, cfg);
  std::vector<double> lrs;
  for (const Param& p : detector.params()) {
    const ParamGroup& g = p.group == "backbone" ? groups[0] : groups[1];
    lrs.push_back(g.frozen ? -1.0 : g.effective_lr);
  }
  return lrs;
}

// ---------------------------------------------------------------------------
// Backbone initialization
// ---------------------------------------------------------------------------

/// Replaces backbone parameters by name; head parameters are untouched.
/// mode == Random is a no-op on parameters (provenance only).
inline std::string load_backbone_checkpoint(Detector& detector,
                                            const std::vector<Param>& checkpoint,
                                            BackboneInit mode) {
  if (mode == BackboneInit::Random) return to_string(mode);
  std::vector<std::string> problems;
  for (Param& p : detector.params()) {
    if (p.group != "backbone") continue;
    const Param* src = nullptr;
    for (const Param& c : checkpoint)
      if (c.name == p.name) src = &c;
    if (!src) {
      problems.push_back("missing " + p.name);
      continue;
    }
    if (!src->value.same_shape(p.value)) {
      problems.push_back("shape mismatch " + p.name + " " + src->value.shape_str() + " vs " +
                         p.value.shape_str());
      continue;
    }
    p.value = src->value;
  }
  if (!problems.empty()) {
    std::string msg = "load_backbone_checkpoint:";
    for (const std::string& s : problems) msg += " " + s + ";";
    throw ContractViolation(msg);
  }
  return to_string(mode);
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace detail_train {

inline double lr_factor(const RecipeConfig& cfg, long eq_epoch) {
  double f = 1.0;
  for (int p : cfg.lr_decay_points)
    if (eq_epoch >= p) f *= cfg.lr_decay_factor;
  return f;
}

inline std::vector<std::vector<int>> epoch_batches(std::size_t n, int batch_size, Rng rng) {
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (std::size_t s = 0; s < n; s += batch_size)
    batches.emplace_back(order.begin() + s,
                         order.begin() + std::min(n, s + static_cast<std::size_t>(batch_size)));
  return batches;
}

/// One optimizer update from the mean VANILLA training gradient over the
/// given adversarial inputs. Returns the mean input gradient of cfg.objective
/// (one shared backward when the objective is VANILLA).
inline Tensor train_step(Detector& det, const std::vector<const PixelImage*>& inputs,
                         const std::vector<const GroundTruthSet*>& gts, const RecipeConfig& cfg,
                         OptimState& optim, const std::vector<double>& lrs, double lr_scale,
                         TrainState& state, const std::string& where) {
  zero_grads(det.params());
  Tensor g_adv;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor din;
    if (cfg.objective == ObjectiveKind::VANILLA) {
      din = det.backward(ObjectiveKind::VANILLA, *inputs[i], *gts[i]);
      state.grad_computations++;
    } else {
      din = det.input_gradient(cfg.objective, *inputs[i], *gts[i]);
      det.backward(ObjectiveKind::VANILLA, *inputs[i], *gts[i]);
      state.grad_computations += 2;
    }
    if (!din.all_finite())
      throw ContractViolation("training: non-finite loss gradient at " + where);
    if (g_adv.size() == 0) g_adv = Tensor::zeros_like(din);
    g_adv += din;
  }
  double inv = 1.0 / static_cast<double>(inputs.size());
  scale_grads(det.params(), inv);
  g_adv *= inv;
  OptimizerConfig oc;
  oc.kind = cfg.optimizer;
  oc.weight_decay = cfg.weight_decay;
  std::vector<double> scaled(lrs);
  for (double& v : scaled)
    if (v >= 0) v *= lr_scale;
  optimizer_step(oc, det.params(), optim, scaled);
  state.param_updates++;
  return g_adv;
}

}  // namespace detail_train

/// FreeAT fine-tuning: per minibatch, replay_m inner replays; each computes
/// the input and parameter gradients in one pass, applies one optimizer step,
/// then updates the carried delta with a full-eps sign step and clips it back
/// into the eps ball. Delta persists across minibatches and epochs. Every
/// image sees epochs_equivalent forward/backward passes in total.
inline TrainState free_at_train(Detector& det, const std::vector<DetectionExample>& dataset,
                                const RecipeConfig& cfg, std::uint64_t seed,
                                const TrainState* resume = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw ContractViolation("free_at_train: empty dataset");
  double eps = cfg.budget.eps01();

  TrainState state;
  if (resume) {
    state = *resume;
  } else {
    state.delta = Tensor::zeros_like(dataset[0].image.data);
    state.optim.init(det.params());
    state.seed = seed;
  }
  std::vector<double> lrs = effective_lrs(det, cfg);

  long outer_epochs = cfg.epochs_equivalent / cfg.replay_m;
  for (long epoch = state.epoch; epoch < outer_epochs; ++epoch) {
    double factor = detail_train::lr_factor(cfg, epoch * cfg.replay_m);
    auto batches = detail_train::epoch_batches(dataset.size(), cfg.batch_size,
                                               Rng(seed).derive(0x10 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      state.minibatches++;
      for (int replay = 0; replay < cfg.replay_m; ++replay) {
        std::vector<PixelImage> advs;
        advs.reserve(batches[bi].size());
        std::vector<const PixelImage*> inputs;
        std::vector<const GroundTruthSet*> gts;
        for (int idx : batches[bi]) {
          Tensor adv = dataset[idx].image.data;
          adv += state.delta;
          for (std::size_t j = 0; j < adv.size(); ++j) adv[j] = std::clamp(adv[j], 0.0, 1.0);
          advs.emplace_back(std::move(adv), dataset[idx].image.id);
        }
        for (std::size_t j = 0; j < advs.size(); ++j) {
          inputs.push_back(&advs[j]);
          gts.push_back(&dataset[batches[bi][j]].gt);
        }
        std::ostringstream where;
        where << "epoch " << epoch << " batch " << bi << " replay " << replay;
        Tensor g_adv = detail_train::train_step(det, inputs, gts, cfg, state.optim, lrs, factor,
                                                state, where.str());
        // Alg: delta <- clip(delta + eps * sign(g_adv), -eps, eps)
        for (std::size_t j = 0; j < state.delta.size(); ++j)
          state.delta[j] = std::clamp(state.delta[j] + eps * sign0(g_adv[j]), -eps, eps);
        state.delta_updates++;
      }
    }
    state.epoch = epoch + 1;
  }
  return state;
}

/// Full min-max baseline: a fresh PGD attack per minibatch image (inner_steps,
/// inner_alpha on the 0-255 scale), then one optimizer step on the
/// adversarial inputs. inner_steps == 0 reduces to standard training.
inline TrainState pgd_at_train(Detector& det, const std::vector<DetectionExample>& dataset,
                               const RecipeConfig& cfg, int inner_steps, double inner_alpha,
                               std::uint64_t seed) {
  cfg.validate();
  if (dataset.empty()) throw ContractViolation("pgd_at_train: empty dataset");
  if (inner_steps < 0) throw ContractViolation("pgd_at_train: negative inner_steps");

  TrainState state;
  state.delta = Tensor();  // no carried perturbation in PGD-AT
  state.optim.init(det.params());
  state.seed = seed;
  std::vector<double> lrs = effective_lrs(det, cfg);

  bool attack_on = inner_steps > 0 && cfg.budget.epsilon > 0;
  AttackSpec aspec;
  if (attack_on) {
    aspec.budget = cfg.budget;
    aspec.budget.steps = inner_steps;
    aspec.budget.alpha_fraction = inner_alpha / std::max(1, cfg.budget.epsilon);
    aspec.objective = cfg.objective;
  }

  for (long epoch = 0; epoch < cfg.epochs_equivalent; ++epoch) {
    double factor = detail_train::lr_factor(cfg, epoch);
    auto batches = detail_train::epoch_batches(dataset.size(), cfg.batch_size,
                                               Rng(seed).derive(0x10 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      state.minibatches++;
      std::vector<PixelImage> advs;
      advs.reserve(batches[bi].size());
      for (int idx : batches[bi]) {
        if (attack_on) {
          AttackResult r = pgd_attack(det, dataset[idx].image, dataset[idx].gt, aspec);
          advs.push_back(std::move(r.image));
          state.grad_computations += inner_steps;
        } else {
          advs.push_back(dataset[idx].image);
        }
      }
      std::vector<const PixelImage*> inputs;
      std::vector<const GroundTruthSet*> gts;
      for (std::size_t j = 0; j < advs.size(); ++j) {
        inputs.push_back(&advs[j]);
        gts.push_back(&dataset[batches[bi][j]].gt);
      }
      std::ostringstream where;
      where << "epoch " << epoch << " batch " << bi;
      detail_train::train_step(det, inputs, gts, cfg, state.optim, lrs, factor, state,
                               where.str());
    }
    state.epoch = epoch + 1;
  }
  return state;
}

// ---------------------------------------------------------------------------
// Train-state checkpointing (bit-exact resume)
// ---------------------------------------------------------------------------

inline std::string recipe_to_text(const RecipeConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "replay_m " << c.replay_m << "\nepochs_equivalent " << c.epochs_equivalent
     << "\nbase_lr " << c.base_lr << "\nbackbone_lr_multiplier " << c.backbone_lr_multiplier
     << "\nweight_decay " << c.weight_decay << "\noptimizer " << to_string(c.optimizer)
     << "\nlr_decay_factor " << c.lr_decay_factor << "\nepsilon " << c.budget.epsilon
     << "\nalpha_fraction " << c.budget.alpha_fraction << "\nsteps " << c.budget.steps
     << "\nobjective " << to_string(c.objective) << "\nbackbone_init "
     << to_string(c.backbone_init) << "\nbatch_size " << c.batch_size << "\nlr_decay_points";
  for (int p : c.lr_decay_points) os << " " << p;
  os << "\n";
  return os.str();
}

inline RecipeConfig recipe_from_text(const std::string& text) {
  RecipeConfig c;
  c.lr_decay_points.clear();
  std::istringstream is(text);
  std::string key;
  while (is >> key) {
    if (key == "replay_m") is >> c.replay_m;
    else if (key == "epochs_equivalent") is >> c.epochs_equivalent;
    else if (key == "base_lr") is >> c.base_lr;
    else if (key == "backbone_lr_multiplier") is >> c.backbone_lr_multiplier;
    else if (key == "weight_decay") is >> c.weight_decay;
    else if (key == "optimizer") {
      std::string v;
      is >> v;
      c.optimizer = parse_optimizer(v);
    } else if (key == "lr_decay_factor") is >> c.lr_decay_factor;
    else if (key == "epsilon") is >> c.budget.epsilon;
    else if (key == "alpha_fraction") is >> c.budget.alpha_fraction;
    else if (key == "steps") is >> c.budget.steps;
    else if (key == "objective") {
      std::string v;
      is >> v;
      c.objective = parse_objective(v);
    } else if (key == "backbone_init") {
      std::string v;
      is >> v;
      c.backbone_init = parse_backbone_init(v);
    } else if (key == "batch_size") is >> c.batch_size;
    else if (key == "lr_decay_points") {
      int p;
      while (is >> p) c.lr_decay_points.push_back(p);
    } else {
      throw ContractViolation("recipe_from_text: unknown key " + key);
    }
  }
  return c;
}

inline void save_train_checkpoint(const std::string& path, const Detector& det,
                                  const TrainState& state, const RecipeConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractViolation("cannot open for write: " + path);
  os.write("ODTRAIN1", 8);
  ckpt::write_str(os, recipe_to_text(cfg));
  write_params(os, det.params());
  std::uint64_t n = state.optim.m.size();
  os.write(reinterpret_cast<const char*>(&n), 8);
  for (std::uint64_t i = 0; i < n; ++i) {
    ckpt::write_tensor(os, state.optim.m[i]);
    ckpt::write_tensor(os, state.optim.v[i]);
  }
  std::int64_t step = state.optim.step;
  os.write(reinterpret_cast<const char*>(&step), 8);
  ckpt::write_tensor(os, state.delta);
  std::int64_t vals[5] = {state.epoch, state.minibatches, state.param_updates,
                          state.delta_updates, state.grad_computations};
  os.write(reinterpret_cast<const char*>(vals), sizeof(vals));
  ckpt::write_str(os, state.backbone_provenance);
  os.write(reinterpret_cast<const char*>(&state.seed), 8);
}

inline RecipeConfig load_train_checkpoint(const std::string& path, Detector& det,
                                          TrainState& state) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractViolation("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "ODTRAIN1")
    throw ContractViolation("bad train checkpoint magic: " + path);
  RecipeConfig cfg = recipe_from_text(ckpt::read_str(is));
  std::vector<Param> params = read_params(is);
  if (params.size() != det.params().size())
    throw ContractViolation("load_train_checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != det.params()[i].name ||
        !params[i].value.same_shape(det.params()[i].value))
      throw ContractViolation("load_train_checkpoint: parameter mismatch at " + params[i].name);
    det.params()[i].value = params[i].value;
  }
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 8);
  state.optim.m.clear();
  state.optim.v.clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    state.optim.m.push_back(ckpt::read_tensor(is));
    state.optim.v.push_back(ckpt::read_tensor(is));
  }
  std::int64_t step = 0;
  is.read(reinterpret_cast<char*>(&step), 8);
  state.optim.step = step;
  state.delta = ckpt::read_tensor(is);
  std::int64_t vals[5];
  is.read(reinterpret_cast<char*>(vals), sizeof(vals));
  state.epoch = vals[0];
  state.minibatches = vals[1];
  state.param_updates = vals[2];
  state.delta_updates = vals[3];
  state.grad_computations = vals[4];
  state.backbone_provenance = ckpt::read_str(is);
  is.read(reinterpret_cast<char*>(&state.seed), 8);
  if (!is) throw ContractViolation("load_train_checkpoint: truncated file");
  return cfg;
}

}  // namespace odr
