#pragma once

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "odr/attacks.hpp"
#include "odr/metrics.hpp"
#include "odr/toydet.hpp"
#include "odr/training.hpp"

namespace odr {

// ---------------------------------------------------------------------------
// Evaluation under attack
// ---------------------------------------------------------------------------

struct RobustnessRow {
  std::string model_id;
  double benign_ap50 = 0.0;
  double a_cls_ap50 = 0.0;
  double a_reg_ap50 = 0.0;
  double a_cwa_ap50 = 0.0;
  bool has_coco = false;
  double benign_ap = 0.0;
  double a_cls_ap = 0.0;
  double a_reg_ap = 0.0;
  double a_cwa_ap = 0.0;
};

/// Adversarial copy of a detection dataset: every image attacked against its
/// own ground truth. Deterministic given (detector, dataset, spec).
inline std::vector<PixelImage> adversarial_dataset(const Detector& det,
                                                   const std::vector<DetectionExample>& data,
                                                   const AttackSpec& spec, int workers = 1) {
  std::vector<PixelImage> images;
  std::vector<GroundTruthSet> gts;
  for (const DetectionExample& e : data) {
    images.push_back(e.image);
    gts.push_back(e.gt);
  }
  std::vector<AttackResult> res = attack_batch(det, images, gts, spec, workers);
  std::vector<PixelImage> out;
  out.reserve(res.size());
  for (AttackResult& r : res) out.push_back(std::move(r.image));
  return out;
}

inline std::vector<ImageEval> run_detection(const Detector& det,
                                            const std::vector<DetectionExample>& data,
                                            const std::vector<PixelImage>* images = nullptr) {
  if (images && images->size() != data.size())
    throw ContractViolation("run_detection: image/dataset size mismatch");
  std::vector<ImageEval> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out.push_back({det.detect(images ? (*images)[i] : data[i].image), data[i].gt});
  return out;
}

/// Benign AP50 plus AP50 under each of the three attack objectives at the
/// given budget. spec.objective is ignored; the row always covers cls, reg
/// and cwa. Zero epsilon makes every column equal the benign column.
inline RobustnessRow evaluate_under_attack(const Detector& det,
                                           const std::vector<DetectionExample>& data,
                                           const AttackSpec& spec, const std::string& model_id,
                                           int workers = 1, bool with_coco = false) {
  if (data.empty()) throw ContractViolation("evaluate_under_attack: empty dataset");
  RobustnessRow row;
  row.model_id = model_id;
  row.has_coco = with_coco;

  auto score = [&](const std::vector<ImageEval>& evals, double& out50, double& out_full) {
    out50 = ap50(evals);
    if (with_coco) out_full = coco_eval(evals).ap;
  };

  score(run_detection(det, data), row.benign_ap50, row.benign_ap);
  const ObjectiveKind kinds[3] = {ObjectiveKind::CLS, ObjectiveKind::REG, ObjectiveKind::CWA};
  double* out50[3] = {&row.a_cls_ap50, &row.a_reg_ap50, &row.a_cwa_ap50};
  double* outap[3] = {&row.a_cls_ap, &row.a_reg_ap, &row.a_cwa_ap};
  for (int k = 0; k < 3; ++k) {
    AttackSpec s = spec;
    s.objective = kinds[k];
    std::vector<PixelImage> adv = adversarial_dataset(det, data, s, workers);
    score(run_detection(det, data, &adv), *out50[k], *outap[k]);
  }
  return row;
}

// ---------------------------------------------------------------------------
// Transfer matrix
// ---------------------------------------------------------------------------

struct TransferMatrix {
  std::vector<std::string> model_ids;
  std::vector<std::vector<double>> ap50;  // [target][source]
  AttackSpec spec;
};

/// One adversarial dataset per source model, evaluated on every target.
/// Cell (target, source) is the target's AP50 on the source's adversarial
/// images; the diagonal is by construction the white-box evaluation.
inline TransferMatrix transfer_matrix(const std::vector<const Detector*>& models,
                                      const std::vector<std::string>& ids,
                                      const std::vector<DetectionExample>& data,
                                      const AttackSpec& spec, int workers = 1) {
  if (models.empty()) throw ContractViolation("transfer_matrix: no models");
  if (models.size() != ids.size())
    throw ContractViolation("transfer_matrix: model/id count mismatch");
  if (data.empty()) throw ContractViolation("transfer_matrix: empty dataset");

  TransferMatrix tm;
  tm.model_ids = ids;
  tm.spec = spec;
  tm.ap50.assign(models.size(), std::vector<double>(models.size(), 0.0));
  for (std::size_t src = 0; src < models.size(); ++src) {
    std::vector<PixelImage> adv = adversarial_dataset(*models[src], data, spec, workers);
    for (std::size_t tgt = 0; tgt < models.size(); ++tgt)
      tm.ap50[tgt][src] = ap50(run_detection(*models[tgt], data, &adv));
  }
  return tm;
}

// ---------------------------------------------------------------------------
// Recipe ablation grid
// ---------------------------------------------------------------------------

struct AblationAxes {
  std::vector<BackboneInit> backbone_init;
  std::vector<OptimizerKind> optimizer;
  std::vector<double> backbone_lr_multiplier;
  std::vector<std::vector<int>> schedule;  // lr decay points per variant
};

struct AblationContext {
  ToyDetectorConfig det_cfg;
  const std::vector<DetectionExample>* train_data = nullptr;
  const std::vector<DetectionExample>* eval_data = nullptr;
  const BackboneCheckpoint* upstream_adversarial = nullptr;
  const BackboneCheckpoint* upstream_benign = nullptr;
  const std::vector<Param>* downstream_benign = nullptr;
  AttackSpec eval_attack;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct AblationCell {
  std::string key;
  RecipeConfig config;
  bool ok = false;
  std::string error;
  RobustnessRow row;
};

inline std::string ablation_key(const RecipeConfig& c) {
  std::ostringstream os;
  os << "init=" << to_string(c.backbone_init) << ",opt=" << to_string(c.optimizer)
     << ",bb_lr_mult=" << c.backbone_lr_multiplier << ",decay=";
  for (std::size_t i = 0; i < c.lr_decay_points.size(); ++i)
    os << (i ? "/" : "") << c.lr_decay_points[i];
  return os.str();
}

inline const std::vector<Param>* ablation_init_params(const AblationContext& ctx,
                                                      BackboneInit init) {
  switch (init) {
    case BackboneInit::UpstreamAdversarial:
      return ctx.upstream_adversarial ? &ctx.upstream_adversarial->params : nullptr;
    case BackboneInit::UpstreamBenign:
      return ctx.upstream_benign ? &ctx.upstream_benign->params : nullptr;
    case BackboneInit::DownstreamBenign: return ctx.downstream_benign;
    case BackboneInit::Random: return nullptr;
  }
  return nullptr;
}

/// Trains and evaluates one recipe. Shared by the grid and direct runs so a
/// single-cell grid equals train+eval by construction.
inline RobustnessRow train_and_evaluate(const RecipeConfig& cfg, const AblationContext& ctx,
                                        const std::string& model_id,
                                        std::unique_ptr<ToyDetector>* trained_out = nullptr) {
  if (!ctx.train_data || !ctx.eval_data)
    throw ContractViolation("train_and_evaluate: missing datasets");
  auto det = build_toy_detector(ctx.det_cfg, ctx.seed);
  const std::vector<Param>* init = ablation_init_params(ctx, cfg.backbone_init);
  if (cfg.backbone_init != BackboneInit::Random) {
    if (!init)
      throw ContractViolation("train_and_evaluate: no checkpoint provided for " +
                              to_string(cfg.backbone_init));
    load_backbone_checkpoint(*det, *init, cfg.backbone_init);
  }
  free_at_train(*det, *ctx.train_data, cfg, ctx.seed);
  RobustnessRow row =
      evaluate_under_attack(*det, *ctx.eval_data, ctx.eval_attack, model_id, ctx.workers);
  if (trained_out) *trained_out = std::move(det);
  return row;
}

/// Cartesian product over the populated axes (an empty axis keeps the base
/// value). Per-cell failures are recorded and the grid continues.
inline std::vector<AblationCell> ablation_grid(const RecipeConfig& base, const AblationAxes& axes,
                                               const AblationContext& ctx) {
  auto inits = axes.backbone_init.empty() ? std::vector<BackboneInit>{base.backbone_init}
                                          : axes.backbone_init;
  auto opts = axes.optimizer.empty() ? std::vector<OptimizerKind>{base.optimizer}
                                     : axes.optimizer;
  auto mults = axes.backbone_lr_multiplier.empty()
                   ? std::vector<double>{base.backbone_lr_multiplier}
                   : axes.backbone_lr_multiplier;
  auto scheds = axes.schedule.empty() ? std::vector<std::vector<int>>{base.lr_decay_points}
                                      : axes.schedule;

  std::vector<AblationCell> cells;
  for (BackboneInit init : inits)
    for (OptimizerKind opt : opts)
      for (double mult : mults)
        for (const std::vector<int>& sched : scheds) {
          AblationCell cell;
          cell.config = base;
          cell.config.backbone_init = init;
          cell.config.optimizer = opt;
          cell.config.backbone_lr_multiplier = mult;
          cell.config.lr_decay_points = sched;
          cell.key = ablation_key(cell.config);
          try {
            cell.row = train_and_evaluate(cell.config, ctx, cell.key);
            cell.ok = true;
          } catch (const std::exception& e) {
            cell.error = e.what();
          }
          cells.push_back(std::move(cell));
        }
  return cells;
}

// ---------------------------------------------------------------------------
// Lossless text round-trips for report artifacts
// ---------------------------------------------------------------------------

namespace detail_exp {

inline std::string full(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail_exp

inline void write_robustness_rows(std::ostream& os, const std::vector<RobustnessRow>& rows) {
  os << "robustness_rows " << rows.size() << "\n";
  for (const RobustnessRow& r : rows) {
    os << r.model_id << ' ' << (r.has_coco ? 1 : 0) << ' ' << detail_exp::full(r.benign_ap50)
       << ' ' << detail_exp::full(r.a_cls_ap50) << ' ' << detail_exp::full(r.a_reg_ap50) << ' '
       << detail_exp::full(r.a_cwa_ap50);
    if (r.has_coco)
      os << ' ' << detail_exp::full(r.benign_ap) << ' ' << detail_exp::full(r.a_cls_ap) << ' '
         << detail_exp::full(r.a_reg_ap) << ' ' << detail_exp::full(r.a_cwa_ap);
    os << "\n";
  }
}

inline std::vector<RobustnessRow> read_robustness_rows(std::istream& is) {
  std::string tag;
  std::size_t n = 0;
  if (!(is >> tag >> n) || tag != "robustness_rows")
    throw ContractViolation("read_robustness_rows: bad header");
  std::vector<RobustnessRow> rows(n);
  for (RobustnessRow& r : rows) {
    int coco = 0;
    if (!(is >> r.model_id >> coco >> r.benign_ap50 >> r.a_cls_ap50 >> r.a_reg_ap50 >>
          r.a_cwa_ap50))
      throw ContractViolation("read_robustness_rows: truncated row");
    r.has_coco = coco != 0;
    if (r.has_coco)
      if (!(is >> r.benign_ap >> r.a_cls_ap >> r.a_reg_ap >> r.a_cwa_ap))
        throw ContractViolation("read_robustness_rows: truncated row");
  }
  return rows;
}

inline void write_transfer_matrix(std::ostream& os, const TransferMatrix& tm) {
  os << "transfer_matrix " << tm.model_ids.size() << "\n";
  os << "attack " << tm.spec.budget.epsilon << ' ' << detail_exp::full(tm.spec.budget.alpha_fraction)
     << ' ' << tm.spec.budget.steps << ' ' << to_string(tm.spec.objective) << ' '
     << (tm.spec.random_start ? 1 : 0) << ' ' << tm.spec.seed << "\n";
  for (const std::string& id : tm.model_ids) os << id << "\n";
  for (const auto& row : tm.ap50) {
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? " " : "") << detail_exp::full(row[j]);
    os << "\n";
  }
}

inline TransferMatrix read_transfer_matrix(std::istream& is) {
  std::string tag;
  std::size_t n = 0;
  if (!(is >> tag >> n) || tag != "transfer_matrix")
    throw ContractViolation("read_transfer_matrix: bad header");
  TransferMatrix tm;
  std::string obj;
  int rs = 0;
  if (!(is >> tag >> tm.spec.budget.epsilon >> tm.spec.budget.alpha_fraction >>
        tm.spec.budget.steps >> obj >> rs >> tm.spec.seed) ||
      tag != "attack")
    throw ContractViolation("read_transfer_matrix: bad attack line");
  tm.spec.objective = parse_objective(obj);
  tm.spec.random_start = rs != 0;
  tm.model_ids.resize(n);
  for (std::string& id : tm.model_ids)
    if (!(is >> id)) throw ContractViolation("read_transfer_matrix: truncated ids");
  tm.ap50.assign(n, std::vector<double>(n, 0.0));
  for (auto& row : tm.ap50)
    for (double& v : row)
      if (!(is >> v)) throw ContractViolation("read_transfer_matrix: truncated values");
  return tm;
}

}  // namespace odr
