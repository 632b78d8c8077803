// Command-line entry point: attack / train-at / eval / transfer / ablate /
// report. Every run writes its artifacts plus a manifest under a directory
// named by config hash and seed; identical config+seed reproduces identical
// bytes.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "odr/attacks.hpp"
#include "odr/checkpoint.hpp"
#include "odr/core.hpp"
#include "odr/experiments.hpp"
#include "odr/manifest.hpp"
#include "odr/metrics.hpp"
#include "odr/plots.hpp"
#include "odr/toydet.hpp"
#include "odr/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace odr;

namespace {

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

ShapesDatasetSpec dataset_from_json(const json& j) {
  check_known_keys(j, {"n_images", "height", "width", "num_classes", "min_objects",
                       "max_objects", "min_size", "max_size", "noise", "seed"});
  ShapesDatasetSpec s;
  s.n_images = field_or(j, "n_images", s.n_images);
  s.height = field_or(j, "height", s.height);
  s.width = field_or(j, "width", s.width);
  s.num_classes = field_or(j, "num_classes", s.num_classes);
  s.min_objects = field_or(j, "min_objects", s.min_objects);
  s.max_objects = field_or(j, "max_objects", s.max_objects);
  s.min_size = field_or(j, "min_size", s.min_size);
  s.max_size = field_or(j, "max_size", s.max_size);
  s.noise = field_or(j, "noise", s.noise);
  s.seed = require_field<std::uint64_t>(j, "seed");
  return s;
}

ToyDetectorConfig toy_from_json(const json& j) {
  check_known_keys(j, {"backbone_blocks", "backbone_width", "head_layers", "head_width",
                       "num_classes", "score_thresh", "nms_iou", "max_dets"});
  ToyDetectorConfig c;
  c.backbone_blocks = field_or(j, "backbone_blocks", c.backbone_blocks);
  c.backbone_width = field_or(j, "backbone_width", c.backbone_width);
  c.head_layers = field_or(j, "head_layers", c.head_layers);
  c.head_width = field_or(j, "head_width", c.head_width);
  c.num_classes = field_or(j, "num_classes", c.num_classes);
  c.score_thresh = field_or(j, "score_thresh", c.score_thresh);
  c.nms_iou = field_or(j, "nms_iou", c.nms_iou);
  c.max_dets = field_or(j, "max_dets", c.max_dets);
  return c;
}

AttackSpec attack_from_json(const json& j) {
  check_known_keys(j, {"epsilon", "alpha_fraction", "steps", "objective", "random_start", "seed"});
  AttackSpec s;
  s.budget.epsilon = field_or(j, "epsilon", s.budget.epsilon);
  s.budget.alpha_fraction = field_or(j, "alpha_fraction", s.budget.alpha_fraction);
  s.budget.steps = field_or(j, "steps", s.budget.steps);
  s.objective = parse_objective(field_or<std::string>(j, "objective", "cls"));
  s.random_start = field_or(j, "random_start", false);
  s.seed = field_or<std::uint64_t>(j, "seed", 0);
  return s;
}

RecipeConfig recipe_from_json(const json& j) {
  check_known_keys(j, {"replay_m", "epochs_equivalent", "base_lr", "backbone_lr_multiplier",
                       "weight_decay", "optimizer", "lr_decay_points", "lr_decay_factor",
                       "epsilon", "alpha_fraction", "steps", "objective", "backbone_init",
                       "batch_size"});
  RecipeConfig c;
  c.replay_m = field_or(j, "replay_m", c.replay_m);
  c.epochs_equivalent = field_or(j, "epochs_equivalent", c.epochs_equivalent);
  c.base_lr = field_or(j, "base_lr", c.base_lr);
  c.backbone_lr_multiplier = field_or(j, "backbone_lr_multiplier", c.backbone_lr_multiplier);
  c.weight_decay = field_or(j, "weight_decay", c.weight_decay);
  c.optimizer = parse_optimizer(field_or<std::string>(j, "optimizer", to_string(c.optimizer)));
  c.lr_decay_points = field_or(j, "lr_decay_points", c.lr_decay_points);
  c.lr_decay_factor = field_or(j, "lr_decay_factor", c.lr_decay_factor);
  c.budget.epsilon = field_or(j, "epsilon", c.budget.epsilon);
  c.budget.alpha_fraction = field_or(j, "alpha_fraction", c.budget.alpha_fraction);
  c.budget.steps = field_or(j, "steps", c.budget.steps);
  c.objective = parse_objective(field_or<std::string>(j, "objective", to_string(c.objective)));
  c.backbone_init =
      parse_backbone_init(field_or<std::string>(j, "backbone_init", to_string(c.backbone_init)));
  c.batch_size = field_or(j, "batch_size", c.batch_size);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Model files: toy config text stored as checkpoint provenance
// ---------------------------------------------------------------------------

std::string toy_cfg_to_text(const ToyDetectorConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "toy " << c.backbone_blocks << ' ' << c.backbone_width << ' ' << c.head_layers << ' '
     << c.head_width << ' ' << c.num_classes << ' ' << c.score_thresh << ' ' << c.nms_iou << ' '
     << c.max_dets;
  return os.str();
}

ToyDetectorConfig toy_cfg_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  ToyDetectorConfig c;
  if (!(is >> tag >> c.backbone_blocks >> c.backbone_width >> c.head_layers >> c.head_width >>
        c.num_classes >> c.score_thresh >> c.nms_iou >> c.max_dets) ||
      tag != "toy")
    throw ContractViolation("model file: bad embedded config");
  return c;
}

void save_toy_model(const std::string& path, const ToyDetector& det) {
  save_params_file(path, det.params(), toy_cfg_to_text(det.config()));
}

std::unique_ptr<ToyDetector> load_toy_model(const std::string& path) {
  std::string prov;
  std::vector<Param> params = load_params_file(path, &prov);
  auto det = build_toy_detector(toy_cfg_from_text(prov), 0);
  if (params.size() != det->params().size())
    throw ContractViolation("model file: parameter count mismatch: " + path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != det->params()[i].name ||
        !params[i].value.same_shape(det->params()[i].value))
      throw ContractViolation("model file: parameter mismatch at " + params[i].name);
    det->params()[i].value = params[i].value;
  }
  return det;
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

void write_eval_report(std::ostream& os, const EvalReport& r) {
  os.precision(17);
  os << "ap " << r.ap << "\nap50 " << r.ap50 << "\nap75 " << r.ap75 << "\nap_s " << r.ap_s
     << "\nap_m " << r.ap_m << "\nap_l " << r.ap_l << "\nn_images " << r.n_images << "\nn_gts "
     << r.n_gts << "\nn_dets " << r.n_dets << "\n";
  for (const auto& [cls, ap] : r.per_class_ap50) os << "class_ap50 " << cls << ' ' << ap << "\n";
}

void write_breakdown(std::ostream& os, const ErrorBreakdown& bd) {
  os.precision(17);
  for (std::size_t s = 0; s < bd.areas.size(); ++s) {
    os << kStageNames[s] << " area " << bd.areas[s] << " increment " << bd.increments[s]
       << "\ncurve";
    for (double v : bd.curves[s]) os << ' ' << v;
    os << "\n";
  }
}

ErrorBreakdown read_breakdown(std::istream& is) {
  ErrorBreakdown bd;
  std::string name, t1, t2;
  double area, inc;
  while (is >> name >> t1 >> area >> t2 >> inc) {
    if (t1 != "area" || t2 != "increment")
      throw ContractViolation("breakdown file: malformed stage line");
    std::string curve_tag;
    is >> curve_tag;
    if (curve_tag != "curve") throw ContractViolation("breakdown file: missing curve");
    std::array<double, kRecallPoints> c{};
    for (double& v : c)
      if (!(is >> v)) throw ContractViolation("breakdown file: truncated curve");
    bd.areas.push_back(area);
    bd.increments.push_back(inc);
    bd.curves.push_back(c);
  }
  return bd;
}

void write_text_file(const fs::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ContractViolation("cannot open for write: " + p.string());
  os << content;
}

// ---------------------------------------------------------------------------
// Run plumbing
// ---------------------------------------------------------------------------

struct RunContext {
  json config;
  fs::path dir;
  std::uint64_t seed = 0;
  int workers = 1;
  RunManifest manifest;

  void artifact(const std::string& name) { manifest.artifacts.push_back(name); }
  fs::path path(const std::string& name) const { return dir / name; }
};

std::vector<DetectionExample> load_or_generate_dataset(const json& cfg, std::uint64_t seed,
                                                       ShapesDataset* full_out = nullptr) {
  json dj = require_field<json>(cfg, "dataset");
  ShapesDatasetSpec spec = dataset_from_json(dj);
  if (!dj.contains("seed")) spec.seed = seed;
  ShapesDataset ds = generate_shapes_dataset(spec);
  if (full_out) *full_out = ds;
  return ds.detection;
}

void cmd_attack(RunContext& rc) {
  check_known_keys(rc.config, {"kind", "model", "dataset", "attack", "seed", "with_coco"});
  auto det = load_toy_model(require_field<std::string>(rc.config, "model"));
  std::vector<DetectionExample> data = load_or_generate_dataset(rc.config, rc.seed);
  AttackSpec spec = attack_from_json(require_field<json>(rc.config, "attack"));
  if (!rc.config.at("attack").contains("seed")) spec.seed = rc.seed;

  std::vector<PixelImage> adv = adversarial_dataset(*det, data, spec, rc.workers);
  {
    std::ofstream os(rc.path("adv_images.bin"), std::ios::binary);
    write_images(os, adv);
    rc.artifact("adv_images.bin");
  }
  {
    std::ofstream os(rc.path("gt.txt"));
    for (const DetectionExample& e : data) write_gt_records(os, e.image.id, e.gt);
    rc.artifact("gt.txt");
  }
  {
    std::ofstream os(rc.path("adv_det.txt"));
    for (std::size_t i = 0; i < data.size(); ++i)
      write_det_records(os, data[i].image.id, det->detect(adv[i]));
    rc.artifact("adv_det.txt");
  }
  RobustnessRow row = evaluate_under_attack(*det, data, spec, "model", rc.workers,
                                            field_or(rc.config, "with_coco", false));
  std::ostringstream os;
  write_robustness_rows(os, {row});
  write_text_file(rc.path("row.txt"), os.str());
  rc.artifact("row.txt");
}

void cmd_train_at(RunContext& rc) {
  check_known_keys(rc.config, {"kind", "detector", "dataset", "eval_dataset", "recipe", "method",
                               "inner_steps", "inner_alpha", "backbone_checkpoint", "pretrain",
                               "eval_attack", "seed"});
  ToyDetectorConfig tc = toy_from_json(field_or<json>(rc.config, "detector", json::object()));
  ShapesDataset full;
  std::vector<DetectionExample> train_data = load_or_generate_dataset(rc.config, rc.seed, &full);

  RecipeConfig recipe = recipe_from_json(field_or<json>(rc.config, "recipe", json::object()));
  auto det = build_toy_detector(tc, rc.seed);

  std::string provenance = "random";
  if (recipe.backbone_init != BackboneInit::Random) {
    std::vector<Param> ckpt;
    if (rc.config.contains("backbone_checkpoint")) {
      ckpt = load_params_file(require_field<std::string>(rc.config, "backbone_checkpoint"));
    } else {
      json pj = field_or<json>(rc.config, "pretrain", json::object());
      check_known_keys(pj, {"epochs", "batch_size", "lr", "weight_decay", "epsilon",
                            "attack_steps"});
      PretrainConfig pc;
      pc.epochs = field_or(pj, "epochs", pc.epochs);
      pc.batch_size = field_or(pj, "batch_size", pc.batch_size);
      pc.lr = field_or(pj, "lr", pc.lr);
      pc.weight_decay = field_or(pj, "weight_decay", pc.weight_decay);
      pc.budget.epsilon = field_or(pj, "epsilon", pc.budget.epsilon);
      pc.attack_steps = field_or(pj, "attack_steps", pc.attack_steps);
      PretrainMode mode = recipe.backbone_init == BackboneInit::UpstreamBenign
                              ? PretrainMode::Benign
                              : PretrainMode::Adversarial;
      BackboneCheckpoint bc =
          pretrain_toy_backbone(mode, tc, full.classification, pc, Rng(rc.seed).derive(7).state());
      ckpt = bc.params;
      save_params_file(rc.path("backbone.bin").string(), bc.params, bc.provenance);
      rc.artifact("backbone.bin");
    }
    provenance = load_backbone_checkpoint(*det, ckpt, recipe.backbone_init);
  }

  std::string method = field_or<std::string>(rc.config, "method", "free");
  TrainState state;
  if (method == "free") {
    state = free_at_train(*det, train_data, recipe, rc.seed);
  } else if (method == "pgd") {
    state = pgd_at_train(*det, train_data, recipe,
                         field_or(rc.config, "inner_steps", 10),
                         field_or(rc.config, "inner_alpha", 2.0), rc.seed);
  } else {
    throw ContractViolation("config: method must be free or pgd");
  }
  state.backbone_provenance = provenance;

  save_toy_model(rc.path("model.bin").string(), *det);
  rc.artifact("model.bin");
  save_train_checkpoint(rc.path("train_state.bin").string(), *det, state, recipe);
  rc.artifact("train_state.bin");

  std::vector<DetectionExample> eval_data = train_data;
  if (rc.config.contains("eval_dataset")) {
    ShapesDatasetSpec es = dataset_from_json(rc.config.at("eval_dataset"));
    eval_data = generate_shapes_dataset(es).detection;
  }
  AttackSpec espec = attack_from_json(field_or<json>(rc.config, "eval_attack", json::object()));
  RobustnessRow row = evaluate_under_attack(*det, eval_data, espec, method, rc.workers);
  std::ostringstream os;
  write_robustness_rows(os, {row});
  write_text_file(rc.path("row.txt"), os.str());
  rc.artifact("row.txt");
}

void cmd_eval(RunContext& rc) {
  check_known_keys(rc.config, {"kind", "detections", "ground_truth", "eleven_point",
                               "similarity_map", "seed"});
  std::ifstream dfs(require_field<std::string>(rc.config, "detections"));
  if (!dfs) throw ContractViolation("config: detections file not readable");
  std::ifstream gfs(require_field<std::string>(rc.config, "ground_truth"));
  if (!gfs) throw ContractViolation("config: ground_truth file not readable");
  auto dets = read_det_records(dfs);
  auto gts = read_gt_records(gfs);

  std::vector<ImageEval> data;
  for (const auto& [id, gt] : gts) {
    ImageEval ie;
    ie.gts = gt;
    auto it = dets.find(id);
    if (it != dets.end()) ie.dets = it->second;
    data.push_back(std::move(ie));
  }
  for (const auto& [id, d] : dets)
    if (!gts.count(id)) data.push_back({d, GroundTruthSet{}});

  EvalReport rep = coco_eval(data, field_or(rc.config, "eleven_point", false));
  std::ostringstream os;
  write_eval_report(os, rep);
  write_text_file(rc.path("report.txt"), os.str());
  rc.artifact("report.txt");

  std::map<int, int> sim;
  if (rc.config.contains("similarity_map")) {
    for (const auto& [k, v] : rc.config.at("similarity_map").items())
      sim[std::stoi(k)] = v.get<int>();
  } else {
    for (const auto& ie : data) {
      for (int l : ie.gts.labels) sim[l] = 0;
      for (int l : ie.dets.labels) sim[l] = 0;
    }
  }
  ErrorBreakdown bd = error_breakdown(data, sim);
  std::ostringstream bs;
  write_breakdown(bs, bd);
  write_text_file(rc.path("breakdown.txt"), bs.str());
  rc.artifact("breakdown.txt");
  write_text_file(rc.path("pr_stages.svg"), render_pr_stages_svg(bd));
  rc.artifact("pr_stages.svg");
}

void cmd_transfer(RunContext& rc) {
  check_known_keys(rc.config, {"kind", "models", "dataset", "attack", "seed"});
  std::vector<std::string> paths = require_field<std::vector<std::string>>(rc.config, "models");
  if (paths.size() < 2) throw ContractViolation("config: transfer needs >= 2 models");
  std::vector<std::unique_ptr<ToyDetector>> owned;
  std::vector<const Detector*> models;
  std::vector<std::string> ids;
  for (const std::string& p : paths) {
    owned.push_back(load_toy_model(p));
    models.push_back(owned.back().get());
    ids.push_back(fs::path(p).stem().string());
  }
  std::vector<DetectionExample> data = load_or_generate_dataset(rc.config, rc.seed);
  AttackSpec spec = attack_from_json(require_field<json>(rc.config, "attack"));
  TransferMatrix tm = transfer_matrix(models, ids, data, spec, rc.workers);
  std::ostringstream os;
  write_transfer_matrix(os, tm);
  write_text_file(rc.path("transfer_matrix.txt"), os.str());
  rc.artifact("transfer_matrix.txt");
  write_text_file(rc.path("heatmap.svg"), render_transfer_heatmap_svg(tm));
  rc.artifact("heatmap.svg");
}

void cmd_ablate(RunContext& rc) {
  check_known_keys(rc.config, {"kind", "detector", "dataset", "eval_dataset", "recipe", "axes",
                               "pretrain", "eval_attack", "seed"});
  ToyDetectorConfig tc = toy_from_json(field_or<json>(rc.config, "detector", json::object()));
  ShapesDataset full;
  std::vector<DetectionExample> train_data = load_or_generate_dataset(rc.config, rc.seed, &full);
  std::vector<DetectionExample> eval_data = train_data;
  if (rc.config.contains("eval_dataset"))
    eval_data = generate_shapes_dataset(dataset_from_json(rc.config.at("eval_dataset"))).detection;

  RecipeConfig base = recipe_from_json(field_or<json>(rc.config, "recipe", json::object()));
  json aj = field_or<json>(rc.config, "axes", json::object());
  check_known_keys(aj, {"backbone_init", "optimizer", "backbone_lr_multiplier", "schedule"});
  AblationAxes axes;
  for (const std::string& s :
       field_or(aj, "backbone_init", std::vector<std::string>{}))
    axes.backbone_init.push_back(parse_backbone_init(s));
  for (const std::string& s : field_or(aj, "optimizer", std::vector<std::string>{}))
    axes.optimizer.push_back(parse_optimizer(s));
  axes.backbone_lr_multiplier = field_or(aj, "backbone_lr_multiplier", std::vector<double>{});
  axes.schedule = field_or(aj, "schedule", std::vector<std::vector<int>>{});

  json pj = field_or<json>(rc.config, "pretrain", json::object());
  check_known_keys(pj, {"epochs", "batch_size", "lr", "weight_decay", "epsilon", "attack_steps"});
  PretrainConfig pc;
  pc.epochs = field_or(pj, "epochs", pc.epochs);
  pc.batch_size = field_or(pj, "batch_size", pc.batch_size);
  pc.lr = field_or(pj, "lr", pc.lr);
  pc.weight_decay = field_or(pj, "weight_decay", pc.weight_decay);
  pc.budget.epsilon = field_or(pj, "epsilon", pc.budget.epsilon);
  pc.attack_steps = field_or(pj, "attack_steps", pc.attack_steps);

  BackboneCheckpoint adv = pretrain_toy_backbone(PretrainMode::Adversarial, tc,
                                                 full.classification, pc,
                                                 Rng(rc.seed).derive(7).state());
  BackboneCheckpoint ben = pretrain_toy_backbone(PretrainMode::Benign, tc, full.classification,
                                                 pc, Rng(rc.seed).derive(8).state());

  AblationContext ctx;
  ctx.det_cfg = tc;
  ctx.train_data = &train_data;
  ctx.eval_data = &eval_data;
  ctx.upstream_adversarial = &adv;
  ctx.upstream_benign = &ben;
  ctx.eval_attack = attack_from_json(field_or<json>(rc.config, "eval_attack", json::object()));
  ctx.seed = rc.seed;
  ctx.workers = rc.workers;

  std::vector<AblationCell> cells = ablation_grid(base, axes, ctx);
  std::ostringstream os;
  os.precision(17);
  std::vector<RobustnessRow> rows;
  for (const AblationCell& c : cells) {
    if (c.ok) {
      RobustnessRow r = c.row;
      r.model_id = c.key;
      rows.push_back(r);
    } else {
      os << "failed " << c.key << " : " << c.error << "\n";
    }
  }
  write_robustness_rows(os, rows);
  write_text_file(rc.path("rows.txt"), os.str());
  rc.artifact("rows.txt");
}

void cmd_report(RunContext& rc) {
  check_known_keys(rc.config, {"kind", "run", "seed"});
  fs::path src = require_field<std::string>(rc.config, "run");
  bool any = false;
  std::vector<std::string> expected = {"breakdown.txt", "transfer_matrix.txt", "rows.txt",
                                       "row.txt"};
  if (fs::exists(src / "breakdown.txt")) {
    std::ifstream is(src / "breakdown.txt");
    ErrorBreakdown bd = read_breakdown(is);
    write_text_file(rc.path("pr_stages.svg"), render_pr_stages_svg(bd));
    rc.artifact("pr_stages.svg");
    any = true;
  }
  if (fs::exists(src / "transfer_matrix.txt")) {
    std::ifstream is(src / "transfer_matrix.txt");
    TransferMatrix tm = read_transfer_matrix(is);
    write_text_file(rc.path("heatmap.svg"), render_transfer_heatmap_svg(tm));
    rc.artifact("heatmap.svg");
    any = true;
  }
  for (const std::string name : {"rows.txt", "row.txt"}) {
    if (!fs::exists(src / name)) continue;
    std::ifstream is(src / name);
    std::string line;
    std::vector<RobustnessRow> rows;
    while (std::getline(is, line)) {
      // ablate output may carry "failed ..." lines before the row table
      if (line.rfind("robustness_rows", 0) == 0) {
        std::string rest((std::istreambuf_iterator<char>(is)), {});
        std::istringstream full_in(line + "\n" + rest);
        rows = read_robustness_rows(full_in);
        break;
      }
    }
    std::ostringstream os;
    os << "model benign_ap50 a_cls_ap50 a_reg_ap50 a_cwa_ap50\n";
    os.precision(17);
    for (const RobustnessRow& r : rows)
      os << r.model_id << ' ' << r.benign_ap50 << ' ' << r.a_cls_ap50 << ' ' << r.a_reg_ap50
         << ' ' << r.a_cwa_ap50 << "\n";
    write_text_file(rc.path("table.txt"), os.str());
    rc.artifact("table.txt");
    any = true;
    break;
  }
  if (!any) {
    std::string msg = "report: no renderable artifacts in " + src.string() + "; expected one of:";
    for (const std::string& e : expected) msg += " " + e;
    throw ContractViolation(msg);
  }
}

void cmd_gen_data(RunContext& rc) {
  check_known_keys(rc.config, {"kind", "dataset", "seed"});
  ShapesDataset full;
  std::vector<DetectionExample> data = load_or_generate_dataset(rc.config, rc.seed, &full);
  std::vector<PixelImage> images;
  for (const DetectionExample& e : data) images.push_back(e.image);
  {
    std::ofstream os(rc.path("images.bin"), std::ios::binary);
    write_images(os, images);
    rc.artifact("images.bin");
  }
  {
    std::ofstream os(rc.path("gt.txt"));
    for (const DetectionExample& e : data) write_gt_records(os, e.image.id, e.gt);
    rc.artifact("gt.txt");
  }
  {
    std::vector<PixelImage> crops;
    std::ostringstream labels;
    for (const ClassificationExample& e : full.classification) {
      crops.push_back(e.image);
      labels << e.image.id << ' ' << e.label << "\n";
    }
    std::ofstream os(rc.path("cls_images.bin"), std::ios::binary);
    write_images(os, crops);
    rc.artifact("cls_images.bin");
    write_text_file(rc.path("cls_labels.txt"), labels.str());
    rc.artifact("cls_labels.txt");
  }
}

// ---------------------------------------------------------------------------

int run_command(const std::string& command, const std::string& config_path,
                const std::string& out_dir, long seed_override, int workers, int eps_override) {
  json config;
  RunContext rc;
  try {
    std::ifstream is(config_path);
    if (!is) throw ContractViolation("cannot open config: " + config_path);
    is >> config;
    std::string kind = require_field<std::string>(config, "kind");
    std::string expected = command == "train-at" ? "train" : command;
    if (kind != expected)
      throw ContractViolation("config: kind is " + kind + ", command expects " + expected);
    if (seed_override >= 0) config["seed"] = static_cast<std::uint64_t>(seed_override);
    if (!config.contains("seed"))
      throw ContractViolation("config: missing required key seed (no wall-clock seeding)");
    if (eps_override >= 0) {
      if (config.contains("attack")) config["attack"]["epsilon"] = eps_override;
      if (config.contains("eval_attack")) config["eval_attack"]["epsilon"] = eps_override;
      if (config.contains("recipe")) config["recipe"]["epsilon"] = eps_override;
    }
    rc.config = config;
    rc.seed = config.at("seed").get<std::uint64_t>();
    rc.workers = workers;
    rc.manifest.command = command;
    rc.manifest.config = config;
    rc.manifest.hash = config_hash(config);
    rc.manifest.seed = rc.seed;
    rc.dir = fs::path(out_dir) / (command + "-" + rc.manifest.hash + "-" +
                                  std::to_string(rc.seed));
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    fs::create_directories(rc.dir);
    fs::remove(rc.path("FAILED"));
    auto t0 = std::chrono::steady_clock::now();
    if (command == "attack") cmd_attack(rc);
    else if (command == "train-at") cmd_train_at(rc);
    else if (command == "eval") cmd_eval(rc);
    else if (command == "transfer") cmd_transfer(rc);
    else if (command == "ablate") cmd_ablate(rc);
    else if (command == "report") cmd_report(rc);
    else if (command == "gen-data") cmd_gen_data(rc);
    else throw ContractViolation("unknown command: " + command);
    rc.manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_manifest(rc.path("manifest.json").string(), rc.manifest);
    std::cout << rc.dir.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    // schema problems discovered while executing (unknown keys, bad values)
    // are config errors, not runtime failures
    if (std::string(e.what()).rfind("config:", 0) == 0) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    }
    std::cerr << "runtime failure: " << e.what() << "\n";
    std::ofstream marker(rc.path("FAILED"));
    marker << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial robustness toolkit for object detection"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs";
  long seed = -1;
  int workers = 1, eps = -1;
  app.add_option("--config", config_path, "config file (structured text)");
  app.add_option("--seed", seed, "seed override");
  app.add_option("--out-dir", out_dir, "root directory for run outputs");
  app.add_option("--workers", workers, "worker threads for batch operations");
  app.add_option("--eps", eps, "override attack epsilon (0-255 scale)");

  for (const std::string name :
       {"attack", "train-at", "eval", "transfer", "ablate", "report", "gen-data"})
    app.add_subcommand(name)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (config_path.empty()) {
    std::cerr << "config error: --config is required\n";
    return 2;
  }
  return run_command(app.get_subcommands().front()->get_name(), config_path, out_dir, seed,
                     workers, eps);
}
