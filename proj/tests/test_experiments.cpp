#include <sstream>

#include "doctest.h"
#include "odr/experiments.hpp"

using namespace odr;

namespace {

ToyDetectorConfig tiny_cfg() {
  ToyDetectorConfig cfg;
  cfg.backbone_blocks = 3;
  cfg.backbone_width = 4;
  cfg.head_layers = 1;
  cfg.head_width = 4;
  return cfg;
}

std::vector<DetectionExample> tiny_dataset(std::uint64_t seed = 23) {
  ShapesDatasetSpec spec;
  spec.n_images = 4;
  spec.height = 32;
  spec.width = 32;
  spec.min_size = 8.0;
  spec.max_size = 16.0;
  spec.max_objects = 2;
  spec.seed = seed;
  return generate_shapes_dataset(spec).detection;
}

AttackSpec quick_attack() {
  AttackSpec spec;
  spec.budget.epsilon = 8;
  spec.budget.steps = 3;
  return spec;
}

bool rows_equal(const RobustnessRow& a, const RobustnessRow& b) {
  return a.model_id == b.model_id && a.benign_ap50 == b.benign_ap50 &&
         a.a_cls_ap50 == b.a_cls_ap50 && a.a_reg_ap50 == b.a_reg_ap50 &&
         a.a_cwa_ap50 == b.a_cwa_ap50 && a.has_coco == b.has_coco && a.benign_ap == b.benign_ap &&
         a.a_cls_ap == b.a_cls_ap && a.a_reg_ap == b.a_reg_ap && a.a_cwa_ap == b.a_cwa_ap;
}

}  // namespace

TEST_CASE("zero-epsilon evaluation reduces every column to the benign score") {
  auto det = build_toy_detector(tiny_cfg(), 31);
  auto data = tiny_dataset();
  AttackSpec spec = quick_attack();
  spec.budget.epsilon = 0;
  spec.budget.steps = 1;
  RobustnessRow row = evaluate_under_attack(*det, data, spec, "m0");
  CHECK(row.a_cls_ap50 == row.benign_ap50);
  CHECK(row.a_reg_ap50 == row.benign_ap50);
  CHECK(row.a_cwa_ap50 == row.benign_ap50);
}

TEST_CASE("evaluation under attack is deterministic and worker-independent") {
  auto det = build_toy_detector(tiny_cfg(), 31);
  auto data = tiny_dataset();
  RobustnessRow a = evaluate_under_attack(*det, data, quick_attack(), "m", 1);
  RobustnessRow b = evaluate_under_attack(*det, data, quick_attack(), "m", 3);
  CHECK(rows_equal(a, b));
  CHECK_THROWS(evaluate_under_attack(*det, {}, quick_attack(), "m"));
}

TEST_CASE("transfer matrix diagonal equals the white-box evaluation exactly") {
  auto m0 = build_toy_detector(tiny_cfg(), 1);
  auto m1 = build_toy_detector(tiny_cfg(), 2);
  auto data = tiny_dataset();
  AttackSpec spec = quick_attack();
  TransferMatrix tm = transfer_matrix({m0.get(), m1.get()}, {"m0", "m1"}, data, spec);
  REQUIRE(tm.ap50.size() == 2);
  const Detector* dets[2] = {m0.get(), m1.get()};
  for (int i = 0; i < 2; ++i) {
    std::vector<PixelImage> adv = adversarial_dataset(*dets[i], data, spec);
    double white_box = ap50(run_detection(*dets[i], data, &adv));
    CHECK(tm.ap50[i][i] == white_box);
  }
  CHECK_THROWS(transfer_matrix({}, {}, data, spec));
  CHECK_THROWS(transfer_matrix({m0.get()}, {"a", "b"}, data, spec));
}

TEST_CASE("robustness rows round-trip losslessly through text") {
  RobustnessRow r1;
  r1.model_id = "model_a";
  r1.benign_ap50 = 51.234567890123456;
  r1.a_cls_ap50 = 1.0 / 3.0;
  r1.a_reg_ap50 = 17.5;
  r1.a_cwa_ap50 = 0.0;
  RobustnessRow r2 = r1;
  r2.model_id = "model_b";
  r2.has_coco = true;
  r2.benign_ap = 2.0 / 7.0;
  r2.a_cls_ap = 1e-13;
  r2.a_reg_ap = 99.999999999999999;
  r2.a_cwa_ap = 42.0;

  std::stringstream ss;
  write_robustness_rows(ss, {r1, r2});
  auto back = read_robustness_rows(ss);
  REQUIRE(back.size() == 2);
  CHECK(rows_equal(back[0], r1));
  CHECK(rows_equal(back[1], r2));

  std::stringstream bad("not_rows 1\n");
  CHECK_THROWS(read_robustness_rows(bad));
}

TEST_CASE("transfer matrix round-trips losslessly through text") {
  TransferMatrix tm;
  tm.model_ids = {"alpha", "beta"};
  tm.ap50 = {{1.0 / 3.0, 12.5}, {0.1, 98.76543210987654}};
  tm.spec = quick_attack();
  tm.spec.objective = ObjectiveKind::REG;
  tm.spec.seed = 77;

  std::stringstream ss;
  write_transfer_matrix(ss, tm);
  TransferMatrix back = read_transfer_matrix(ss);
  CHECK(back.model_ids == tm.model_ids);
  CHECK(back.ap50 == tm.ap50);
  CHECK(back.spec.budget.epsilon == tm.spec.budget.epsilon);
  CHECK(back.spec.budget.steps == tm.spec.budget.steps);
  CHECK(back.spec.objective == tm.spec.objective);
  CHECK(back.spec.seed == tm.spec.seed);
}

TEST_CASE("a single-cell ablation grid equals the direct train-and-evaluate call") {
  auto train = tiny_dataset(23);
  AblationContext ctx;
  ctx.det_cfg = tiny_cfg();
  ctx.train_data = &train;
  ctx.eval_data = &train;
  ctx.eval_attack = quick_attack();
  ctx.seed = 9;

  RecipeConfig base;
  base.replay_m = 1;
  base.epochs_equivalent = 2;
  base.batch_size = 4;
  base.base_lr = 1e-3;
  base.backbone_lr_multiplier = 1.0;
  base.lr_decay_points = {};
  base.budget.epsilon = 4;
  base.backbone_init = BackboneInit::Random;

  auto cells = ablation_grid(base, AblationAxes{}, ctx);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].ok);
  RobustnessRow direct = train_and_evaluate(base, ctx, cells[0].key);
  CHECK(rows_equal(cells[0].row, direct));
}

TEST_CASE("ablation grid records per-cell failures and keeps going") {
  auto train = tiny_dataset(23);
  AblationContext ctx;  // no pretrained checkpoints provided
  ctx.det_cfg = tiny_cfg();
  ctx.train_data = &train;
  ctx.eval_data = &train;
  ctx.eval_attack = quick_attack();
  ctx.seed = 9;

  RecipeConfig base;
  base.replay_m = 1;
  base.epochs_equivalent = 1;
  base.batch_size = 4;
  base.base_lr = 1e-3;
  base.backbone_lr_multiplier = 1.0;
  base.lr_decay_points = {};
  base.budget.epsilon = 4;

  AblationAxes axes;
  axes.backbone_init = {BackboneInit::UpstreamAdversarial, BackboneInit::Random};
  auto cells = ablation_grid(base, axes, ctx);
  REQUIRE(cells.size() == 2);
  CHECK(!cells[0].ok);  // missing checkpoint for the upstream init
  CHECK(cells[0].error.find("no checkpoint") != std::string::npos);
  CHECK(cells[1].ok);
  CHECK(cells[0].key != cells[1].key);
  CHECK(cells[1].key.find("init=random") != std::string::npos);
}
