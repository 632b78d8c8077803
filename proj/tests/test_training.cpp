#include <cstdio>

#include "doctest.h"
#include "odr/training.hpp"
#include "odr/toydet.hpp"

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

std::vector<DetectionExample> tiny_dataset() {
  ShapesDatasetSpec spec;
  spec.n_images = 6;
  spec.height = 32;
  spec.width = 32;
  spec.min_size = 8.0;
  spec.max_size = 16.0;
  spec.max_objects = 2;
  spec.seed = 13;
  return generate_shapes_dataset(spec).detection;
}

bool params_equal(const std::vector<Param>& a, const std::vector<Param>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].value.size() != b[i].value.size()) return false;
    for (std::size_t j = 0; j < a[i].value.size(); ++j)
      if (a[i].value[j] != b[i].value[j]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("backbone init parsing round-trip") {
  for (BackboneInit b : {BackboneInit::UpstreamAdversarial, BackboneInit::UpstreamBenign,
                         BackboneInit::DownstreamBenign, BackboneInit::Random})
    CHECK(parse_backbone_init(to_string(b)) == b);
  CHECK_THROWS(parse_backbone_init("nope"));
}

TEST_CASE("parameter groups and effective learning rates") {
  auto det = build_toy_detector(tiny_cfg(), 1);
  RecipeConfig rc;
  rc.base_lr = 1e-4;
  rc.backbone_lr_multiplier = 0.1;

  auto groups = build_param_groups(*det, rc);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].group == "backbone");
  CHECK(groups[0].effective_lr == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(!groups[0].frozen);
  CHECK(groups[1].effective_lr == 1e-4);
  long bb = 0, hd = 0;
  toy_param_count(tiny_cfg(), &bb, &hd);
  CHECK(groups[0].n_params == bb);
  CHECK(groups[1].n_params == hd);

  rc.backbone_lr_multiplier = 0.0;
  auto frozen = build_param_groups(*det, rc);
  CHECK(frozen[0].frozen);
  auto lrs = effective_lrs(*det, rc);
  REQUIRE(lrs.size() == det->params().size());
  for (std::size_t i = 0; i < lrs.size(); ++i) {
    if (det->params()[i].group == "backbone") CHECK(lrs[i] == -1.0);
    else CHECK(lrs[i] == 1e-4);
  }

  det->params()[0].group = "mystery";
  CHECK_THROWS(build_param_groups(*det, rc));
}

TEST_CASE("recipe validation") {
  RecipeConfig rc;
  rc.replay_m = 4;
  rc.epochs_equivalent = 10;  // not a multiple of m
  CHECK_THROWS(rc.validate());
  rc.epochs_equivalent = 12;
  CHECK_NOTHROW(rc.validate());
  rc.backbone_lr_multiplier = 1.5;
  CHECK_THROWS(rc.validate());
}

TEST_CASE("free replay training performs exactly m updates per minibatch") {
  auto data = tiny_dataset();
  for (int m : {1, 2, 4}) {
    auto det = build_toy_detector(tiny_cfg(), 5);
    RecipeConfig rc;
    rc.replay_m = m;
    rc.epochs_equivalent = 2 * m;  // two outer epochs
    rc.batch_size = 4;             // 6 images -> 2 minibatches per epoch
    rc.base_lr = 1e-4;
    rc.budget.epsilon = 8;
    rc.lr_decay_points = {};
    TrainState st = free_at_train(*det, data, rc, 1);
    CHECK(st.epoch == 2);
    CHECK(st.minibatches == 4);
    CHECK(st.param_updates == 4 * m);
    CHECK(st.delta_updates == 4 * m);
    // one shared backward per image per replay for the combined objective
    CHECK(st.grad_computations == 2 * m * 6);
    CHECK(st.delta.max_abs() <= 8.0 / 255.0 + 1e-15);
  }
}

TEST_CASE("free training with m=1, eps=0 equals standard training bit-exactly") {
  auto data = tiny_dataset();
  RecipeConfig rc;
  rc.replay_m = 1;
  rc.epochs_equivalent = 3;
  rc.batch_size = 4;
  rc.base_lr = 1e-3;
  rc.budget.epsilon = 0;
  rc.lr_decay_points = {};
  rc.backbone_lr_multiplier = 1.0;

  auto a = build_toy_detector(tiny_cfg(), 7);
  auto b = build_toy_detector(tiny_cfg(), 7);
  TrainState sa = free_at_train(*a, data, rc, 21);
  TrainState sb = pgd_at_train(*b, data, rc, /*inner_steps=*/0, /*inner_alpha=*/0.0, 21);
  CHECK(params_equal(a->params(), b->params()));
  CHECK(sa.param_updates == sb.param_updates);
  CHECK(sa.minibatches == sb.minibatches);
}

TEST_CASE("multiplier zero freezes the backbone bit-exactly") {
  auto data = tiny_dataset();
  auto det = build_toy_detector(tiny_cfg(), 3);
  std::vector<Param> before = det->params();
  RecipeConfig rc;
  rc.replay_m = 2;
  rc.epochs_equivalent = 2;
  rc.batch_size = 4;
  rc.base_lr = 1e-3;
  rc.backbone_lr_multiplier = 0.0;
  rc.lr_decay_points = {};
  free_at_train(*det, data, rc, 2);
  bool head_changed = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i].group == "backbone") {
      for (std::size_t j = 0; j < before[i].value.size(); ++j)
        CHECK(before[i].value[j] == det->params()[i].value[j]);
    } else {
      for (std::size_t j = 0; j < before[i].value.size(); ++j)
        if (before[i].value[j] != det->params()[i].value[j]) head_changed = true;
    }
  }
  CHECK(head_changed);
}

TEST_CASE("checkpointed resume reproduces an uninterrupted run bit-exactly") {
  auto data = tiny_dataset();
  RecipeConfig rc;
  rc.replay_m = 2;
  rc.epochs_equivalent = 8;
  rc.batch_size = 4;
  rc.base_lr = 1e-3;
  rc.budget.epsilon = 8;
  rc.lr_decay_points = {4, 6};

  auto full = build_toy_detector(tiny_cfg(), 11);
  TrainState full_state = free_at_train(*full, data, rc, 33);

  // same run split in half around a save/load cycle
  auto part = build_toy_detector(tiny_cfg(), 11);
  RecipeConfig half = rc;
  half.epochs_equivalent = 4;
  TrainState mid = free_at_train(*part, data, half, 33);
  std::string path = "resume_ckpt.bin";
  save_train_checkpoint(path, *part, mid, rc);

  auto resumed = build_toy_detector(tiny_cfg(), 999);  // weights overwritten by the load
  TrainState loaded;
  RecipeConfig loaded_rc = load_train_checkpoint(path, *resumed, loaded);
  CHECK(loaded_rc.epochs_equivalent == rc.epochs_equivalent);
  CHECK(loaded.epoch == mid.epoch);
  TrainState done = free_at_train(*resumed, data, loaded_rc, loaded.seed, &loaded);
  std::remove(path.c_str());

  CHECK(params_equal(full->params(), resumed->params()));
  CHECK(done.param_updates == full_state.param_updates);
  CHECK(done.delta_updates == full_state.delta_updates);
  CHECK(done.grad_computations == full_state.grad_computations);
  for (std::size_t i = 0; i < full_state.delta.size(); ++i)
    CHECK(done.delta[i] == full_state.delta[i]);
}

TEST_CASE("recipe text round-trip preserves every field") {
  RecipeConfig rc;
  rc.replay_m = 3;
  rc.epochs_equivalent = 9;
  rc.base_lr = 0.00123;
  rc.backbone_lr_multiplier = 0.25;
  rc.weight_decay = 5e-5;
  rc.optimizer = OptimizerKind::MomentumSgd;
  rc.lr_decay_points = {5, 7, 8};
  rc.lr_decay_factor = 0.5;
  rc.budget.epsilon = 4;
  rc.budget.alpha_fraction = 0.5;
  rc.budget.steps = 10;
  rc.objective = ObjectiveKind::MTD;
  rc.backbone_init = BackboneInit::DownstreamBenign;
  rc.batch_size = 3;
  RecipeConfig back = recipe_from_text(recipe_to_text(rc));
  CHECK(back.replay_m == rc.replay_m);
  CHECK(back.epochs_equivalent == rc.epochs_equivalent);
  CHECK(back.base_lr == rc.base_lr);
  CHECK(back.backbone_lr_multiplier == rc.backbone_lr_multiplier);
  CHECK(back.weight_decay == rc.weight_decay);
  CHECK(back.optimizer == rc.optimizer);
  CHECK(back.lr_decay_points == rc.lr_decay_points);
  CHECK(back.lr_decay_factor == rc.lr_decay_factor);
  CHECK(back.budget.epsilon == rc.budget.epsilon);
  CHECK(back.budget.alpha_fraction == rc.budget.alpha_fraction);
  CHECK(back.budget.steps == rc.budget.steps);
  CHECK(back.objective == rc.objective);
  CHECK(back.backbone_init == rc.backbone_init);
  CHECK(back.batch_size == rc.batch_size);
  CHECK_THROWS(recipe_from_text("bogus_key 1\n"));
}

TEST_CASE("backbone checkpoint loading reports every problem at once") {
  auto det = build_toy_detector(tiny_cfg(), 1);
  auto donor = build_toy_detector(tiny_cfg(), 2);
  std::vector<Param> good;
  for (const Param& p : donor->params())
    if (p.group == "backbone") good.push_back(p);

  SUBCASE("clean load replaces backbone weights only") {
    std::vector<Param> head_before;
    for (const Param& p : det->params())
      if (p.group == "head") head_before.push_back(p);
    std::string prov = load_backbone_checkpoint(*det, good, BackboneInit::UpstreamAdversarial);
    CHECK(prov == "upstream_adversarial");
    std::size_t g = 0, h = 0;
    for (const Param& p : det->params()) {
      if (p.group == "backbone") {
        for (std::size_t j = 0; j < p.value.size(); ++j)
          CHECK(p.value[j] == good[g].value[j]);
        g++;
      } else {
        for (std::size_t j = 0; j < p.value.size(); ++j)
          CHECK(p.value[j] == head_before[h].value[j]);
        h++;
      }
    }
  }
  SUBCASE("random init is a parameter no-op") {
    std::vector<Param> before = det->params();
    load_backbone_checkpoint(*det, good, BackboneInit::Random);
    CHECK(params_equal(before, det->params()));
  }
  SUBCASE("missing and mismatched parameters are all listed") {
    std::vector<Param> broken = good;
    broken[1].value = Tensor({1});  // shape mismatch
    std::string dropped = broken[0].name;
    std::string mismatched = broken[1].name;
    broken.erase(broken.begin());  // missing
    try {
      load_backbone_checkpoint(*det, broken, BackboneInit::UpstreamBenign);
      FAIL("expected an error");
    } catch (const ContractViolation& e) {
      std::string msg = e.what();
      CHECK(msg.find("missing " + dropped) != std::string::npos);
      CHECK(msg.find("shape mismatch " + mismatched) != std::string::npos);
    }
  }
}
