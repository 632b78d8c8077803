#include <sstream>

#include "doctest.h"
#include "odr/core.hpp"

using namespace odr;

namespace {

PixelImage uniform_image(int c, int h, int w, double v, const std::string& id = "img") {
  Tensor t({c, h, w});
  t.fill(v);
  return PixelImage(std::move(t), id);
}

}  // namespace

TEST_CASE("pixel image validation") {
  CHECK_NOTHROW(uniform_image(3, 4, 4, 0.5));
  CHECK_NOTHROW(uniform_image(1, 1, 1, 1.0));
  CHECK_THROWS(uniform_image(2, 4, 4, 0.5));   // channels must be 1 or 3
  CHECK_THROWS(uniform_image(3, 4, 4, 1.5));   // out of range
  CHECK_THROWS(uniform_image(3, 4, 4, -0.1));
  Tensor nan_t({1, 2, 2});
  nan_t[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(PixelImage(std::move(nan_t), "x"));
}

TEST_CASE("ground truth validation") {
  GroundTruthSet gt;
  gt.boxes.push_back({1, 1, 5, 5});
  gt.labels.push_back(0);
  CHECK_NOTHROW(gt.validate(10, 10));
  gt.boxes.push_back({5, 5, 5, 9});  // degenerate
  gt.labels.push_back(1);
  CHECK_THROWS(gt.validate(10, 10));
  gt.boxes[1] = {2, 2, 12, 4};  // out of bounds
  CHECK_THROWS(gt.validate(10, 10));
  gt.boxes[1] = {2, 2, 9, 4};
  CHECK_NOTHROW(gt.validate(10, 10));
  gt.labels.pop_back();
  CHECK_THROWS(gt.validate(10, 10));
}

TEST_CASE("attack budget validation and scaling") {
  AttackBudget b;
  CHECK(b.epsilon == 8);
  CHECK(b.alpha_fraction == 0.25);
  CHECK(b.steps == 20);
  CHECK_NOTHROW(b.validate());
  CHECK(b.eps01() == doctest::Approx(8.0 / 255.0).epsilon(1e-15));
  // eps=8, alpha_fraction=1/4 -> alpha = 2/255
  CHECK(b.alpha01() == doctest::Approx(2.0 / 255.0).epsilon(1e-15));

  AttackBudget bad = b;
  bad.epsilon = 256;
  CHECK_THROWS(bad.validate());
  bad = b;
  bad.epsilon = -1;
  CHECK_THROWS(bad.validate());
  bad = b;
  bad.steps = 0;
  CHECK_THROWS(bad.validate());
  bad = b;
  bad.alpha_fraction = 0.0;
  CHECK_THROWS(bad.validate());
  bad = b;
  bad.epsilon = 0;
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("projection: frozen examples") {
  PixelImage x = uniform_image(1, 2, 2, 0.5);
  AttackBudget budget;  // eps 8

  SUBCASE("all-zero delta stays zero") {
    Perturbation d{Tensor::zeros_like(x.data)};
    Perturbation p = project_to_budget(d, x, budget);
    for (std::size_t i = 0; i < p.delta.size(); ++i) CHECK(p.delta[i] == 0.0);
  }
  SUBCASE("interior pixel clamps to eps/255") {
    Perturbation d{Tensor::zeros_like(x.data)};
    d.delta[0] = 0.1;
    Perturbation p = project_to_budget(d, x, budget);
    CHECK(p.delta[0] == doctest::Approx(8.0 / 255.0).epsilon(1e-15));
  }
  SUBCASE("pixel-range clamp dominates at x=1") {
    PixelImage ones = uniform_image(1, 2, 2, 1.0);
    Perturbation d{Tensor::zeros_like(ones.data)};
    d.delta[0] = 0.02;
    Perturbation p = project_to_budget(d, ones, budget);
    CHECK(p.delta[0] == 0.0);
  }
  SUBCASE("shape mismatch throws") {
    Perturbation d{Tensor({1, 3, 3})};
    CHECK_THROWS(project_to_budget(d, x, budget));
  }
}

TEST_CASE("projection idempotence over randomized deltas") {
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    int eps = static_cast<int>(rng.uniform_int(0, 32));
    AttackBudget budget;
    budget.epsilon = eps;
    int h = static_cast<int>(rng.uniform_int(1, 6));
    int w = static_cast<int>(rng.uniform_int(1, 6));
    Tensor img({1, h, w});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    PixelImage x(std::move(img), "t");
    Perturbation d{Tensor::zeros_like(x.data)};
    for (std::size_t i = 0; i < d.delta.size(); ++i) d.delta[i] = rng.uniform(-0.5, 0.5);
    Perturbation once = project_to_budget(d, x, budget);
    Perturbation twice = project_to_budget(once, x, budget);
    for (std::size_t i = 0; i < once.delta.size(); ++i) CHECK(once.delta[i] == twice.delta[i]);
    // both invariants hold
    for (std::size_t i = 0; i < once.delta.size(); ++i) {
      CHECK(std::fabs(once.delta[i]) <= budget.eps01() + 1e-15);
      double v = x.data[i] + once.delta[i];
      CHECK(v >= -1e-15);
      CHECK(v <= 1.0 + 1e-15);
    }
  }
}

TEST_CASE("apply_perturbation") {
  PixelImage x = uniform_image(1, 2, 2, 0.5);
  AttackBudget budget;

  SUBCASE("zero delta is the identity") {
    Perturbation d{Tensor::zeros_like(x.data)};
    PixelImage y = apply_perturbation(x, d, budget);
    for (std::size_t i = 0; i < y.data.size(); ++i) CHECK(y.data[i] == x.data[i]);
    CHECK(y.id == x.id);
  }
  SUBCASE("uniform shift by 8/255") {
    Perturbation d{Tensor::zeros_like(x.data)};
    d.delta.fill(8.0 / 255.0);
    PixelImage y = apply_perturbation(x, d, budget);
    for (std::size_t i = 0; i < y.data.size(); ++i)
      CHECK(y.data[i] == doctest::Approx(0.5 + 8.0 / 255.0).epsilon(1e-15));
  }
  SUBCASE("seeded random delta equals elementwise recomputation") {
    Rng rng(77);
    Perturbation d{Tensor::zeros_like(x.data)};
    for (std::size_t i = 0; i < d.delta.size(); ++i)
      d.delta[i] = rng.uniform(-budget.eps01(), budget.eps01());
    d = project_to_budget(d, x, budget);
    PixelImage y = apply_perturbation(x, d, budget);
    for (std::size_t i = 0; i < y.data.size(); ++i)
      CHECK(y.data[i] == std::clamp(x.data[i] + d.delta[i], 0.0, 1.0));
  }
  SUBCASE("budget violation rejected") {
    Perturbation d{Tensor::zeros_like(x.data)};
    d.delta[0] = 0.1;  // > 8/255
    CHECK_THROWS(apply_perturbation(x, d, budget));
  }
  SUBCASE("range violation rejected") {
    PixelImage lo = uniform_image(1, 2, 2, 0.01);
    AttackBudget wide;
    wide.epsilon = 32;
    Perturbation d{Tensor::zeros_like(lo.data)};
    d.delta.fill(-0.05);
    CHECK_THROWS(apply_perturbation(lo, d, wide));
  }
}

TEST_CASE("gt and detection record round-trip") {
  GroundTruthSet gt;
  gt.boxes = {{1.25, 2.5, 10.75, 20.125}, {0, 0, 5, 5}};
  gt.labels = {2, 0};
  DetectionSet det;
  det.boxes = {{3.5, 4.5, 9.5, 11.5}};
  det.labels = {1};
  det.scores = {0.625};

  std::ostringstream gos, dos_;
  write_gt_records(gos, "im0", gt);
  write_det_records(dos_, "im0", det);

  std::istringstream gis(gos.str()), dis(dos_.str());
  auto gts = read_gt_records(gis);
  auto dets = read_det_records(dis);
  REQUIRE(gts.count("im0") == 1);
  REQUIRE(dets.count("im0") == 1);
  CHECK(gts["im0"].K() == 2);
  CHECK(gts["im0"].boxes[0].xmin == 1.25);
  CHECK(gts["im0"].boxes[1].ymax == 5.0);
  CHECK(gts["im0"].labels[0] == 2);
  CHECK(dets["im0"].scores[0] == 0.625);
  CHECK(dets["im0"].boxes[0].ymax == 11.5);

  std::istringstream bad("im0 not-a-number 1 2 3 4\n");
  CHECK_THROWS(read_gt_records(bad));
}

TEST_CASE("image container round-trip is lossless") {
  Rng rng(3);
  std::vector<PixelImage> imgs;
  for (int n = 0; n < 3; ++n) {
    Tensor t({3, 4, 5});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
    imgs.emplace_back(std::move(t), "image_" + std::to_string(n));
  }
  std::stringstream ss;
  write_images(ss, imgs);
  auto back = read_images(ss);
  REQUIRE(back.size() == imgs.size());
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    CHECK(back[n].id == imgs[n].id);
    REQUIRE(back[n].data.same_shape(imgs[n].data));
    for (std::size_t i = 0; i < imgs[n].data.size(); ++i)
      CHECK(back[n].data[i] == imgs[n].data[i]);
  }
  std::istringstream junk("nonsense");
  CHECK_THROWS(read_images(junk));
}
