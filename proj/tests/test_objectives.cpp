#include <algorithm>

#include "doctest.h"
#include "odr/objectives.hpp"
#include "odr/tensor.hpp"

using namespace odr;

TEST_CASE("objective kind string round-trip") {
  for (ObjectiveKind k : {ObjectiveKind::CLS, ObjectiveKind::REG, ObjectiveKind::VANILLA,
                          ObjectiveKind::CWA, ObjectiveKind::MTD})
    CHECK(parse_objective(to_string(k)) == k);
  CHECK_THROWS(parse_objective("bogus"));
}

TEST_CASE("class weights: frozen fixtures") {
  CHECK(cwa_weights({7}).weights == std::vector<double>{1.0});
  CHECK(cwa_weights({3, 3}).weights == std::vector<double>{1.0, 1.0});

  // two of class a, one of class b: raw (0.5, 0.5, 1), rescaled to sum 3
  auto w = cwa_weights({0, 0, 1}).weights;
  REQUIRE(w.size() == 3);
  CHECK(w[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(1.5).epsilon(1e-12));

  CHECK_THROWS(cwa_weights({}));
}

TEST_CASE("class weights always sum to K and are positive") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    int k = static_cast<int>(rng.uniform_int(1, 8));
    std::vector<int> labels;
    for (int i = 0; i < k; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, 3)));
    auto w = cwa_weights(labels).weights;
    double sum = 0.0;
    for (double v : w) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(k).epsilon(1e-12));
  }
}

namespace {

PerInstanceLosses make_losses(std::vector<double> cls, std::vector<double> reg) {
  PerInstanceLosses l;
  l.cls = std::move(cls);
  l.reg = std::move(reg);
  return l;
}

}  // namespace

TEST_CASE("objective values: frozen fixtures") {
  auto single = make_losses({2}, {3});
  CHECK(objective_value(ObjectiveKind::CLS, single) == 2.0);
  CHECK(objective_value(ObjectiveKind::REG, single) == 3.0);
  CHECK(objective_value(ObjectiveKind::VANILLA, single) == 5.0);
  CHECK(objective_value(ObjectiveKind::MTD, single) == 3.0);

  // max(1,3) + max(4,2) = 7
  auto pair = make_losses({1, 4}, {3, 2});
  CHECK(objective_value(ObjectiveKind::MTD, pair) == 7.0);

  // CWA composed with the (0.75, 0.75, 1.5) weights
  auto triple = make_losses({1, 1, 1}, {0, 0, 0});
  auto w = cwa_weights({0, 0, 1});
  CHECK(objective_value(ObjectiveKind::CWA, triple, &w) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("objective errors") {
  auto l = make_losses({1, 2}, {3, 4});
  CHECK_THROWS(objective_value(ObjectiveKind::CWA, l));  // weights required
  ClassWeightVector short_w;
  short_w.weights = {1.0};
  CHECK_THROWS(objective_value(ObjectiveKind::CWA, l, &short_w));
  auto mismatched = make_losses({1}, {2, 3});
  CHECK_THROWS(objective_value(ObjectiveKind::CLS, mismatched));
  auto empty = make_losses({}, {});
  CHECK_THROWS(objective_value(ObjectiveKind::CLS, empty));
  auto negative = make_losses({-1}, {0});
  CHECK_THROWS(objective_value(ObjectiveKind::CLS, negative));
}

TEST_CASE("CWA equals VANILLA for balanced classes") {
  auto l = make_losses({1.5, 0.25, 2.0, 0.5}, {0.75, 1.25, 0.0, 3.0});
  auto w = cwa_weights({0, 1, 0, 1});
  CHECK(objective_value(ObjectiveKind::CWA, l, &w) ==
        doctest::Approx(objective_value(ObjectiveKind::VANILLA, l)).epsilon(1e-12));
}

TEST_CASE("objective bounds and permutation invariance") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    int k = static_cast<int>(rng.uniform_int(1, 6));
    PerInstanceLosses l;
    std::vector<int> labels;
    for (int i = 0; i < k; ++i) {
      l.cls.push_back(rng.uniform(0, 4));
      l.reg.push_back(rng.uniform(0, 4));
      labels.push_back(static_cast<int>(rng.uniform_int(0, 2)));
    }
    double v_cls = objective_value(ObjectiveKind::CLS, l);
    double v_reg = objective_value(ObjectiveKind::REG, l);
    double v_van = objective_value(ObjectiveKind::VANILLA, l);
    double v_mtd = objective_value(ObjectiveKind::MTD, l);
    CHECK(v_mtd <= v_van + 1e-12);
    CHECK(v_mtd >= v_cls - 1e-12);
    CHECK(v_mtd >= v_reg - 1e-12);

    // permute instances together with labels
    std::vector<int> idx(k);
    for (int i = 0; i < k; ++i) idx[i] = i;
    rng.shuffle(idx);
    PerInstanceLosses p;
    std::vector<int> plabels;
    for (int i : idx) {
      p.cls.push_back(l.cls[i]);
      p.reg.push_back(l.reg[i]);
      plabels.push_back(labels[i]);
    }
    auto w = cwa_weights(labels);
    auto pw = cwa_weights(plabels);
    for (ObjectiveKind kind : {ObjectiveKind::CLS, ObjectiveKind::REG, ObjectiveKind::VANILLA,
                               ObjectiveKind::MTD})
      CHECK(objective_value(kind, l) == doctest::Approx(objective_value(kind, p)).epsilon(1e-12));
    CHECK(objective_value(ObjectiveKind::CWA, l, &w) ==
          doctest::Approx(objective_value(ObjectiveKind::CWA, p, &pw)).epsilon(1e-12));
  }
}

TEST_CASE("MTD gradient routing follows the larger term, ties go to cls") {
  std::vector<double> wc, wr;
  auto l = make_losses({1, 4, 2}, {3, 2, 2});
  objective_seed(ObjectiveKind::MTD, l, nullptr, wc, wr);
  CHECK(wc == std::vector<double>{0, 1, 1});  // tie at index 2 routes to cls
  CHECK(wr == std::vector<double>{1, 0, 0});
}
