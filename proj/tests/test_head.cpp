#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "faultdet/head.hpp"
#include "test_util.hpp"

using namespace faultdet;
using namespace faultdet::testing;

namespace {

HeadConfig small_cfg() {
  HeadConfig cfg;
  cfg.num_classes = 2;
  cfg.channels = 4;
  cfg.levels = 2;
  cfg.tower_depth = 1;
  return cfg;
}

std::vector<Value> random_pyramid(Rng& rng, int channels, std::vector<std::pair<int, int>> shapes) {
  std::vector<Value> out;
  for (auto [h, w] : shapes) out.push_back(make_constant(random_tensor({channels, h, w}, rng, 0.4)));
  return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("head forward: shapes, purity, shared weights across callers") {
  Rng rng(60);
  ParamStore store;
  DetectionHead head("head", small_cfg(), store, rng);
  Binder b;
  auto pyr = random_pyramid(rng, 4, {{8, 8}, {4, 4}});

  Prediction p1 = head.forward(b, pyr);
  REQUIRE(p1.size() == 2);
  CHECK(p1[0].cls.shape() == Shape({2, 8, 8}));
  CHECK(p1[0].box.shape() == Shape({4, 8, 8}));
  CHECK(p1[0].quality.shape() == Shape({1, 8, 8}));

  // purity: same input twice gives identical outputs
  Prediction p2 = head.forward(b, pyr);
  CHECK(max_abs_diff(p1[0].cls.val(), p2[0].cls.val()) == 0.0);
  CHECK(max_abs_diff(p1[1].box.val(), p2[1].box.val()) == 0.0);

  // shared weights: an equal "teacher" pyramid produces equal predictions
  std::vector<Value> teacher_pyr;
  for (const auto& v : pyr) teacher_pyr.push_back(make_constant(v.val()));
  Prediction pt = head.forward(b, teacher_pyr);
  CHECK(max_abs_diff(p1[0].cls.val(), pt[0].cls.val()) == 0.0);
  CHECK(max_abs_diff(p1[1].quality.val(), pt[1].quality.val()) == 0.0);

  // box distances are strictly positive
  for (const auto& lv : p1)
    for (std::int64_t i = 0; i < lv.box.val().numel(); ++i) CHECK(lv.box.val()[i] > 0.0);

  // channel mismatch is a configuration error
  auto bad = random_pyramid(rng, 3, {{8, 8}, {4, 4}});
  CHECK_THROWS_AS(head.forward(b, bad), ConfigError);
}

TEST_CASE("head gradients: classification, box, and quality branches") {
  Rng rng(61);
  ParamStore store;
  DetectionHead head("head", small_cfg(), store, rng);
  auto pyr = random_pyramid(rng, 4, {{4, 4}, {2, 2}});
  std::vector<Param*> params;
  for (auto& [name, p] : store.items()) params.push_back(p);
  Rng probe(62);
  auto rep = check_gradients(params,
                             [&](Binder& b) {
                               Prediction pr = head.forward(b, pyr);
                               Value acc = mean(sigmoid(pr[0].cls));
                               acc = add(acc, mean(gelu(pr[0].box)));
                               acc = add(acc, mean(sigmoid(pr[1].quality)));
                               acc = add(acc, mean(gelu(pr[1].cls)));
                               return acc;
                             },
                             probe, 8);
  INFO("worst " << (rep.worst_param ? rep.worst_param->name : "-") << " err " << rep.max_err);
  CHECK(rep.max_err < 1e-4);
}

TEST_CASE("target assignment: level routing, center sampling, overlap rule") {
  HeadConfig cfg;
  cfg.num_classes = 2;
  cfg.levels = 4;
  std::vector<std::pair<int, int>> shapes{{16, 16}, {8, 8}, {4, 4}, {2, 2}};

  SUBCASE("small box lands on the finest level, full box on the coarsest") {
    LabelDescriptorSet s;
    s.items.push_back({0.4, 0.4, 0.55, 0.55, 0});  // extent 0.075 <= 0.1
    s.items.push_back({0.0, 0.0, 1.0, 1.0, 1});    // extent 0.5 > 0.4 -> coarsest
    auto t = assign_targets(s, shapes, cfg);
    CHECK(t[0].num_pos > 0);
    CHECK(t[1].num_pos == 0);
    CHECK(t[2].num_pos == 0);
    CHECK(t[3].num_pos > 0);
  }

  SUBCASE("every ground truth gets at least one positive") {
    LabelDescriptorSet s;
    s.items.push_back({0.301, 0.301, 0.309, 0.309, 0});  // tiny off-center box
    auto t = assign_targets(s, shapes, cfg);
    int total = 0;
    for (const auto& lt : t) total += lt.num_pos;
    CHECK(total >= 1);
  }

  SUBCASE("positive targets are consistent") {
    LabelDescriptorSet s;
    s.items.push_back({0.25, 0.25, 0.75, 0.75, 1});  // extent 0.25 -> level 3
    auto t = assign_targets(s, shapes, cfg);
    for (std::size_t l = 0; l < t.size(); ++l) {
      for (int r = 0; r < shapes[l].first; ++r)
        for (int c = 0; c < shapes[l].second; ++c) {
          if (t[l].pos->at(r, c) == 0.0) continue;
          // class one-hot and centerness in (0,1]
          CHECK(t[l].cls->at(1, r, c) == 1.0);
          CHECK(t[l].cls->at(0, r, c) == 0.0);
          CHECK(t[l].quality->at(0, r, c) > 0.0);
          CHECK(t[l].quality->at(0, r, c) <= 1.0);
          for (int d = 0; d < 4; ++d) CHECK(t[l].box->at(d, r, c) > 0.0);
        }
    }
  }

  SUBCASE("overlapping boxes: the smaller object owns the cell") {
    LabelDescriptorSet s;
    // same level (both extents in (0.2, 0.4]), sharing the center cells
    s.items.push_back({0.26, 0.26, 0.74, 0.74, 0});
    s.items.push_back({0.28, 0.28, 0.72, 0.72, 1});
    auto t = assign_targets(s, shapes, cfg);
    const auto& lt = t[2];  // extent 0.24 and 0.2 -> level 3 range (0.25,0.5]? both <=0.5
    int owned_by_1 = 0;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        if (lt.pos->at(r, c) != 0.0 && lt.cls->at(1, r, c) == 1.0) ++owned_by_1;
    CHECK(owned_by_1 > 0);
  }
}

TEST_CASE("detection loss: optimum neighborhood, empty labels, hand-computed toy") {
  HeadConfig cfg;
  cfg.num_classes = 1;
  cfg.levels = 1;

  SUBCASE("perfect prediction is near zero") {
    LabelDescriptorSet s;
    s.items.push_back({0.0, 0.0, 1.0, 1.0, 0});
    auto targets = assign_targets(s, {{4, 4}}, cfg);
    Tensor cls({1, 4, 4});
    Tensor box({4, 4, 4});
    Tensor q({1, 4, 4});
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        const bool pos = targets[0].pos->at(r, c) != 0.0;
        cls.at(0, r, c) = pos ? 30.0 : -30.0;
        const double y = targets[0].quality->at(0, r, c);
        q.at(0, r, c) = pos ? std::log(y / (1.0 - y + 1e-12)) : -30.0;
        if (pos && y >= 1.0) q.at(0, r, c) = 30.0;
        for (int d = 0; d < 4; ++d)
          box.at(d, r, c) = pos ? targets[0].box->at(d, r, c) : 0.25;
      }
    Prediction pred;
    pred.push_back({make_constant(cls), make_constant(box), make_constant(q)});
    const double loss = detection_loss(pred, s, cfg).val().item();
    CHECK(loss >= -1e-9);
    CHECK(loss < 1e-3);
  }

  SUBCASE("empty labels with strong negatives") {
    LabelDescriptorSet empty;
    Prediction pred;
    pred.push_back({make_constant(Tensor::full({1, 4, 4}, -30.0)),
                    make_constant(Tensor::full({4, 4, 4}, 0.2)),
                    make_constant(Tensor::full({1, 4, 4}, -5.0))});
    const double loss = detection_loss(pred, empty, cfg).val().item();
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-6);
  }

  SUBCASE("single-location toy matches the hand-evaluated sum") {
    LabelDescriptorSet s;
    s.items.push_back({0.0, 0.0, 1.0, 1.0, 0});
    Prediction pred;
    Tensor cls = Tensor::from({1, 1, 1}, {0.4});
    Tensor box = Tensor::from({4, 1, 1}, {0.3, 0.5, 0.5, 0.5});
    Tensor q = Tensor::from({1, 1, 1}, {0.2});
    pred.push_back({make_constant(cls), make_constant(box), make_constant(q)});
    const double loss = detection_loss(pred, s, cfg).val().item();

    const double p = sigmoid(0.4);
    const double focal = -0.25 * std::pow(1.0 - p, 2.0) * std::log(p);
    // intersection: width min(.3,.5)+min(.5,.5)=0.8, height 1.0; union 1.0
    const double iou_term = -std::log(0.8);
    const double bce = std::log1p(std::exp(0.2)) - 0.2;  // target centerness 1
    CHECK(loss == doctest::Approx(focal + iou_term + bce).epsilon(1e-9));
  }

  SUBCASE("loss decreases under gradient steps on a fixed toy batch") {
    Rng rng(63);
    ParamStore store;
    HeadConfig hc = small_cfg();
    DetectionHead head("head", hc, store, rng);
    LabelDescriptorSet s;
    s.items.push_back({0.1, 0.1, 0.6, 0.7, 0});
    auto pyr = random_pyramid(rng, 4, {{8, 8}, {4, 4}});
    double first = 0.0, last = 0.0;
    const double lr = 0.05;
    for (int step = 0; step < 25; ++step) {
      store.zero_grads();
      Binder b;
      Value loss = detection_loss(head.forward(b, pyr), s, hc);
      if (step == 0) first = loss.val().item();
      last = loss.val().item();
      backward(loss);
      b.write_grads();
      for (auto& [name, p] : store.items())
        for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value[i] -= lr * p->grad[i];
    }
    CHECK(last < first);
  }

  SUBCASE("gradcheck through the full detection loss") {
    Rng rng(64);
    ParamStore store;
    HeadConfig hc = small_cfg();
    DetectionHead head("head", hc, store, rng);
    LabelDescriptorSet s;
    s.items.push_back({0.05, 0.1, 0.5, 0.65, 1});
    s.items.push_back({0.55, 0.5, 0.9, 0.95, 0});
    auto pyr = random_pyramid(rng, 4, {{8, 8}, {4, 4}});
    std::vector<Param*> params;
    for (auto& [name, p] : store.items()) params.push_back(p);
    Rng probe(65);
    auto rep = check_gradients(
        params, [&](Binder& b) { return detection_loss(head.forward(b, pyr), s, hc); }, probe, 6);
    INFO("worst " << (rep.worst_param ? rep.worst_param->name : "-") << " err " << rep.max_err);
    CHECK(rep.max_err < 1e-4);
  }
}

TEST_CASE("decode: strong location surfaces, nms suppresses duplicates, cap applies") {
  HeadConfig cfg;
  cfg.num_classes = 2;
  cfg.levels = 1;

  Tensor cls({2, 4, 4});
  cls.fill(-10.0);
  cls.at(0, 1, 1) = 8.0;
  cls.at(1, 3, 2) = 6.0;
  Tensor box = Tensor::full({4, 4, 4}, 0.15);
  Tensor q = Tensor::full({1, 4, 4}, 4.0);
  Prediction pred;
  pred.push_back({make_constant(cls), make_constant(box), make_constant(q)});

  auto dets = decode_detections(pred, 7, cfg);
  REQUIRE(dets.size() == 2);
  CHECK(dets[0].image_id == 7);
  CHECK(dets[0].class_id == 0);
  CHECK(dets[0].score > dets[1].score);
  // cell (1,1) center (0.375, 0.375) with 0.15 distances
  CHECK(dets[0].x1 == doctest::Approx(0.375 - 0.15).epsilon(1e-12));
  CHECK(dets[0].y2 == doctest::Approx(0.375 + 0.15).epsilon(1e-12));

  // duplicate strong neighbors of the same class collapse to one box once
  // the boxes are large enough to overlap heavily
  cls.at(0, 1, 2) = 7.9;  // same row, adjacent cell
  Tensor big_box = Tensor::full({4, 4, 4}, 0.45);
  Prediction pred2;
  pred2.push_back({make_constant(cls), make_constant(big_box), make_constant(q)});
  auto dets2 = decode_detections(pred2, 7, cfg);
  int class0 = 0;
  for (const auto& d : dets2) class0 += d.class_id == 0 ? 1 : 0;
  CHECK(class0 == 1);

  // detection cap
  HeadConfig tight = cfg;
  tight.max_detections = 1;
  auto dets3 = decode_detections(pred2, 7, tight);
  CHECK(dets3.size() == 1);
}
