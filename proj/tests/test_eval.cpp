#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>

#include "faultdet/eval.hpp"
#include "faultdet/rng.hpp"

using namespace faultdet;

namespace {

Detection det(int img, int cls, double x1, double y1, double x2, double y2, double score) {
  Detection d;
  d.image_id = img;
  d.class_id = cls;
  d.x1 = x1;
  d.y1 = y1;
  d.x2 = x2;
  d.y2 = y2;
  d.score = score;
  return d;
}

GroundTruth gt(int img, int cls, double x1, double y1, double x2, double y2) {
  GroundTruth g;
  g.image_id = img;
  g.class_id = cls;
  g.x1 = x1;
  g.y1 = y1;
  g.x2 = x2;
  g.y2 = y2;
  return g;
}

}  // namespace

TEST_CASE("evaluate: perfect match, zero overlap, and the IoU=0.6 ladder") {
  std::vector<GroundTruth> gts{gt(0, 0, 0.2, 0.2, 0.6, 0.6)};

  SUBCASE("identical detection scores 1.0 everywhere") {
    auto r = evaluate({det(0, 0, 0.2, 0.2, 0.6, 0.6, 1.0)}, gts);
    CHECK(r.map == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.ap50 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.ap75 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.ar1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.ar10 == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("zero-overlap detection scores 0.0") {
    auto r = evaluate({det(0, 0, 0.7, 0.7, 0.9, 0.9, 1.0)}, gts);
    CHECK(r.map == 0.0);
    CHECK(r.ap50 == 0.0);
    CHECK(r.ar10 == 0.0);
  }

  SUBCASE("IoU exactly 0.6 matches thresholds .50/.55/.60 only -> mAP 0.30") {
    // gt area 0.16; detection shares 60% IoU: shrink width so inter/union = 0.6
    // det (0.2,0.2,0.5,0.6): inter = 0.3*0.4 = .12; union = .16+.12-.12 = .16
    // IoU = .75 -> not 0.6; instead use offset construction:
    // det (0.3,0.2,0.7,0.6): inter 0.3*0.4=.12, union .16*2-.12=.2, IoU=.6
    auto r = evaluate({det(0, 0, 0.3, 0.2, 0.7, 0.6, 0.9)}, gts);
    CHECK(r.map == doctest::Approx(0.30).epsilon(1e-12));
    CHECK(r.ap50 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.ap75 == 0.0);
    CHECK(r.ar1 == doctest::Approx(0.30).epsilon(1e-12));
  }
}

TEST_CASE("evaluate: metric ordering invariants on randomized inputs") {
  Rng rng(70);
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
  for (int img = 0; img < 12; ++img) {
    const int n = rng.uniform_int(1, 3);
    for (int i = 0; i < n; ++i) {
      const double x1 = rng.uniform(0.0, 0.5), y1 = rng.uniform(0.0, 0.5);
      const double x2 = x1 + rng.uniform(0.15, 0.45), y2 = y1 + rng.uniform(0.15, 0.45);
      const int cls = rng.uniform_int(0, 1);
      gts.push_back(gt(img, cls, x1, y1, std::min(1.0, x2), std::min(1.0, y2)));
      // jittered detection + one noise detection
      const double jx = 0.03 * rng.normal(), jy = 0.03 * rng.normal();
      dets.push_back(det(img, cls, std::clamp(x1 + jx, 0.0, 0.9), std::clamp(y1 + jy, 0.0, 0.9),
                         std::clamp(std::min(1.0, x2) + jx, 0.05, 1.0),
                         std::clamp(std::min(1.0, y2) + jy, 0.05, 1.0), rng.uniform(0.4, 1.0)));
      dets.push_back(det(img, rng.uniform_int(0, 1), rng.uniform(0.0, 0.4), rng.uniform(0.0, 0.4),
                         rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.0, 0.4)));
    }
  }
  auto r = evaluate(dets, gts);
  CHECK(r.ap50 >= r.map);
  CHECK(r.ar10 >= r.ar1);
  CHECK(r.map >= 0.0);
  CHECK(r.map <= 1.0);

  // invariance to input ordering
  std::vector<Detection> shuffled = dets;
  std::reverse(shuffled.begin(), shuffled.end());
  std::vector<GroundTruth> gshuffled = gts;
  std::reverse(gshuffled.begin(), gshuffled.end());
  auto r2 = evaluate(shuffled, gshuffled);
  CHECK(r2.map == r.map);
  CHECK(r2.ap50 == r.ap50);
  CHECK(r2.ar1 == r.ar1);
  CHECK(r2.ar10 == r.ar10);
}

TEST_CASE("evaluate: deterministic under equal scores, malformed boxes tallied") {
  std::vector<GroundTruth> gts{gt(0, 0, 0.1, 0.1, 0.5, 0.5), gt(1, 0, 0.2, 0.2, 0.8, 0.8)};
  std::vector<Detection> dets{
      det(1, 0, 0.2, 0.2, 0.8, 0.8, 0.7),
      det(0, 0, 0.1, 0.1, 0.5, 0.5, 0.7),  // equal score, lower image id first
      det(0, 0, 0.6, 0.1, 0.4, 0.5, 0.9),  // malformed: x1 > x2
  };
  auto r = evaluate(dets, gts);
  CHECK(r.skipped_detections == 1);
  CHECK(r.map == doctest::Approx(1.0).epsilon(1e-12));

  std::swap(dets[0], dets[1]);
  auto r2 = evaluate(dets, gts);
  CHECK(r2.map == r.map);
  CHECK(r2.ar1 == r.ar1);
}

TEST_CASE("evaluate: multi-class averaging skips classes without ground truth") {
  std::vector<GroundTruth> gts{gt(0, 1, 0.1, 0.1, 0.6, 0.6)};
  // detections of class 0 have no ground truth: ignored entirely
  auto r = evaluate({det(0, 0, 0.1, 0.1, 0.6, 0.6, 1.0), det(0, 1, 0.1, 0.1, 0.6, 0.6, 0.8)}, gts);
  CHECK(r.map == doctest::Approx(1.0).epsilon(1e-12));

  // empty ground truth: zeros
  auto rz = evaluate({det(0, 0, 0.1, 0.1, 0.6, 0.6, 1.0)}, {});
  CHECK(rz.map == 0.0);
}

TEST_CASE("detections jsonl round trip") {
  const std::string path = "/tmp/faultdet_dets_test.jsonl";
  std::vector<Detection> dets{det(3, 1, 0.125, 0.25, 0.875, 0.9921875, 0.625),
                              det(4, 0, 0.1, 0.2, 0.3, 0.4, 0.015625)};
  write_detections_jsonl(path, dets);
  auto back = read_detections_jsonl(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == 3);
  CHECK(back[0].class_id == 1);
  CHECK(back[0].x2 == dets[0].x2);
  CHECK(back[1].score == dets[1].score);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_detections_jsonl("/nonexistent/x.jsonl"), IoError);
}
