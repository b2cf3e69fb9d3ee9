#pragma once

#include <string>
#include <vector>

#include "faultdet/head.hpp"

namespace faultdet {

struct GroundTruth {
  int image_id = 0;
  int class_id = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

struct EvalResult {
  double map = 0.0;   // AP averaged over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ar1 = 0.0;   // max recall with 1 detection per image
  double ar10 = 0.0;  // max recall with 10 detections per image
  int skipped_detections = 0;
};

// COCO-protocol evaluation: greedy score-descending matching per IoU
// threshold, 101-point interpolated AP averaged over classes (those with
// ground truth) and thresholds. Deterministic under input reordering: ties
// break on lower image id, then lexicographic box.
EvalResult evaluate(const std::vector<Detection>& detections, const std::vector<GroundTruth>& gts);

// JSON-lines export of decoded detections for offline re-scoring.
void write_detections_jsonl(const std::string& path, const std::vector<Detection>& detections);
std::vector<Detection> read_detections_jsonl(const std::string& path);

}  // namespace faultdet
