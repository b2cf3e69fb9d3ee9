#pragma once

#include <utility>
#include <vector>

#include "faultdet/labels.hpp"
#include "faultdet/ops.hpp"
#include "faultdet/param.hpp"

namespace faultdet {

struct HeadConfig {
  int num_classes = 2;
  int channels = 64;
  int levels = 4;
  int tower_depth = 2;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double center_radius = 1.5;  // center-sampling radius in cells
  double score_floor = 0.05;
  double nms_iou = 0.6;
  int max_detections = 100;
};

// Per-level dense outputs. Box channels are positive side distances
// (left/top/right/bottom) in normalized image units.
struct LevelPrediction {
  Value cls;      // (K, H, W)
  Value box;      // (4, H, W)
  Value quality;  // (1, H, W)
};
using Prediction = std::vector<LevelPrediction>;

// Anchor-free detection head shared across pyramid levels and across the
// teacher/student branches: one parameter set, any number of callers.
class DetectionHead {
 public:
  DetectionHead(const std::string& prefix, const HeadConfig& cfg, ParamStore& store, Rng& rng);
  DetectionHead(const DetectionHead&) = delete;
  DetectionHead& operator=(const DetectionHead&) = delete;

  Prediction forward(Binder& b, const std::vector<Value>& pyramid);
  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  struct TowerLayer {
    Param w, bias, ln_g, ln_b;
  };
  std::vector<std::unique_ptr<TowerLayer>> tower_;
  Param cls_w_, cls_b_, box_w_, box_b_, q_w_, q_b_;
  std::vector<std::unique_ptr<Param>> level_scale_;  // log-scale per level
};

// Ground-truth assignment for one image (no gradients involved).
struct LevelTargets {
  std::shared_ptr<Tensor> cls;      // (K, H, W)
  std::shared_ptr<Tensor> box;      // (4, H, W)
  std::shared_ptr<Tensor> quality;  // (1, H, W)
  std::shared_ptr<Tensor> pos;      // (H, W)
  int num_pos = 0;
};

std::vector<LevelTargets> assign_targets(const LabelDescriptorSet& labels,
                                         const std::vector<std::pair<int, int>>& level_shapes,
                                         const HeadConfig& cfg);

// Focal classification + IoU box regression + quality BCE, averaged over
// assigned locations (pure negative-class focal loss when there are none).
Value detection_loss(const Prediction& pred, const LabelDescriptorSet& labels,
                     const HeadConfig& cfg);

struct Detection {
  int image_id = 0;
  int class_id = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double score = 0;
};

// Dense-to-sparse decoding with class-wise greedy NMS.
std::vector<Detection> decode_detections(const Prediction& pred, int image_id,
                                         const HeadConfig& cfg);

double box_iou(double ax1, double ay1, double ax2, double ay2, double bx1, double by1, double bx2,
               double by2);

}  // namespace faultdet
