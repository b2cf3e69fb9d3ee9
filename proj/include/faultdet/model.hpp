#pragma once

#include <memory>

#include "faultdet/adaptor.hpp"
#include "faultdet/backbone.hpp"
#include "faultdet/head.hpp"
#include "faultdet/interaction.hpp"

namespace faultdet {

struct ModelConfig {
  int image_size = 256;  // resolution the per-level adaptor weights are built for
  int num_classes = 2;
  int fpn_channels = 64;
  int shift_size = 5;
  int dilation = 1;
  int heads = 4;
  int segments = 4;
  bool weighted_aggregation = false;
  int tower_depth = 2;
  std::vector<StageConfig> stages;  // empty -> default ladder

  void finalize();
  int levels() const { return static_cast<int>(stages.size()); }
  std::vector<std::pair<int, int>> level_shapes() const;
  HeadConfig head_config() const;
};

// The student detector plus the jointly trained dynamic teacher. The teacher
// turns ground-truth labels and (detached) student pyramid features into
// instructive 2-D maps; a single shared head scores both branches.
class Model {
 public:
  explicit Model(const ModelConfig& cfg, std::uint64_t init_seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // student path
  std::vector<Value> student_pyramid(Binder& b, const Tensor& image);
  Prediction predict(Binder& b, const std::vector<Value>& pyramid);

  // teacher path: builds instructive maps from labels + detached pyramid
  std::vector<Value> teacher_features(Binder& b, const std::vector<Value>& pyramid,
                                      const LabelDescriptorSet& labels);
  // student-side adaptation toward the teacher's feature space
  std::vector<Value> adapted_student(Binder& b, const std::vector<Value>& pyramid);

  const HeadConfig& head_config() const { return head_->config(); }
  std::int64_t teacher_invocations() const;

  Backbone& backbone() { return *backbone_; }

  // parameter-count bookkeeping for reports
  std::int64_t total_parameters() const { return store_.total_count(); }
  std::int64_t parameters_with_prefix(const std::string& p) const {
    return store_.count_with_prefix(p);
  }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<Fpn> fpn_;
  std::unique_ptr<LabelEncoder> label_encoder_;
  std::unique_ptr<AppearanceEncoder> appearance_;
  std::unique_ptr<InteractionEncoder> interaction_;
  std::vector<std::unique_ptr<PermuteEncoder>> permute_;
  std::vector<std::unique_ptr<StudentAdaptor>> student_adapt_;
  std::unique_ptr<DetectionHead> head_;
};

}  // namespace faultdet
