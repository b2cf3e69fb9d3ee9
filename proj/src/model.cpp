#include "faultdet/model.hpp"

namespace faultdet {

void ModelConfig::finalize() {
  if (stages.empty()) stages = default_stage_configs(shift_size, dilation);
  int reduction = 1;
  for (const auto& s : stages) reduction *= s.patch_merge;
  if (image_size <= 0 || image_size % reduction != 0)
    throw ConfigError("ModelConfig: image size " + std::to_string(image_size) +
                      " must be divisible by " + std::to_string(reduction));
  if (fpn_channels <= 0) throw ConfigError("ModelConfig: fpn channel width must be positive");
  if (num_classes < 1) throw ConfigError("ModelConfig: need at least one class");
}

std::vector<std::pair<int, int>> ModelConfig::level_shapes() const {
  std::vector<std::pair<int, int>> out;
  int size = image_size;
  for (const auto& s : stages) {
    size /= s.patch_merge;
    out.emplace_back(size, size);
  }
  return out;
}

HeadConfig ModelConfig::head_config() const {
  HeadConfig h;
  h.num_classes = num_classes;
  h.channels = fpn_channels;
  h.levels = levels();
  h.tower_depth = tower_depth;
  return h;
}

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.finalize();
  Rng rng(Rng::mix(init_seed, 0x6d6f64656cULL));
  backbone_ = std::make_unique<Backbone>("backbone", cfg_.stages, store_, rng);
  std::vector<int> dims;
  for (const auto& s : cfg_.stages) dims.push_back(s.dim);
  fpn_ = std::make_unique<Fpn>("fpn", dims, cfg_.fpn_channels, store_, rng);
  label_encoder_ = std::make_unique<LabelEncoder>("teacher.labels", cfg_.num_classes,
                                                  cfg_.fpn_channels, store_, rng);
  appearance_ = std::make_unique<AppearanceEncoder>("teacher.appearance", cfg_.fpn_channels,
                                                    cfg_.fpn_channels, store_, rng);
  interaction_ = std::make_unique<InteractionEncoder>(
      "teacher.interaction", AttentionConfig{cfg_.heads, cfg_.fpn_channels}, store_, rng);
  const AdaptorConfig acfg{cfg_.segments, cfg_.weighted_aggregation};
  const auto shapes = cfg_.level_shapes();
  for (int l = 0; l < cfg_.levels(); ++l) {
    permute_.push_back(std::make_unique<PermuteEncoder>(
        "teacher.permute" + std::to_string(l + 1), cfg_.fpn_channels,
        shapes[static_cast<std::size_t>(l)].first, shapes[static_cast<std::size_t>(l)].second,
        acfg, store_, rng));
    student_adapt_.push_back(std::make_unique<StudentAdaptor>(
        "student_adapt" + std::to_string(l + 1), cfg_.fpn_channels, store_, rng));
  }
  head_ = std::make_unique<DetectionHead>("head", cfg_.head_config(), store_, rng);
}

std::vector<Value> Model::student_pyramid(Binder& b, const Tensor& image) {
  return fpn_->forward(b, backbone_->forward(b, make_constant(image)));
}

Prediction Model::predict(Binder& b, const std::vector<Value>& pyramid) {
  return head_->forward(b, pyramid);
}

std::vector<Value> Model::teacher_features(Binder& b, const std::vector<Value>& pyramid,
                                           const LabelDescriptorSet& labels) {
  if (static_cast<int>(pyramid.size()) != cfg_.levels())
    throw ConfigError("Model::teacher_features: pyramid level count mismatch");
  Value label_emb = label_encoder_->forward(b, labels);
  std::vector<Value> out;
  for (int l = 0; l < cfg_.levels(); ++l) {
    const Value& feat = pyramid[static_cast<std::size_t>(l)];
    MaskSetLevel masks = rasterize_masks_level(labels, feat.shape()[1], feat.shape()[2]);
    // the teacher reads student features as fixed inputs; its losses shape
    // only the teacher branch and the shared head
    Value appearance = appearance_->forward(b, detach(feat), masks);
    Value embeddings = interaction_->forward(b, appearance, label_emb);
    Value dense = scatter_embeddings(embeddings, masks);
    out.push_back(permute_[static_cast<std::size_t>(l)]->forward(b, dense));
  }
  return out;
}

std::vector<Value> Model::adapted_student(Binder& b, const std::vector<Value>& pyramid) {
  std::vector<Value> out;
  for (int l = 0; l < cfg_.levels(); ++l)
    out.push_back(student_adapt_[static_cast<std::size_t>(l)]->forward(
        b, pyramid[static_cast<std::size_t>(l)]));
  return out;
}

std::int64_t Model::teacher_invocations() const {
  std::int64_t n = label_encoder_->calls() + appearance_->calls() + interaction_->calls();
  for (const auto& p : permute_) n += p->calls();
  return n;
}

}  // namespace faultdet
