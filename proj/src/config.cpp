#include "faultdet/config.hpp"

namespace faultdet {

nlohmann::ordered_json to_json(const ModelConfig& mc) {
  nlohmann::ordered_json j;
  j["image_size"] = mc.image_size;
  j["num_classes"] = mc.num_classes;
  j["fpn_channels"] = mc.fpn_channels;
  j["shift_size"] = mc.shift_size;
  j["dilation"] = mc.dilation;
  j["heads"] = mc.heads;
  j["segments"] = mc.segments;
  j["weighted_aggregation"] = mc.weighted_aggregation;
  j["tower_depth"] = mc.tower_depth;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : mc.stages) {
    nlohmann::ordered_json sj;
    sj["patch_merge"] = s.patch_merge;
    sj["dim"] = s.dim;
    sj["depth"] = s.depth;
    sj["mlp_ratio"] = s.mlp_ratio;
    sj["shift_size"] = s.shift.shift_size;
    sj["dilation"] = s.shift.dilation;
    j["stages"].push_back(sj);
  }
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig mc;
  mc.image_size = j.at("image_size").get<int>();
  mc.num_classes = j.at("num_classes").get<int>();
  mc.fpn_channels = j.at("fpn_channels").get<int>();
  mc.shift_size = j.at("shift_size").get<int>();
  mc.dilation = j.at("dilation").get<int>();
  mc.heads = j.at("heads").get<int>();
  mc.segments = j.at("segments").get<int>();
  mc.weighted_aggregation = j.at("weighted_aggregation").get<bool>();
  mc.tower_depth = j.at("tower_depth").get<int>();
  for (const auto& sj : j.at("stages")) {
    StageConfig s;
    s.patch_merge = sj.at("patch_merge").get<int>();
    s.dim = sj.at("dim").get<int>();
    s.depth = sj.at("depth").get<int>();
    s.mlp_ratio = sj.at("mlp_ratio").get<int>();
    s.shift = AxialShiftConfig{sj.at("shift_size").get<int>(), sj.at("dilation").get<int>(), s.dim};
    mc.stages.push_back(s);
  }
  return mc;
}

nlohmann::ordered_json to_json(const DistillConfig& dc) {
  nlohmann::ordered_json j;
  j["tau"] = dc.tau;
  j["lambda"] = dc.lambda;
  j["segments"] = dc.segments;
  j["fpn_channels"] = dc.fpn_channels;
  j["shift_size"] = dc.shift_size;
  j["warmup_iters"] = dc.warmup_iters;
  j["lr_start"] = dc.lr_start;
  j["lr_peak"] = dc.lr_peak;
  j["total_iters"] = dc.total_iters;
  j["seed"] = dc.seed;
  j["batch_size"] = dc.batch_size;
  j["momentum"] = dc.momentum;
  j["weight_decay"] = dc.weight_decay;
  j["tau_squared"] = dc.tau_squared;
  j["softmax_domain"] = static_cast<int>(dc.domain);
  j["teacher_enabled"] = dc.teacher_enabled;
  j["checkpoint_interval"] = dc.checkpoint_interval;
  return j;
}

DistillConfig distill_config_from_json(const nlohmann::json& j) {
  DistillConfig dc;
  dc.tau = j.at("tau").get<double>();
  dc.lambda = j.at("lambda").get<double>();
  dc.segments = j.at("segments").get<int>();
  dc.fpn_channels = j.at("fpn_channels").get<int>();
  dc.shift_size = j.at("shift_size").get<int>();
  dc.warmup_iters = j.at("warmup_iters").get<int>();
  dc.lr_start = j.at("lr_start").get<double>();
  dc.lr_peak = j.at("lr_peak").get<double>();
  dc.total_iters = j.at("total_iters").get<int>();
  dc.seed = j.at("seed").get<std::uint64_t>();
  dc.batch_size = j.at("batch_size").get<int>();
  dc.momentum = j.at("momentum").get<double>();
  dc.weight_decay = j.at("weight_decay").get<double>();
  dc.tau_squared = j.at("tau_squared").get<bool>();
  dc.domain = static_cast<SoftmaxDomain>(j.at("softmax_domain").get<int>());
  dc.teacher_enabled = j.at("teacher_enabled").get<bool>();
  dc.checkpoint_interval = j.at("checkpoint_interval").get<int>();
  return dc;
}

nlohmann::ordered_json to_json(const SynthConfig& sc) {
  nlohmann::ordered_json j;
  j["seed"] = sc.seed;
  j["image_size"] = sc.image_size;
  j["num_classes"] = sc.num_classes;
  j["min_objects"] = sc.min_objects;
  j["max_objects"] = sc.max_objects;
  j["clutter"] = sc.clutter;
  j["fault_rate"] = sc.fault_rate;
  j["min_box_frac"] = sc.min_box_frac;
  j["max_box_frac"] = sc.max_box_frac;
  j["train_count"] = sc.train_count;
  j["test_count"] = sc.test_count;
  return j;
}

}  // namespace faultdet
