#pragma once

#include <vector>

#include "faultdet/ops.hpp"
#include "faultdet/param.hpp"

namespace faultdet {

struct AxialShiftConfig {
  int shift_size = 5;  // odd
  int dilation = 1;
  int channels = 0;
  void validate() const;
};

struct StageConfig {
  int patch_merge = 2;  // spatial reduction factor of the merge step
  int dim = 64;
  int depth = 2;
  int mlp_ratio = 2;
  AxialShiftConfig shift;
};

// Four-stage ladder: dims 64/128/256/512, merge factors 4/2/2/2, two blocks
// per stage, shift size 5.
std::vector<StageConfig> default_stage_configs(int shift_size = 5, int dilation = 1);

// Spatially shifts channel groups along one axis (zero fill outside the map)
// and mixes channels with a learned pointwise projection.
Value axial_shift(const Value& x, const AxialShiftConfig& cfg, Axis axis, const Value& proj_w,
                  const Value& proj_b);

// Pre-norm residual block: x + MLP(gelu(hshift(LN(x)) + vshift(LN(x)))).
class MlpBlock {
 public:
  MlpBlock(const std::string& prefix, int dim, const AxialShiftConfig& shift, int mlp_ratio,
           ParamStore& store, Rng& rng);
  MlpBlock(const MlpBlock&) = delete;
  MlpBlock& operator=(const MlpBlock&) = delete;

  Value forward(Binder& b, const Value& x);

  const AxialShiftConfig& shift_config() const { return shift_; }

 private:
  AxialShiftConfig shift_;
  Param ln_g_, ln_b_;
  Param wh_, bh_, wv_, bv_;  // per-direction channel projections
  Param w1_, b1_, w2_, b2_;  // pointwise two-layer MLP
};

// Non-overlapping n x n concatenation, linear projection, layer norm.
class PatchMerge {
 public:
  PatchMerge(const std::string& prefix, int in_channels, int out_dim, int factor,
             ParamStore& store, Rng& rng);
  PatchMerge(const PatchMerge&) = delete;
  PatchMerge& operator=(const PatchMerge&) = delete;

  Value forward(Binder& b, const Value& x);

 private:
  int in_channels_, out_dim_, factor_;
  Param w_, b_, ln_g_, ln_b_;
};

class Backbone {
 public:
  Backbone(const std::string& prefix, std::vector<StageConfig> stages, ParamStore& store, Rng& rng);
  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  // Returns one feature map per stage. The input must be (3, H, W) with both
  // H and W divisible by the total reduction (32 for the default ladder).
  std::vector<Value> forward(Binder& b, const Value& image);

  int total_reduction() const;
  const std::vector<StageConfig>& stages() const { return stages_; }

 private:
  struct Stage {
    std::unique_ptr<PatchMerge> merge;
    std::vector<std::unique_ptr<MlpBlock>> blocks;
  };
  std::vector<StageConfig> stages_;
  std::vector<Stage> built_;
};

// Top-down feature pyramid with nearest-neighbor upsampling and per-level
// 3x3 output convolutions; every level carries `channels` channels.
class Fpn {
 public:
  Fpn(const std::string& prefix, const std::vector<int>& stage_dims, int channels,
      ParamStore& store, Rng& rng);
  Fpn(const Fpn&) = delete;
  Fpn& operator=(const Fpn&) = delete;

  std::vector<Value> forward(Binder& b, const std::vector<Value>& stage_feats);
  int channels() const { return channels_; }

 private:
  int channels_;
  std::vector<int> stage_dims_;
  struct Level {
    Param lat_w, lat_b, out_w, out_b;
  };
  std::vector<std::unique_ptr<Level>> levels_;
};

}  // namespace faultdet
