#pragma once

#include "faultdet/appearance.hpp"
#include "faultdet/ops.hpp"
#include "faultdet/param.hpp"

namespace faultdet {

struct AdaptorConfig {
  int segments = 4;
  bool weighted_aggregation = false;  // learned 3-way branch reweighting

  void validate(int channels) const;
};

// Placement map for painting per-object embedding rows onto a level grid:
// the virtual row (last mask row) fills everything, then real objects are
// painted in decreasing area order so smaller objects end up on top.
std::shared_ptr<std::vector<int>> build_placement(const MaskSetLevel& masks);

// Broadcasts interaction-embedding rows (N+1, C) onto the level grid.
Value scatter_embeddings(const Value& rows, const MaskSetLevel& masks);

// Height/width/channel permute-MLP encoder for one pyramid level: channels
// are split into `segments` blocks; the height branch mixes (segment, H)
// slices through a fully connected layer and restores the layout, the width
// branch does the same along W, the channel branch is pointwise; the three
// are summed (optionally softmax-reweighted) and mixed by a final FC.
class PermuteEncoder {
 public:
  PermuteEncoder(const std::string& prefix, int channels, int h, int w, const AdaptorConfig& cfg,
                 ParamStore& store, Rng& rng);
  PermuteEncoder(const PermuteEncoder&) = delete;
  PermuteEncoder& operator=(const PermuteEncoder&) = delete;

  Value forward(Binder& b, const Value& x);

  std::int64_t calls() const { return calls_; }

 private:
  int channels_, h_, w_;
  AdaptorConfig cfg_;
  Param wh_, bh_, ww_, bw_, wc_, bc_, wf_, bf_;
  Param agg_;  // 3 logits, used only with weighted aggregation
  std::shared_ptr<std::vector<std::int64_t>> h_in_, h_out_, w_in_, w_out_;
  std::int64_t calls_ = 0;
};

// Student-side adaptive head: residual pair of 3x3 convolutions with channel
// layer norm and gelu between; the closing conv starts at zero so adaptation
// begins from the raw student feature.
class StudentAdaptor {
 public:
  StudentAdaptor(const std::string& prefix, int channels, ParamStore& store, Rng& rng);
  StudentAdaptor(const StudentAdaptor&) = delete;
  StudentAdaptor& operator=(const StudentAdaptor&) = delete;

  Value forward(Binder& b, const Value& level_feat);

 private:
  int channels_;
  Param w1_, b1_, ln_g_, ln_b_, w2_, b2_;
};

}  // namespace faultdet
