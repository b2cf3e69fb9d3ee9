#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "faultdet/labels.hpp"
#include "faultdet/ops.hpp"
#include "faultdet/param.hpp"

namespace faultdet {

// Rasterized object masks for one pyramid level. Rows 0..N-1 are the real
// objects in annotation order; row N is the virtual object covering the
// whole map. Every row has at least one active cell.
struct MaskSetLevel {
  int h = 0, w = 0;
  std::shared_ptr<std::vector<std::vector<std::int64_t>>> cells;

  int rows() const { return static_cast<int>(cells->size()); }
  std::int64_t area(int row) const { return static_cast<std::int64_t>((*cells)[static_cast<std::size_t>(row)].size()); }
};

// Cell (r,c) is active iff its center lies inside the normalized box
// ([x1,x2) x [y1,y2)); a box that captures no center activates the single
// cell nearest its center.
MaskSetLevel rasterize_masks_level(const LabelDescriptorSet& labels, int h, int w);
std::vector<MaskSetLevel> rasterize_masks(const LabelDescriptorSet& labels,
                                          const std::vector<std::pair<int, int>>& level_shapes);

// Mask-pooled per-object appearance embeddings: a single pointwise projection
// of the pyramid level, Hadamard-masked per object, spatially summed and
// divided by the active-cell count.
class AppearanceEncoder {
 public:
  AppearanceEncoder(const std::string& prefix, int in_channels, int out_dim, ParamStore& store,
                    Rng& rng);
  AppearanceEncoder(const AppearanceEncoder&) = delete;
  AppearanceEncoder& operator=(const AppearanceEncoder&) = delete;

  // level_feat (C_in, H, W) -> (N+1, out_dim)
  Value forward(Binder& b, const Value& level_feat, const MaskSetLevel& masks);

  std::int64_t calls() const { return calls_; }

 private:
  int in_channels_, out_dim_;
  Param w_, b_;
  std::int64_t calls_ = 0;
};

}  // namespace faultdet
