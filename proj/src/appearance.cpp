#include "faultdet/appearance.hpp"

#include <algorithm>
#include <cmath>

namespace faultdet {

namespace {

Param& setup(Param& p, std::string name, const Shape& s, ParamStore& store) {
  p.name = std::move(name);
  p.value = Tensor(s);
  p.zero_grad();
  store.reg(&p);
  return p;
}

}  // namespace

MaskSetLevel rasterize_masks_level(const LabelDescriptorSet& labels, int h, int w) {
  if (h < 1 || w < 1) throw ConfigError("rasterize_masks_level: empty level shape");
  MaskSetLevel out;
  out.h = h;
  out.w = w;
  out.cells = std::make_shared<std::vector<std::vector<std::int64_t>>>();
  for (const LabelDescriptor& l : labels.items) {
    std::vector<std::int64_t> active;
    for (int r = 0; r < h; ++r) {
      const double cy = (r + 0.5) / h;
      if (cy < l.y1 || cy >= l.y2) continue;
      for (int c = 0; c < w; ++c) {
        const double cx = (c + 0.5) / w;
        if (cx >= l.x1 && cx < l.x2) active.push_back(static_cast<std::int64_t>(r) * w + c);
      }
    }
    if (active.empty()) {
      // degenerate at this scale: clamp to the cell nearest the box center
      const double cx = 0.5 * (l.x1 + l.x2), cy = 0.5 * (l.y1 + l.y2);
      const int r = std::clamp(static_cast<int>(cy * h), 0, h - 1);
      const int c = std::clamp(static_cast<int>(cx * w), 0, w - 1);
      active.push_back(static_cast<std::int64_t>(r) * w + c);
    }
    out.cells->push_back(std::move(active));
  }
  // virtual object covers the whole map
  std::vector<std::int64_t> full(static_cast<std::size_t>(h) * w);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(full.size()); ++i)
    full[static_cast<std::size_t>(i)] = i;
  out.cells->push_back(std::move(full));
  return out;
}

std::vector<MaskSetLevel> rasterize_masks(const LabelDescriptorSet& labels,
                                          const std::vector<std::pair<int, int>>& level_shapes) {
  std::vector<MaskSetLevel> out;
  out.reserve(level_shapes.size());
  for (const auto& [h, w] : level_shapes) out.push_back(rasterize_masks_level(labels, h, w));
  return out;
}

AppearanceEncoder::AppearanceEncoder(const std::string& prefix, int in_channels, int out_dim,
                                     ParamStore& store, Rng& rng)
    : in_channels_(in_channels), out_dim_(out_dim) {
  init_kaiming(setup(w_, prefix + ".proj.w", {out_dim, in_channels, 1, 1}, store), rng,
               in_channels);
  setup(b_, prefix + ".proj.b", {out_dim}, store);
}

Value AppearanceEncoder::forward(Binder& b, const Value& level_feat, const MaskSetLevel& masks) {
  ++calls_;
  if (level_feat.shape().rank() != 3 || level_feat.shape()[0] != in_channels_)
    throw ConfigError("AppearanceEncoder: level " + level_feat.shape().str() + " expected " +
                      std::to_string(in_channels_) + " channels");
  if (level_feat.shape()[1] != masks.h || level_feat.shape()[2] != masks.w)
    throw ConfigError("AppearanceEncoder: mask grid " + std::to_string(masks.h) + "x" +
                      std::to_string(masks.w) + " does not match level " +
                      level_feat.shape().str());
  Value proj = conv2d(level_feat, b(w_), b(b_));
  return mask_pool(proj, masks.cells);
}

}  // namespace faultdet
