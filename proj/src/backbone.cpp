#include "faultdet/backbone.hpp"

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

void AxialShiftConfig::validate() const {
  if (shift_size < 1 || shift_size % 2 == 0)
    throw ConfigError("AxialShiftConfig: shift size must be a positive odd integer, got " +
                      std::to_string(shift_size));
  if (dilation < 1) throw ConfigError("AxialShiftConfig: dilation must be positive");
  if (channels < 1) throw ConfigError("AxialShiftConfig: channels must be positive");
}

std::vector<StageConfig> default_stage_configs(int shift_size, int dilation) {
  std::vector<StageConfig> out;
  const int dims[4] = {64, 128, 256, 512};
  for (int i = 0; i < 4; ++i) {
    StageConfig s;
    s.patch_merge = i == 0 ? 4 : 2;
    s.dim = dims[i];
    s.depth = 2;
    s.mlp_ratio = 2;
    s.shift = AxialShiftConfig{shift_size, dilation, dims[i]};
    out.push_back(s);
  }
  return out;
}

Value axial_shift(const Value& x, const AxialShiftConfig& cfg, Axis axis, const Value& proj_w,
                  const Value& proj_b) {
  cfg.validate();
  if (x.shape().rank() != 3 || x.shape()[0] != cfg.channels)
    throw ConfigError("axial_shift: input " + x.shape().str() + " does not carry " +
                      std::to_string(cfg.channels) + " channels");
  Value shifted = axial_shift_gather(x, cfg.shift_size, cfg.dilation, axis);
  return conv2d(shifted, proj_w, proj_b);
}

MlpBlock::MlpBlock(const std::string& prefix, int dim, const AxialShiftConfig& shift,
                   int mlp_ratio, ParamStore& store, Rng& rng)
    : shift_(shift) {
  shift_.channels = dim;
  shift_.validate();
  const int hidden = dim * mlp_ratio;
  setup(ln_g_, prefix + ".ln.g", {dim}, store).value.fill(1.0);
  setup(ln_b_, prefix + ".ln.b", {dim}, store);
  init_kaiming(setup(wh_, prefix + ".hproj.w", {dim, dim, 1, 1}, store), rng, dim);
  setup(bh_, prefix + ".hproj.b", {dim}, store);
  init_kaiming(setup(wv_, prefix + ".vproj.w", {dim, dim, 1, 1}, store), rng, dim);
  setup(bv_, prefix + ".vproj.b", {dim}, store);
  init_kaiming(setup(w1_, prefix + ".mlp1.w", {hidden, dim, 1, 1}, store), rng, dim);
  setup(b1_, prefix + ".mlp1.b", {hidden}, store);
  init_kaiming(setup(w2_, prefix + ".mlp2.w", {dim, hidden, 1, 1}, store), rng, hidden);
  setup(b2_, prefix + ".mlp2.b", {dim}, store);
}

Value MlpBlock::forward(Binder& b, const Value& x) {
  Value u = layer_norm_chan(x, b(ln_g_), b(ln_b_));
  Value h = axial_shift(u, shift_, Axis::Horizontal, b(wh_),
                        b(bh_));
  Value v = axial_shift(u, shift_, Axis::Vertical, b(wv_),
                        b(bv_));
  Value a = gelu(add(h, v));
  Value m = conv2d(a, b(w1_), b(b1_));
  m = gelu(m);
  m = conv2d(m, b(w2_), b(b2_));
  return add(x, m);
}

PatchMerge::PatchMerge(const std::string& prefix, int in_channels, int out_dim, int factor,
                       ParamStore& store, Rng& rng)
    : in_channels_(in_channels), out_dim_(out_dim), factor_(factor) {
  if (factor < 1) throw ConfigError("PatchMerge: factor must be positive");
  const int in_cols = in_channels * factor * factor;
  init_kaiming(setup(w_, prefix + ".w", {in_cols, out_dim}, store), rng, in_cols);
  setup(b_, prefix + ".b", {out_dim}, store);
  setup(ln_g_, prefix + ".ln.g", {out_dim}, store).value.fill(1.0);
  setup(ln_b_, prefix + ".ln.b", {out_dim}, store);
}

Value PatchMerge::forward(Binder& b, const Value& x) {
  if (x.shape().rank() != 3 || x.shape()[0] != in_channels_)
    throw ConfigError("PatchMerge: input " + x.shape().str() + " expected " +
                      std::to_string(in_channels_) + " channels");
  const int c = in_channels_, h = x.shape()[1], w = x.shape()[2], n = factor_;
  if (h % n != 0 || w % n != 0)
    throw InputError("PatchMerge: spatial size " + x.shape().str() + " not divisible by " +
                     std::to_string(n));
  const int ho = h / n, wo = w / n;
  // (C,H,W) -> (ho*wo, C*n*n), column index (di*n + dj)*C + c
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->resize(static_cast<std::size_t>(x.val().numel()));
  std::int64_t out_pos = 0;
  for (int i = 0; i < ho; ++i)
    for (int j = 0; j < wo; ++j)
      for (int di = 0; di < n; ++di)
        for (int dj = 0; dj < n; ++dj)
          for (int ch = 0; ch < c; ++ch)
            (*idx)[static_cast<std::size_t>(out_pos++)] =
                (static_cast<std::int64_t>(ch) * h + (i * n + di)) * w + (j * n + dj);
  Value rows = permute_elements(x, Shape({ho * wo, c * n * n}), idx);
  rows = linear(rows, b(w_), b(b_));
  rows = layer_norm_rows(rows, b(ln_g_), b(ln_b_));
  // (ho*wo, out_dim) -> (out_dim, ho, wo)
  auto back = std::make_shared<std::vector<std::int64_t>>();
  back->resize(static_cast<std::size_t>(static_cast<std::int64_t>(out_dim_) * ho * wo));
  std::int64_t k = 0;
  for (int ch = 0; ch < out_dim_; ++ch)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j)
        (*back)[static_cast<std::size_t>(k++)] = static_cast<std::int64_t>(i * wo + j) * out_dim_ + ch;
  return permute_elements(rows, Shape({out_dim_, ho, wo}), back);
}

Backbone::Backbone(const std::string& prefix, std::vector<StageConfig> stages, ParamStore& store,
                   Rng& rng)
    : stages_(std::move(stages)) {
  if (stages_.empty()) throw ConfigError("Backbone: no stages");
  int prev_dim = 3;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const StageConfig& sc = stages_[i];
    if (i > 0 && sc.dim <= stages_[i - 1].dim)
      throw ConfigError("Backbone: stage dims must be strictly increasing");
    const std::string sp = prefix + ".stage" + std::to_string(i + 1);
    Stage st;
    st.merge = std::make_unique<PatchMerge>(sp + ".merge", prev_dim, sc.dim, sc.patch_merge, store,
                                            rng);
    for (int d = 0; d < sc.depth; ++d)
      st.blocks.push_back(std::make_unique<MlpBlock>(sp + ".block" + std::to_string(d), sc.dim,
                                                     sc.shift, sc.mlp_ratio, store, rng));
    built_.push_back(std::move(st));
    prev_dim = sc.dim;
  }
}

int Backbone::total_reduction() const {
  int r = 1;
  for (const auto& s : stages_) r *= s.patch_merge;
  return r;
}

std::vector<Value> Backbone::forward(Binder& b, const Value& image) {
  if (image.shape().rank() != 3 || image.shape()[0] != 3)
    throw InputError("Backbone: expected (3,H,W) image, got " + image.shape().str());
  const int r = total_reduction();
  if (image.shape()[1] % r != 0 || image.shape()[2] % r != 0)
    throw InputError("Backbone: input size " + image.shape().str() +
                     " must be divisible by " + std::to_string(r));
  std::vector<Value> outs;
  Value x = image;
  for (const Stage& st : built_) {
    x = st.merge->forward(b, x);
    for (const auto& blk : st.blocks) x = blk->forward(b, x);
    outs.push_back(x);
  }
  return outs;
}

Fpn::Fpn(const std::string& prefix, const std::vector<int>& stage_dims, int channels,
         ParamStore& store, Rng& rng)
    : channels_(channels), stage_dims_(stage_dims) {
  if (channels <= 0)
    throw ConfigError("Fpn: channel width must be positive, got " + std::to_string(channels));
  for (std::size_t i = 0; i < stage_dims_.size(); ++i) {
    auto lv = std::make_unique<Level>();
    const std::string lp = prefix + ".level" + std::to_string(i + 1);
    init_kaiming(setup(lv->lat_w, lp + ".lat.w", {channels, stage_dims_[i], 1, 1}, store), rng,
                 stage_dims_[i]);
    setup(lv->lat_b, lp + ".lat.b", {channels}, store);
    init_kaiming(setup(lv->out_w, lp + ".out.w", {channels, channels, 3, 3}, store), rng,
                 channels * 9);
    setup(lv->out_b, lp + ".out.b", {channels}, store);
    levels_.push_back(std::move(lv));
  }
}

std::vector<Value> Fpn::forward(Binder& b, const std::vector<Value>& stage_feats) {
  if (stage_feats.size() != levels_.size())
    throw ConfigError("Fpn: got " + std::to_string(stage_feats.size()) + " stage maps, expected " +
                      std::to_string(levels_.size()));
  const int n = static_cast<int>(levels_.size());
  std::vector<Value> lat(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (stage_feats[static_cast<std::size_t>(i)].shape()[0] != stage_dims_[static_cast<std::size_t>(i)])
      throw ConfigError("Fpn: stage " + std::to_string(i + 1) + " carries " +
                        stage_feats[static_cast<std::size_t>(i)].shape().str() + ", expected " +
                        std::to_string(stage_dims_[static_cast<std::size_t>(i)]) + " channels");
    lat[static_cast<std::size_t>(i)] =
        conv2d(stage_feats[static_cast<std::size_t>(i)], b(levels_[static_cast<std::size_t>(i)]->lat_w),
               b(levels_[static_cast<std::size_t>(i)]->lat_b));
  }
  std::vector<Value> merged(static_cast<std::size_t>(n));
  merged[static_cast<std::size_t>(n - 1)] = lat[static_cast<std::size_t>(n - 1)];
  for (int i = n - 2; i >= 0; --i)
    merged[static_cast<std::size_t>(i)] =
        add(lat[static_cast<std::size_t>(i)], upsample_nearest2x(merged[static_cast<std::size_t>(i + 1)]));
  std::vector<Value> outs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    outs[static_cast<std::size_t>(i)] =
        conv2d(merged[static_cast<std::size_t>(i)], b(levels_[static_cast<std::size_t>(i)]->out_w),
               b(levels_[static_cast<std::size_t>(i)]->out_b));
  return outs;
}

}  // namespace faultdet
