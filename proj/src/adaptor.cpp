#include "faultdet/adaptor.hpp"

#include <algorithm>
#include <numeric>

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

void AdaptorConfig::validate(int channels) const {
  if (segments < 1 || channels % segments != 0)
    throw ConfigError("AdaptorConfig: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(segments) + " segments");
}

std::shared_ptr<std::vector<int>> build_placement(const MaskSetLevel& masks) {
  const int rows = masks.rows();
  const int virtual_row = rows - 1;
  auto placement = std::make_shared<std::vector<int>>(
      static_cast<std::size_t>(masks.h) * masks.w, virtual_row);
  std::vector<int> order(static_cast<std::size_t>(virtual_row));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return masks.area(a) > masks.area(b); });
  for (int r : order)
    for (std::int64_t cell : (*masks.cells)[static_cast<std::size_t>(r)])
      (*placement)[static_cast<std::size_t>(cell)] = r;
  return placement;
}

Value scatter_embeddings(const Value& rows, const MaskSetLevel& masks) {
  if (rows.shape().rank() != 2 || rows.shape()[0] != masks.rows())
    throw ConfigError("scatter_embeddings: " + rows.shape().str() + " does not carry " +
                      std::to_string(masks.rows()) + " rows");
  return scatter_rows(rows, build_placement(masks), masks.h, masks.w);
}

PermuteEncoder::PermuteEncoder(const std::string& prefix, int channels, int h, int w,
                               const AdaptorConfig& cfg, ParamStore& store, Rng& rng)
    : channels_(channels), h_(h), w_(w), cfg_(cfg) {
  cfg_.validate(channels);
  const int s = cfg_.segments;
  const int g = channels / s;
  const int nh = s * h, nw = s * w;
  init_kaiming(setup(wh_, prefix + ".height.w", {nh, nh}, store), rng, nh);
  setup(bh_, prefix + ".height.b", {nh}, store);
  init_kaiming(setup(ww_, prefix + ".width.w", {nw, nw}, store), rng, nw);
  setup(bw_, prefix + ".width.b", {nw}, store);
  init_kaiming(setup(wc_, prefix + ".chan.w", {channels, channels, 1, 1}, store), rng, channels);
  setup(bc_, prefix + ".chan.b", {channels}, store);
  init_kaiming(setup(wf_, prefix + ".mix.w", {channels, channels, 1, 1}, store), rng, channels);
  setup(bf_, prefix + ".mix.b", {channels}, store);
  setup(agg_, prefix + ".agg", {3}, store);

  // height branch: (C,H,W) -> rows (g*W, s*H); row = grp*W + j, col = k*H + i,
  // reading channel k*g + grp. The inverse restores (C,H,W).
  h_in_ = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(channels) * h * w);
  h_out_ = std::make_shared<std::vector<std::int64_t>>(h_in_->size());
  for (int grp = 0; grp < g; ++grp)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < s; ++k)
        for (int i = 0; i < h; ++i) {
          const std::int64_t mat = (static_cast<std::int64_t>(grp) * w + j) * nh + (k * h + i);
          const std::int64_t map =
              (static_cast<std::int64_t>(k * g + grp) * h + i) * w + j;
          (*h_in_)[static_cast<std::size_t>(mat)] = map;
          (*h_out_)[static_cast<std::size_t>(map)] = mat;
        }
  // width branch: rows (g*H, s*W); row = grp*H + i, col = k*W + j.
  w_in_ = std::make_shared<std::vector<std::int64_t>>(h_in_->size());
  w_out_ = std::make_shared<std::vector<std::int64_t>>(h_in_->size());
  for (int grp = 0; grp < g; ++grp)
    for (int i = 0; i < h; ++i)
      for (int k = 0; k < s; ++k)
        for (int j = 0; j < w; ++j) {
          const std::int64_t mat = (static_cast<std::int64_t>(grp) * h + i) * nw + (k * w + j);
          const std::int64_t map =
              (static_cast<std::int64_t>(k * g + grp) * h + i) * w + j;
          (*w_in_)[static_cast<std::size_t>(mat)] = map;
          (*w_out_)[static_cast<std::size_t>(map)] = mat;
        }
}

Value PermuteEncoder::forward(Binder& b, const Value& x) {
  ++calls_;
  if (x.shape() != Shape({channels_, h_, w_}))
    throw ConfigError("PermuteEncoder: input " + x.shape().str() + " expected (" +
                      std::to_string(channels_) + "," + std::to_string(h_) + "," +
                      std::to_string(w_) + ")");
  const int s = cfg_.segments;
  const int g = channels_ / s;
  const Shape map_shape({channels_, h_, w_});

  Value xh = permute_elements(x, Shape({g * w_, s * h_}), h_in_);
  xh = linear(xh, b(wh_), b(bh_));
  xh = permute_elements(xh, map_shape, h_out_);

  Value xw = permute_elements(x, Shape({g * h_, s * w_}), w_in_);
  xw = linear(xw, b(ww_), b(bw_));
  xw = permute_elements(xw, map_shape, w_out_);

  Value xc = conv2d(x, b(wc_), b(bc_));

  Value combined;
  if (cfg_.weighted_aggregation) {
    // 3x the softmax weights so zero logits reproduce the plain sum
    Value wts = softmax_rows(reshape(b(agg_), Shape({1, 3})));
    combined = add(add(mul_scalar_value(xh, scale(slice_cols(wts, 0, 1), 3.0)),
                       mul_scalar_value(xw, scale(slice_cols(wts, 1, 1), 3.0))),
                   mul_scalar_value(xc, scale(slice_cols(wts, 2, 1), 3.0)));
  } else {
    combined = add(add(xh, xw), xc);
  }
  return conv2d(combined, b(wf_), b(bf_));
}

StudentAdaptor::StudentAdaptor(const std::string& prefix, int channels, ParamStore& store,
                               Rng& rng)
    : channels_(channels) {
  init_kaiming(setup(w1_, prefix + ".conv1.w", {channels, channels, 3, 3}, store), rng,
               channels * 9);
  setup(b1_, prefix + ".conv1.b", {channels}, store);
  setup(ln_g_, prefix + ".ln.g", {channels}, store).value.fill(1.0);
  setup(ln_b_, prefix + ".ln.b", {channels}, store);
  setup(w2_, prefix + ".conv2.w", {channels, channels, 3, 3}, store);  // zero init
  setup(b2_, prefix + ".conv2.b", {channels}, store);
}

Value StudentAdaptor::forward(Binder& b, const Value& level_feat) {
  if (level_feat.shape().rank() != 3 || level_feat.shape()[0] != channels_)
    throw ConfigError("StudentAdaptor: input " + level_feat.shape().str() + " expected " +
                      std::to_string(channels_) + " channels");
  Value h = conv2d(level_feat, b(w1_), b(b1_));
  h = gelu(layer_norm_chan(h, b(ln_g_), b(ln_b_)));
  h = conv2d(h, b(w2_), b(b2_));
  return add(level_feat, h);
}

}  // namespace faultdet
