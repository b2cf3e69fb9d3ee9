#include "faultdet/interaction.hpp"

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

void AttentionConfig::validate() const {
  if (heads < 1 || channels < 1 || channels % heads != 0)
    throw ConfigError("AttentionConfig: channels " + std::to_string(channels) +
                      " not divisible by heads " + std::to_string(heads));
}

InteractionEncoder::InteractionEncoder(const std::string& prefix, const AttentionConfig& cfg,
                                       ParamStore& store, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int c = cfg_.channels;
  init_kaiming(setup(wq_, prefix + ".q.w", {c, c}, store), rng, c);
  setup(bq_, prefix + ".q.b", {c}, store);
  init_kaiming(setup(wk_, prefix + ".k.w", {c, c}, store), rng, c);
  setup(bk_, prefix + ".k.b", {c}, store);
  init_kaiming(setup(wv_, prefix + ".v.w", {c, c}, store), rng, c);
  setup(bv_, prefix + ".v.b", {c}, store);
  init_kaiming(setup(wp_, prefix + ".proj.w", {c, c}, store), rng, c);
  setup(bp_, prefix + ".proj.b", {c}, store);
  init_normal(setup(null_label_, prefix + ".null_label", {1, c}, store), rng, 0.02);
}

Value InteractionEncoder::forward(Binder& b, const Value& appearance, const Value& label_emb) {
  ++calls_;
  const int c = cfg_.channels;
  if (appearance.shape().rank() != 2 || appearance.shape()[1] != c)
    throw ConfigError("InteractionEncoder: appearance " + appearance.shape().str() + " expected " +
                      std::to_string(c) + " columns");
  Value keys_src = label_emb.defined() ? label_emb : b(null_label_);
  if (keys_src.shape().rank() != 2 || keys_src.shape()[1] != c)
    throw ConfigError("InteractionEncoder: labels " + keys_src.shape().str() + " expected " +
                      std::to_string(c) + " columns");

  Value q = linear(appearance, b(wq_), b(bq_));
  Value k = linear(keys_src, b(wk_), b(bk_));
  Value v = linear(keys_src, b(wv_), b(bv_));

  const int dh = cfg_.head_dim();
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Value> heads;
  heads.reserve(static_cast<std::size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    Value qh = slice_cols(q, h * dh, dh);
    Value kh = slice_cols(k, h * dh, dh);
    Value vh = slice_cols(v, h * dh, dh);
    Value logits = scale(matmul(qh, transpose2d(kh)), scl);
    heads.push_back(matmul(softmax_rows(logits), vh));
  }
  Value u = cfg_.heads == 1 ? heads[0] : concat_cols(heads);
  return linear(u, b(wp_), b(bp_));
}

}  // namespace faultdet
