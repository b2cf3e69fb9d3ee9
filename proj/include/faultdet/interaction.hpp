#pragma once

#include "faultdet/ops.hpp"
#include "faultdet/param.hpp"

namespace faultdet {

struct AttentionConfig {
  int heads = 4;
  int channels = 64;

  int head_dim() const { return channels / heads; }
  void validate() const;
};

// Multi-head dot-product attention with appearance embeddings as queries and
// label embeddings as keys/values. Scaling is 1/sqrt(head_dim). When an image
// carries no objects, a learned null label row stands in as the only key and
// value so the virtual object still attends to something.
class InteractionEncoder {
 public:
  InteractionEncoder(const std::string& prefix, const AttentionConfig& cfg, ParamStore& store,
                     Rng& rng);
  InteractionEncoder(const InteractionEncoder&) = delete;
  InteractionEncoder& operator=(const InteractionEncoder&) = delete;

  // appearance (Nq, C); label_emb (N, C) or undefined for empty images.
  Value forward(Binder& b, const Value& appearance, const Value& label_emb);

  const AttentionConfig& config() const { return cfg_; }
  std::int64_t calls() const { return calls_; }

 private:
  AttentionConfig cfg_;
  Param wq_, bq_, wk_, bk_, wv_, bv_;
  Param wp_, bp_;      // output projection over concatenated heads
  Param null_label_;   // (1, C)
  std::int64_t calls_ = 0;
};

}  // namespace faultdet
