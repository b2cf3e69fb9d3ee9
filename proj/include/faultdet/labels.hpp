#pragma once

#include <vector>

#include "faultdet/ops.hpp"
#include "faultdet/param.hpp"

namespace faultdet {

// Per-object annotation: box corners normalized by image size, plus class id.
struct LabelDescriptor {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  int class_id = 0;

  void validate(int num_classes) const;
  double area() const { return (x2 - x1) * (y2 - y1); }
};

struct LabelDescriptorSet {
  std::vector<LabelDescriptor> items;

  int count() const { return static_cast<int>(items.size()); }
  void validate(int num_classes) const;
};

// Encodes annotations into per-object latent embeddings. The descriptor is
// the box corners concatenated with a one-hot class; a shared pointwise MLP
// runs over the set, with learned square alignment transforms applied to the
// raw descriptors and to the mid-level features. The only normalization is a
// final layer norm, so nothing depends on batch composition.
class LabelEncoder {
 public:
  LabelEncoder(const std::string& prefix, int num_classes, int out_dim, ParamStore& store,
               Rng& rng);
  LabelEncoder(const LabelEncoder&) = delete;
  LabelEncoder& operator=(const LabelEncoder&) = delete;

  // Returns an (N, out_dim) matrix; an undefined Value when the set is empty.
  Value forward(Binder& b, const LabelDescriptorSet& labels);

  int descriptor_dim() const { return 4 + num_classes_; }
  int out_dim() const { return out_dim_; }
  std::int64_t calls() const { return calls_; }

 private:
  int num_classes_, out_dim_;
  Param align_in_;    // descriptor_dim x descriptor_dim, identity at init
  Param w1_, b1_;     // descriptor_dim -> out_dim
  Param align_mid_;   // out_dim x out_dim, identity at init
  Param w2_, b2_;     // out_dim -> out_dim
  Param ln_g_, ln_b_;
  std::int64_t calls_ = 0;
};

}  // namespace faultdet
