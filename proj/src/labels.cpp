#include "faultdet/labels.hpp"

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

void LabelDescriptor::validate(int num_classes) const {
  if (!(x1 < x2) || !(y1 < y2))
    throw AnnotationError("LabelDescriptor: degenerate box (" + std::to_string(x1) + "," +
                          std::to_string(y1) + "," + std::to_string(x2) + "," + std::to_string(y2) +
                          ")");
  if (x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0)
    throw AnnotationError("LabelDescriptor: box not normalized to [0,1]");
  if (class_id < 0 || class_id >= num_classes)
    throw AnnotationError("LabelDescriptor: class " + std::to_string(class_id) + " outside [0," +
                          std::to_string(num_classes) + ")");
}

void LabelDescriptorSet::validate(int num_classes) const {
  for (const auto& d : items) d.validate(num_classes);
}

LabelEncoder::LabelEncoder(const std::string& prefix, int num_classes, int out_dim,
                           ParamStore& store, Rng& rng)
    : num_classes_(num_classes), out_dim_(out_dim) {
  if (num_classes < 1 || out_dim < 1) throw ConfigError("LabelEncoder: bad dimensions");
  const int d = descriptor_dim();
  init_identity(setup(align_in_, prefix + ".align_in", {d, d}, store));
  init_kaiming(setup(w1_, prefix + ".mlp1.w", {d, out_dim}, store), rng, d);
  setup(b1_, prefix + ".mlp1.b", {out_dim}, store);
  init_identity(setup(align_mid_, prefix + ".align_mid", {out_dim, out_dim}, store));
  init_kaiming(setup(w2_, prefix + ".mlp2.w", {out_dim, out_dim}, store), rng, out_dim);
  setup(b2_, prefix + ".mlp2.b", {out_dim}, store);
  setup(ln_g_, prefix + ".ln.g", {out_dim}, store).value.fill(1.0);
  setup(ln_b_, prefix + ".ln.b", {out_dim}, store);
}

Value LabelEncoder::forward(Binder& b, const LabelDescriptorSet& labels) {
  ++calls_;
  labels.validate(num_classes_);
  const int n = labels.count();
  if (n == 0) return Value();

  Tensor desc({n, descriptor_dim()});
  for (int i = 0; i < n; ++i) {
    const LabelDescriptor& l = labels.items[static_cast<std::size_t>(i)];
    desc.at(i, 0) = l.x1;
    desc.at(i, 1) = l.y1;
    desc.at(i, 2) = l.x2;
    desc.at(i, 3) = l.y2;
    desc.at(i, 4 + l.class_id) = 1.0;
  }
  Value x = matmul(make_constant(std::move(desc)), b(align_in_));
  x = relu(linear(x, b(w1_), b(b1_)));
  x = matmul(x, b(align_mid_));
  x = linear(x, b(w2_), b(b2_));
  return layer_norm_rows(x, b(ln_g_), b(ln_b_));
}

}  // namespace faultdet
