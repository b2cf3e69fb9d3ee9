#include "faultdet/param.hpp"

#include <cmath>

namespace faultdet {

void ParamStore::reg(Param* p) {
  if (!p || p->name.empty()) throw ConfigError("ParamStore::reg: unnamed param");
  auto [it, inserted] = items_.emplace(p->name, p);
  if (!inserted) throw ConfigError("ParamStore::reg: duplicate param name " + p->name);
}

void ParamStore::reg_all(const ParamStore& other) {
  for (auto& [name, p] : other.items_) reg(p);
}

Param* ParamStore::find(const std::string& name) const {
  auto it = items_.find(name);
  return it == items_.end() ? nullptr : it->second;
}

std::int64_t ParamStore::total_count() const {
  std::int64_t n = 0;
  for (auto& [name, p] : items_) n += p->value.numel();
  return n;
}

std::int64_t ParamStore::count_with_prefix(const std::string& prefix) const {
  std::int64_t n = 0;
  for (auto& [name, p] : items_)
    if (name.rfind(prefix, 0) == 0) n += p->value.numel();
  return n;
}

void ParamStore::zero_grads() const {
  for (auto& [name, p] : items_) p->zero_grad();
}

Value Binder::operator()(Param& p) {
  auto it = leaves_.find(&p);
  if (it != leaves_.end()) return it->second;
  Value v = make_leaf(p.value, true);
  leaves_.emplace(&p, v);
  return v;
}

void Binder::write_grads() {
  for (auto& [p, leaf] : leaves_) {
    if (leaf.node->grad.empty()) continue;
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
    const double* src = leaf.node->grad.data();
    double* dst = p->grad.data();
    const std::int64_t n = p->grad.numel();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }
}

void init_normal(Param& p, Rng& rng, double stddev) {
  for (std::int64_t i = 0; i < p.value.numel(); ++i) p.value[i] = stddev * rng.normal();
}

void init_kaiming(Param& p, Rng& rng, int fan_in) {
  init_normal(p, rng, std::sqrt(2.0 / static_cast<double>(fan_in > 0 ? fan_in : 1)));
}

void init_identity(Param& p) {
  const Shape& s = p.value.shape();
  if (s.rank() != 2 || s[0] != s[1]) throw ConfigError("init_identity: " + s.str() + " not square");
  p.value.fill(0.0);
  for (int i = 0; i < s[0]; ++i) p.value.at(i, i) = 1.0;
}

void init_zero(Param& p) { p.value.fill(0.0); }

void init_const(Param& p, double v) { p.value.fill(v); }

}  // namespace faultdet
