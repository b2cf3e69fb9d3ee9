#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "faultdet/graph.hpp"
#include "faultdet/rng.hpp"
#include "faultdet/tensor.hpp"

namespace faultdet {

// A learnable tensor plus its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    grad.fill(0.0);
  }
};

// Name-ordered registry over params owned by the modules. Used by the
// optimizer, checkpointing, and parameter counting.
class ParamStore {
 public:
  void reg(Param* p);
  void reg_all(const ParamStore& other);

  const std::map<std::string, Param*>& items() const { return items_; }
  Param* find(const std::string& name) const;
  std::int64_t total_count() const;
  std::int64_t count_with_prefix(const std::string& prefix) const;
  void zero_grads() const;

 private:
  std::map<std::string, Param*> items_;
};

// Produces leaf graph nodes for params, one per training step, so a whole
// batch shares a single copy of the weights. After backward(), write_grads()
// moves accumulated leaf gradients into the Param structs.
class Binder {
 public:
  Value operator()(Param& p);
  void write_grads();

 private:
  std::unordered_map<Param*, Value> leaves_;
};

// Initialization helpers; all draws come from the given Rng.
void init_normal(Param& p, Rng& rng, double stddev);
void init_kaiming(Param& p, Rng& rng, int fan_in);
void init_identity(Param& p);  // square matrices
void init_zero(Param& p);
void init_const(Param& p, double v);

}  // namespace faultdet
