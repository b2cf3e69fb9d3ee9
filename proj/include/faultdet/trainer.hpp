#pragma once

#include <functional>
#include <map>

#include "faultdet/data.hpp"
#include "faultdet/distill.hpp"
#include "faultdet/eval.hpp"

namespace faultdet {

struct LogRow {
  std::uint64_t iter = 0;
  double det_s = 0.0, det_t = 0.0, distill = 0.0, total = 0.0, lr = 0.0;
};

class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamStore& params, double lr);

  const std::map<std::string, Tensor>& buffers() const { return velocity_; }
  std::map<std::string, Tensor>& buffers() { return velocity_; }

 private:
  double momentum_, weight_decay_;
  std::map<std::string, Tensor> velocity_;
};

std::uint64_t config_hash(const ModelConfig& mc, const DistillConfig& dc);

// Everything a run needs to continue exactly where it stopped.
class TrainState {
 public:
  TrainState(const ModelConfig& mc, const DistillConfig& dc);

  std::uint64_t iteration = 0;
  ModelConfig model_cfg;
  DistillConfig distill_cfg;
  std::unique_ptr<Model> model;
  SgdOptimizer optimizer;
  Rng data_rng;

  void save_checkpoint(const std::string& path) const;
  // Rebuilds the state from the configs embedded in the checkpoint.
  static TrainState load_checkpoint(const std::string& path);
  // Same, but the caller-provided configs must hash-match the stored ones.
  static TrainState load_checkpoint(const std::string& path, const ModelConfig& mc,
                                    const DistillConfig& dc);
};

double learning_rate_at(const DistillConfig& cfg, std::uint64_t iter);

// Runs `iters` optimization steps, appending one log row per iteration.
// Aborts with DivergenceError when the total loss stays above 10x its
// initial value for 200 consecutive iterations.
std::vector<LogRow> train_loop(TrainState& state, const Dataset& data, int iters,
                               const std::function<void(const LogRow&)>& on_iter = {});

void write_log_csv(const std::string& path, const std::vector<LogRow>& rows, bool append = false);
std::vector<LogRow> read_log_csv(const std::string& path);

// Student-only inference: backbone, pyramid, shared head, decode + NMS.
std::vector<Detection> infer_image(Model& model, const Tensor& image, int image_id);
EvalResult evaluate_dataset(Model& model, const Dataset& data,
                            std::vector<Detection>* dump = nullptr);

}  // namespace faultdet
