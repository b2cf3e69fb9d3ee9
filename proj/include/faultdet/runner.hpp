#pragma once

#include <iostream>

#include "faultdet/trainer.hpp"

namespace faultdet {

// Exit codes shared by every command.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;

struct SynthArgs {
  SynthConfig cfg;
  std::string out_dir;
  bool overwrite = false;
};

struct TrainArgs {
  std::string data_dir;
  std::string out_dir;
  std::string resume;  // checkpoint path; empty for a fresh run
  DistillConfig distill;
  int iters = 0;  // steps to run in this invocation; 0 -> distill.total_iters
  int heads = 4;
  int dilation = 1;
  bool weighted_aggregation = false;
  int tower_depth = 2;
  std::vector<int> stage_dims;  // empty -> the default 64/128/256/512 ladder
  int stage_depth = 2;
  int mlp_ratio = 2;
  bool overwrite = false;
  bool quiet = true;
};

struct EvalArgs {
  std::string data_dir;
  std::string checkpoint;
  Split split = Split::Test;
  std::string detections_out;  // optional jsonl dump
};

struct ReportArgs {
  std::string data_dir;
  std::string out_dir;
  std::string sweep = "lambda";  // lambda | tau | channels
  DistillConfig base;
  int iters = 200;
  int heads = 4;
  std::vector<int> stage_dims;
  int stage_depth = 2;
  int mlp_ratio = 2;
  int tower_depth = 2;
  bool overwrite = false;
};

ModelConfig make_model_config(const TrainArgs& args, int image_size, int num_classes);

int run_synth(const SynthArgs& args, std::ostream& log);
int run_train(const TrainArgs& args, std::ostream& log);
int run_eval(const EvalArgs& args, std::ostream& log, EvalResult* result_out = nullptr);
int run_report(const ReportArgs& args, std::ostream& log);

// Maps project errors onto exit codes, printing the message to `err`.
int guard_errors(const std::function<int()>& fn, std::ostream& err);

}  // namespace faultdet
