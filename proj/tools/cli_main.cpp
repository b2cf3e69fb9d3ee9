#include <CLI11.hpp>

#include <iostream>

#include "faultdet/runner.hpp"

using namespace faultdet;

int main(int argc, char** argv) {
  CLI::App app{"synthetic component-fault detection: data synthesis, distillation training, "
               "evaluation, and ablation reports"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a TOML config file (sections per subcommand)");

  // ---- synth ----
  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset");
  synth_cmd->add_option("--out", synth.out_dir, "output dataset directory")->required();
  synth_cmd->add_option("--seed", synth.cfg.seed, "generator seed");
  synth_cmd->add_option("--image-size", synth.cfg.image_size, "square image size (multiple of 32)");
  synth_cmd->add_option("--train-count", synth.cfg.train_count, "training images");
  synth_cmd->add_option("--test-count", synth.cfg.test_count, "test images");
  synth_cmd->add_option("--min-objects", synth.cfg.min_objects, "objects per image, lower bound");
  synth_cmd->add_option("--max-objects", synth.cfg.max_objects, "objects per image, upper bound");
  synth_cmd->add_option("--clutter", synth.cfg.clutter, "background clutter level in [0,1]");
  synth_cmd->add_option("--fault-rate", synth.cfg.fault_rate, "per-object fault probability");
  synth_cmd->add_option("--min-box-frac", synth.cfg.min_box_frac, "smallest box side fraction");
  synth_cmd->add_option("--max-box-frac", synth.cfg.max_box_frac, "largest box side fraction");
  synth_cmd->add_flag("--overwrite", synth.overwrite, "replace an existing dataset");

  // ---- train ----
  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train the student with the dynamic teacher");
  train_cmd->add_option("--data", train.data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", train.out_dir, "run output directory")->required();
  train_cmd->add_option("--resume", train.resume, "checkpoint to continue from");
  train_cmd->add_option("--iters", train.iters, "iterations for this invocation");
  train_cmd->add_option("--seed", train.distill.seed, "training seed");
  train_cmd->add_option("--lambda", train.distill.lambda, "distillation loss weight");
  train_cmd->add_option("--tau", train.distill.tau, "distillation temperature");
  train_cmd->add_option("--segments", train.distill.segments, "adaptor segment count");
  train_cmd->add_option("--fpn-channels", train.distill.fpn_channels, "pyramid channel width");
  train_cmd->add_option("--shift", train.distill.shift_size, "axial shift size (odd)");
  train_cmd->add_option("--batch", train.distill.batch_size, "batch size");
  train_cmd->add_option("--lr", train.distill.lr_peak, "peak learning rate");
  train_cmd->add_option("--lr-start", train.distill.lr_start, "warm-up start learning rate");
  train_cmd->add_option("--warmup", train.distill.warmup_iters, "warm-up iterations");
  train_cmd->add_option("--total-iters", train.distill.total_iters, "default run length");
  train_cmd->add_option("--heads", train.heads, "attention heads");
  train_cmd->add_option("--stage-dims", train.stage_dims,
                        "backbone stage widths (default 64 128 256 512)");
  train_cmd->add_option("--stage-depth", train.stage_depth, "blocks per backbone stage");
  train_cmd->add_option("--mlp-ratio", train.mlp_ratio, "hidden expansion of the block MLP");
  train_cmd->add_option("--tower-depth", train.tower_depth, "head tower depth");
  train_cmd->add_option("--checkpoint-interval", train.distill.checkpoint_interval,
                        "periodic checkpoint interval (iterations)");
  train_cmd->add_flag("--no-teacher", [&train](std::int64_t) { train.distill.teacher_enabled = false; },
                      "train the plain student baseline");
  train_cmd->add_flag("--tau-squared", train.distill.tau_squared,
                      "scale the distillation term by tau^2");
  std::string domain_name = "full";
  train_cmd->add_option("--softmax-domain", domain_name, "full | channel | position")
      ->check(CLI::IsMember({"full", "channel", "position"}));
  train_cmd->add_flag("--weighted-aggregation", train.weighted_aggregation,
                      "learned 3-way branch reweighting in the adaptor");
  train_cmd->add_flag("--overwrite", train.overwrite, "replace existing run artifacts");
  train_cmd->add_flag("--verbose", [&train](std::int64_t) { train.quiet = false; },
                      "periodic progress lines");

  // ---- eval ----
  EvalArgs eval_args;
  std::string split_name = "test";
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--data", eval_args.data_dir, "dataset directory")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--split", split_name, "train|test")
      ->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--detections", eval_args.detections_out,
                       "dump decoded detections as JSON lines");

  // ---- report ----
  ReportArgs report;
  CLI::App* report_cmd = app.add_subcommand("report", "run an ablation sweep and tabulate it");
  report_cmd->add_option("--data", report.data_dir, "dataset directory")->required();
  report_cmd->add_option("--out", report.out_dir, "report output directory")->required();
  report_cmd->add_option("--sweep", report.sweep, "tau | channels | lambda");
  report_cmd->add_option("--iters", report.iters, "iterations per sweep cell");
  report_cmd->add_option("--seed", report.base.seed, "seed shared by every cell");
  report_cmd->add_option("--lambda", report.base.lambda, "distillation weight for non-lambda sweeps");
  report_cmd->add_option("--tau", report.base.tau, "temperature for non-tau sweeps");
  report_cmd->add_option("--fpn-channels", report.base.fpn_channels,
                         "pyramid width for non-channel sweeps");
  report_cmd->add_option("--segments", report.base.segments, "adaptor segment count");
  report_cmd->add_option("--batch", report.base.batch_size, "batch size");
  report_cmd->add_option("--lr", report.base.lr_peak, "peak learning rate");
  report_cmd->add_option("--warmup", report.base.warmup_iters, "warm-up iterations");
  report_cmd->add_option("--heads", report.heads, "attention heads");
  report_cmd->add_option("--stage-dims", report.stage_dims,
                         "backbone stage widths (default 64 128 256 512)");
  report_cmd->add_option("--stage-depth", report.stage_depth, "blocks per backbone stage");
  report_cmd->add_option("--mlp-ratio", report.mlp_ratio, "hidden expansion of the block MLP");
  report_cmd->add_option("--tower-depth", report.tower_depth, "head tower depth");
  report_cmd->add_flag("--overwrite", report.overwrite, "replace existing report artifacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  return guard_errors(
      [&]() -> int {
        if (synth_cmd->parsed()) return run_synth(synth, std::cout);
        if (train_cmd->parsed()) {
          train.distill.domain = domain_name == "channel"
                                     ? SoftmaxDomain::PerChannel
                                     : (domain_name == "position" ? SoftmaxDomain::PerPosition
                                                                  : SoftmaxDomain::FullMap);
          return run_train(train, std::cout);
        }
        if (eval_cmd->parsed()) {
          eval_args.split = split_name == "train" ? Split::Train : Split::Test;
          return run_eval(eval_args, std::cout);
        }
        if (report_cmd->parsed()) return run_report(report, std::cout);
        return kExitUsage;
      },
      std::cerr);
}
