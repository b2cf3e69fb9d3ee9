#include "faultdet/runner.hpp"

#include <cinttypes>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "faultdet/config.hpp"
#include "faultdet/plot.hpp"

namespace fs = std::filesystem;

namespace faultdet {

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

std::string eval_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["mAP"] = r.map;
  j["AP50"] = r.ap50;
  j["AP75"] = r.ap75;
  j["AR1"] = r.ar1;
  j["AR10"] = r.ar10;
  j["skipped_detections"] = r.skipped_detections;
  return j.dump();
}

void print_eval_table(std::ostream& log, const EvalResult& r) {
  log << "  metric   value\n";
  char buf[64];
  auto row = [&](const char* name, double v) {
    std::snprintf(buf, sizeof(buf), "  %-8s %.4f\n", name, v);
    log << buf;
  };
  row("mAP", r.map);
  row("AP50", r.ap50);
  row("AP75", r.ap75);
  row("AR1", r.ar1);
  row("AR10", r.ar10);
  if (r.skipped_detections > 0)
    log << "  skipped  " << r.skipped_detections << " malformed detections\n";
}

std::vector<PlotSeries> loss_series(const std::vector<LogRow>& rows) {
  PlotSeries total{"L_total", {}}, det_s{"L_det_S", {}}, det_t{"L_det_T", {}},
      dist{"L_distill", {}};
  for (const auto& r : rows) {
    total.ys.push_back(r.total);
    det_s.ys.push_back(r.det_s);
    det_t.ys.push_back(r.det_t);
    dist.ys.push_back(r.distill);
  }
  return {total, det_s, det_t, dist};
}

}  // namespace

ModelConfig make_model_config(const TrainArgs& args, int image_size, int num_classes) {
  ModelConfig mc;
  mc.image_size = image_size;
  mc.num_classes = num_classes;
  mc.fpn_channels = args.distill.fpn_channels;
  mc.shift_size = args.distill.shift_size;
  mc.dilation = args.dilation;
  mc.heads = args.heads;
  mc.segments = args.distill.segments;
  mc.weighted_aggregation = args.weighted_aggregation;
  mc.tower_depth = args.tower_depth;
  if (!args.stage_dims.empty()) {
    mc.stages.clear();
    for (std::size_t i = 0; i < args.stage_dims.size(); ++i) {
      StageConfig sc;
      sc.patch_merge = i == 0 ? 4 : 2;
      sc.dim = args.stage_dims[i];
      sc.depth = args.stage_depth;
      sc.mlp_ratio = args.mlp_ratio;
      sc.shift = AxialShiftConfig{args.distill.shift_size, args.dilation, sc.dim};
      mc.stages.push_back(sc);
    }
  }
  mc.finalize();
  return mc;
}

int run_synth(const SynthArgs& args, std::ostream& log) {
  if (args.out_dir.empty()) throw InputError("synth: --out is required");
  generate_dataset(args.cfg, args.out_dir, args.overwrite);
  Dataset train(args.out_dir, Split::Train);
  Dataset test(args.out_dir, Split::Test);
  std::int64_t objects = 0, faults = 0;
  for (const Dataset* d : {&train, &test})
    for (int i = 0; i < d->size(); ++i)
      for (const auto& l : d->labels_of(i).items) {
        ++objects;
        faults += l.class_id == 1 ? 1 : 0;
      }
  log << "dataset written to " << args.out_dir << "\n"
      << "  images: " << train.size() << " train / " << test.size() << " test\n"
      << "  objects: " << objects << " (" << faults << " fault-class)\n"
      << "  image size: " << args.cfg.image_size << "\n";
  return kExitOk;
}

int run_train(const TrainArgs& args, std::ostream& log) {
  if (args.data_dir.empty() || args.out_dir.empty())
    throw InputError("train: --data and --out are required");
  Dataset data(args.data_dir, Split::Train);
  if (data.size() == 0) throw InputError("train: training split is empty");
  ensure_dir(args.out_dir);

  const ModelConfig mc = make_model_config(args, data.config().image_size, data.config().num_classes);
  const fs::path out(args.out_dir);
  const std::string log_path = (out / "run_log.csv").string();

  std::unique_ptr<TrainState> state;
  bool resuming = false;
  if (!args.resume.empty()) {
    state = std::make_unique<TrainState>(TrainState::load_checkpoint(args.resume, mc, args.distill));
    resuming = true;
  } else {
    if (fs::exists(log_path) && !args.overwrite)
      throw IoError("train: " + log_path + " exists (pass --overwrite)");
    state = std::make_unique<TrainState>(mc, args.distill);
  }

  nlohmann::ordered_json echo;
  echo["model"] = to_json(state->model_cfg);
  echo["distill"] = to_json(state->distill_cfg);
  echo["data"] = args.data_dir;
  write_text((out / "run_config.json").string(), echo.dump(2) + "\n");

  const int iters = args.iters > 0 ? args.iters : state->distill_cfg.total_iters;
  log << "training for " << iters << " iterations on " << data.size() << " images ("
      << state->model->total_parameters() << " parameters)\n";

  std::ofstream csv;
  if (resuming && fs::exists(log_path)) {
    csv.open(log_path, std::ios::app);
  } else {
    csv.open(log_path, std::ios::trunc);
    csv << "iter,L_det_S,L_det_T,L_distill,L_total,lr\n";
  }
  if (!csv) throw IoError("train: cannot write " + log_path);

  std::vector<LogRow> rows;
  char buf[256];
  auto on_iter = [&](const LogRow& r) {
    std::snprintf(buf, sizeof(buf), "%" PRIu64 ",%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iter, r.det_s,
                  r.det_t, r.distill, r.total, r.lr);
    csv << buf;
    if (state->distill_cfg.checkpoint_interval > 0 &&
        r.iter % static_cast<std::uint64_t>(state->distill_cfg.checkpoint_interval) == 0)
      state->save_checkpoint((out / ("checkpoint_iter" + std::to_string(r.iter) + ".ckpt")).string());
    if (!args.quiet && r.iter % 50 == 0)
      log << "  iter " << r.iter << " total " << r.total << " lr " << r.lr << "\n";
  };

  try {
    rows = train_loop(*state, data, iters, on_iter);
  } catch (const DivergenceError&) {
    csv.close();
    state->save_checkpoint((out / "checkpoint_diverged.ckpt").string());
    throw;
  }
  csv.close();

  state->save_checkpoint((out / "checkpoint_final.ckpt").string());
  render_line_plot((out / "loss_curve.png").string(), loss_series(read_log_csv(log_path)));
  log << "final total loss " << (rows.empty() ? 0.0 : rows.back().total) << " after iteration "
      << state->iteration << "\n";
  return kExitOk;
}

int run_eval(const EvalArgs& args, std::ostream& log, EvalResult* result_out) {
  if (args.data_dir.empty() || args.checkpoint.empty())
    throw InputError("eval: --data and --checkpoint are required");
  TrainState state = TrainState::load_checkpoint(args.checkpoint);
  Dataset data(args.data_dir, args.split);
  if (data.size() == 0) throw InputError("eval: selected split is empty");
  if (data.config().image_size != state.model_cfg.image_size)
    throw InputError("eval: dataset image size " + std::to_string(data.config().image_size) +
                     " does not match the checkpoint model (" +
                     std::to_string(state.model_cfg.image_size) + ")");

  std::vector<Detection> dets;
  EvalResult r = evaluate_dataset(*state.model, data, &dets);
  if (!args.detections_out.empty()) write_detections_jsonl(args.detections_out, dets);
  print_eval_table(log, r);
  log << eval_json(r) << "\n";
  if (result_out) *result_out = r;
  return kExitOk;
}

int run_report(const ReportArgs& args, std::ostream& log) {
  if (args.data_dir.empty() || args.out_dir.empty())
    throw InputError("report: --data and --out are required");
  const fs::path out(args.out_dir);
  if (fs::exists(out / "report.md") && !args.overwrite)
    throw IoError("report: " + (out / "report.md").string() + " exists (pass --overwrite)");
  ensure_dir(args.out_dir);

  struct Cell {
    std::string name;
    double grid_value;
    DistillConfig cfg;
  };
  std::vector<Cell> cells;
  if (args.sweep == "tau") {
    for (double tau : {1.0, 5.0, 10.0, 15.0, 20.0}) {
      Cell c{"tau_" + std::to_string(static_cast<int>(tau)), tau, args.base};
      c.cfg.tau = tau;
      cells.push_back(c);
    }
  } else if (args.sweep == "channels") {
    for (int ch : {256, 128, 64, 32}) {
      Cell c{"fpn_" + std::to_string(ch), static_cast<double>(ch), args.base};
      c.cfg.fpn_channels = ch;
      cells.push_back(c);
    }
  } else if (args.sweep == "lambda") {
    for (double lambda : {0.0, 1.0}) {
      Cell c{"lambda_" + std::to_string(static_cast<int>(lambda)), lambda, args.base};
      c.cfg.lambda = lambda;
      c.cfg.teacher_enabled = lambda != 0.0;  // the baseline trains without the teacher
      cells.push_back(c);
    }
  } else {
    throw InputError("report: unknown sweep '" + args.sweep + "' (tau|channels|lambda)");
  }

  struct Row {
    std::string name;
    double grid;
    EvalResult eval;
    double final_total = 0.0;
    std::int64_t params = 0;
  };
  std::vector<Row> results;
  for (const Cell& cell : cells) {
    const std::string cell_dir = (out / "cells" / cell.name).string();
    ensure_dir(cell_dir);
    TrainArgs t;
    t.data_dir = args.data_dir;
    t.out_dir = cell_dir;
    t.distill = cell.cfg;
    t.iters = args.iters;
    t.heads = args.heads;
    t.stage_dims = args.stage_dims;
    t.stage_depth = args.stage_depth;
    t.mlp_ratio = args.mlp_ratio;
    t.tower_depth = args.tower_depth;
    t.overwrite = true;
    log << "[report] cell " << cell.name << "\n";
    run_train(t, log);

    EvalArgs e;
    e.data_dir = args.data_dir;
    e.checkpoint = (fs::path(cell_dir) / "checkpoint_final.ckpt").string();
    e.split = Split::Test;
    Row row;
    row.name = cell.name;
    row.grid = cell.grid_value;
    std::ostringstream sink;
    run_eval(e, sink, &row.eval);

    const auto rows = read_log_csv((fs::path(cell_dir) / "run_log.csv").string());
    row.final_total = rows.empty() ? 0.0 : rows.back().total;
    TrainState st = TrainState::load_checkpoint(e.checkpoint);
    row.params = st.model->total_parameters();
    results.push_back(row);
  }

  std::ostringstream md;
  md << "# Sweep report: " << args.sweep << "\n\n";
  md << "Dataset: `" << args.data_dir << "`, " << args.iters << " iterations per cell, seed "
     << args.base.seed << ".\n\n";
  md << "| cell | " << args.sweep << " | mAP | AP50 | AP75 | AR1 | AR10 | params | final loss |\n";
  md << "|---|---|---|---|---|---|---|---|---|\n";
  char buf[256];
  for (const Row& r : results) {
    std::snprintf(buf, sizeof(buf), "| %s | %g | %.4f | %.4f | %.4f | %.4f | %.4f | %lld | %.4f |\n",
                  r.name.c_str(), r.grid, r.eval.map, r.eval.ap50, r.eval.ap75, r.eval.ar1,
                  r.eval.ar10, static_cast<long long>(r.params), r.final_total);
    md << buf;
  }
  md << "\nPer-cell run logs and loss curves live under `cells/`.\n";
  write_text((out / "report.md").string(), md.str());

  PlotSeries map_series{"mAP", {}};
  for (const Row& r : results) map_series.ys.push_back(r.eval.map);
  render_line_plot((out / "sweep_map.png").string(), {map_series});
  log << "report written to " << (out / "report.md").string() << "\n";
  return kExitOk;
}

int guard_errors(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace faultdet
