#include "faultdet/trainer.hpp"

#include "faultdet/config.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace faultdet {

namespace {

constexpr char kMagic[8] = {'F', 'D', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

template <class T>
void fnv_value(std::uint64_t& h, const T& v) {
  fnv_mix(h, &v, sizeof(T));
}

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  write_bytes(out, &v, sizeof(T));
}

void write_string(std::ofstream& out, const std::string& s) {
  const std::uint32_t n = static_cast<std::uint32_t>(s.size());
  write_pod(out, n);
  write_bytes(out, s.data(), s.size());
}

void write_tensor(std::ofstream& out, const Tensor& t) {
  const std::uint32_t rank = static_cast<std::uint32_t>(t.shape().rank());
  write_pod(out, rank);
  for (int i = 0; i < t.shape().rank(); ++i) {
    const std::uint32_t d = static_cast<std::uint32_t>(t.shape()[i]);
    write_pod(out, d);
  }
  write_bytes(out, t.data(), sizeof(double) * static_cast<std::size_t>(t.numel()));
}

template <class T>
void read_pod(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint " + path + " is truncated");
}

std::string read_string(std::ifstream& in, const std::string& path) {
  std::uint32_t n = 0;
  read_pod(in, n, path);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("checkpoint " + path + " is truncated");
  return s;
}

Tensor read_tensor(std::ifstream& in, const std::string& path) {
  std::uint32_t rank = 0;
  read_pod(in, rank, path);
  if (rank > 4) throw IoError("checkpoint " + path + " carries a bad tensor rank");
  int dims[4] = {0, 0, 0, 0};
  std::int64_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t d = 0;
    read_pod(in, d, path);
    dims[i] = static_cast<int>(d);
    numel *= dims[i];
  }
  Shape s;
  switch (rank) {
    case 0: s = Shape::scalar(); break;
    case 1: s = Shape({dims[0]}); break;
    case 2: s = Shape({dims[0], dims[1]}); break;
    case 3: s = Shape({dims[0], dims[1], dims[2]}); break;
    default: s = Shape({dims[0], dims[1], dims[2], dims[3]}); break;
  }
  Tensor t(s);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(double) * numel));
  if (!in) throw IoError("checkpoint " + path + " is truncated");
  return t;
}

}  // namespace

void SgdOptimizer::step(ParamStore& params, double lr) {
  for (auto& [name, p] : params.items()) {
    auto [it, inserted] = velocity_.try_emplace(name, Tensor(p->value.shape()));
    Tensor& v = it->second;
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad[i] + weight_decay_ * p->value[i];
      v[i] = momentum_ * v[i] + g;
      p->value[i] -= lr * v[i];
    }
  }
}

std::uint64_t config_hash(const ModelConfig& mc, const DistillConfig& dc) {
  std::uint64_t h = 1469598103934665603ULL;
  fnv_value(h, mc.image_size);
  fnv_value(h, mc.num_classes);
  fnv_value(h, mc.fpn_channels);
  fnv_value(h, mc.shift_size);
  fnv_value(h, mc.dilation);
  fnv_value(h, mc.heads);
  fnv_value(h, mc.segments);
  fnv_value(h, mc.weighted_aggregation);
  fnv_value(h, mc.tower_depth);
  for (const auto& s : mc.stages) {
    fnv_value(h, s.patch_merge);
    fnv_value(h, s.dim);
    fnv_value(h, s.depth);
    fnv_value(h, s.mlp_ratio);
    fnv_value(h, s.shift.shift_size);
    fnv_value(h, s.shift.dilation);
  }
  fnv_value(h, dc.tau);
  fnv_value(h, dc.lambda);
  fnv_value(h, dc.segments);
  fnv_value(h, dc.fpn_channels);
  fnv_value(h, dc.warmup_iters);
  fnv_value(h, dc.lr_start);
  fnv_value(h, dc.lr_peak);
  fnv_value(h, dc.seed);
  fnv_value(h, dc.batch_size);
  fnv_value(h, dc.momentum);
  fnv_value(h, dc.weight_decay);
  fnv_value(h, dc.tau_squared);
  fnv_value(h, dc.domain);
  fnv_value(h, dc.teacher_enabled);
  return h;
}

TrainState::TrainState(const ModelConfig& mc, const DistillConfig& dc)
    : model_cfg(mc),
      distill_cfg(dc),
      model(std::make_unique<Model>(mc, dc.seed)),
      optimizer(dc.momentum, dc.weight_decay),
      data_rng(Rng::mix(dc.seed, 0xda7aULL)) {
  model_cfg.finalize();
  distill_cfg.validate();
}

void TrainState::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  write_bytes(out, kMagic, sizeof(kMagic));
  write_pod(out, kCheckpointVersion);
  const std::uint64_t hash = config_hash(model_cfg, distill_cfg);
  write_pod(out, hash);
  nlohmann::ordered_json cfg_json;
  cfg_json["model"] = to_json(model_cfg);
  cfg_json["distill"] = to_json(distill_cfg);
  write_string(out, cfg_json.dump());
  write_pod(out, iteration);
  write_string(out, data_rng.state());
  const auto& items = model->params().items();
  const std::uint32_t n_params = static_cast<std::uint32_t>(items.size());
  write_pod(out, n_params);
  for (const auto& [name, p] : items) {
    write_string(out, name);
    write_tensor(out, p->value);
  }
  const std::uint32_t n_buf = static_cast<std::uint32_t>(optimizer.buffers().size());
  write_pod(out, n_buf);
  for (const auto& [name, t] : optimizer.buffers()) {
    write_string(out, name);
    write_tensor(out, t);
  }
  if (!out) throw IoError("save_checkpoint: short write to " + path);
}

namespace {

TrainState load_checkpoint_impl(const std::string& path, const ModelConfig* expect_mc,
                                const DistillConfig* expect_dc) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("load_checkpoint: " + path + " is not a checkpoint file");
  std::uint32_t version = 0;
  read_pod(in, version, path);
  if (version != kCheckpointVersion)
    throw IoError("load_checkpoint: unsupported checkpoint version " + std::to_string(version));

  std::uint64_t hash = 0;
  read_pod(in, hash, path);
  const std::string cfg_str = read_string(in, path);
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(cfg_str);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("load_checkpoint: corrupt embedded config: " + std::string(e.what()));
  }
  const ModelConfig mc =
      expect_mc ? *expect_mc : model_config_from_json(cfg_json.at("model"));
  const DistillConfig dc =
      expect_dc ? *expect_dc : distill_config_from_json(cfg_json.at("distill"));

  TrainState state(mc, dc);
  const std::uint64_t want = config_hash(state.model_cfg, state.distill_cfg);
  if (hash != want) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64 " != %016" PRIx64, hash, want);
    throw IoError("load_checkpoint: config hash mismatch (" + std::string(buf) + ")");
  }
  read_pod(in, state.iteration, path);
  state.data_rng.set_state(read_string(in, path));
  std::uint32_t n_params = 0;
  read_pod(in, n_params, path);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = read_string(in, path);
    Tensor t = read_tensor(in, path);
    Param* p = state.model->params().find(name);
    if (!p) throw IoError("load_checkpoint: unknown parameter " + name);
    if (!(p->value.shape() == t.shape()))
      throw IoError("load_checkpoint: shape mismatch for " + name);
    p->value = std::move(t);
  }
  std::uint32_t n_buf = 0;
  read_pod(in, n_buf, path);
  for (std::uint32_t i = 0; i < n_buf; ++i) {
    const std::string name = read_string(in, path);
    state.optimizer.buffers()[name] = read_tensor(in, path);
  }
  return state;
}

}  // namespace

TrainState TrainState::load_checkpoint(const std::string& path) {
  return load_checkpoint_impl(path, nullptr, nullptr);
}

TrainState TrainState::load_checkpoint(const std::string& path, const ModelConfig& mc,
                                       const DistillConfig& dc) {
  return load_checkpoint_impl(path, &mc, &dc);
}

double learning_rate_at(const DistillConfig& cfg, std::uint64_t iter) {
  if (cfg.warmup_iters > 0 && iter < static_cast<std::uint64_t>(cfg.warmup_iters))
    return cfg.lr_start +
           (cfg.lr_peak - cfg.lr_start) * static_cast<double>(iter) / cfg.warmup_iters;
  return cfg.lr_peak;
}

std::vector<LogRow> train_loop(TrainState& state, const Dataset& data, int iters,
                               const std::function<void(const LogRow&)>& on_iter) {
  if (data.size() == 0) throw InputError("train_loop: dataset is empty");
  std::vector<LogRow> rows;
  rows.reserve(static_cast<std::size_t>(iters));
  double initial_total = -1.0;
  int high_streak = 0;
  for (int step = 0; step < iters; ++step) {
    std::vector<BatchSample> batch;
    batch.reserve(static_cast<std::size_t>(state.distill_cfg.batch_size));
    for (int i = 0; i < state.distill_cfg.batch_size; ++i) {
      const int idx = state.data_rng.uniform_int(0, data.size() - 1);
      DetectionSample s = data.sample(idx);
      batch.push_back(BatchSample{std::move(s.image), std::move(s.labels)});
    }

    state.model->params().zero_grads();
    LossParts parts;
    Binder b;
    Value total = total_loss(*state.model, b, batch, state.distill_cfg, &parts);
    backward(total);
    b.write_grads();

    const double lr = learning_rate_at(state.distill_cfg, state.iteration);
    state.optimizer.step(state.model->params(), lr);
    ++state.iteration;

    LogRow row;
    row.iter = state.iteration;
    row.det_s = parts.det_student;
    row.det_t = parts.det_teacher;
    row.distill = parts.distill;
    row.total = parts.total;
    row.lr = lr;
    rows.push_back(row);
    if (on_iter) on_iter(row);

    if (initial_total < 0.0) initial_total = row.total;
    if (row.total > 10.0 * initial_total || !std::isfinite(row.total)) {
      if (++high_streak >= 200)
        throw DivergenceError("train_loop: total loss stayed above 10x its initial value (" +
                              std::to_string(initial_total) + ") for 200 iterations");
    } else {
      high_streak = 0;
    }
  }
  return rows;
}

void write_log_csv(const std::string& path, const std::vector<LogRow>& rows, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("write_log_csv: cannot open " + path);
  if (!append) out << "iter,L_det_S,L_det_T,L_distill,L_total,lr\n";
  char buf[256];
  for (const LogRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%" PRIu64 ",%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iter, r.det_s,
                  r.det_t, r.distill, r.total, r.lr);
    out << buf;
  }
}

std::vector<LogRow> read_log_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_log_csv: cannot open " + path);
  std::vector<LogRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    LogRow r;
    if (std::sscanf(line.c_str(), "%" PRIu64 ",%lg,%lg,%lg,%lg,%lg", &r.iter, &r.det_s, &r.det_t,
                    &r.distill, &r.total, &r.lr) != 6)
      throw IoError("read_log_csv: malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

std::vector<Detection> infer_image(Model& model, const Tensor& image, int image_id) {
  NoGradGuard ng;
  Binder b;
  auto pyramid = model.student_pyramid(b, image);
  Prediction pred = model.predict(b, pyramid);
  return decode_detections(pred, image_id, model.head_config());
}

EvalResult evaluate_dataset(Model& model, const Dataset& data, std::vector<Detection>* dump) {
  std::vector<Detection> all;
  for (int i = 0; i < data.size(); ++i) {
    DetectionSample s = data.sample(i);
    auto dets = infer_image(model, s.image, s.image_id);
    all.insert(all.end(), dets.begin(), dets.end());
  }
  if (dump) *dump = all;
  return evaluate(all, data.ground_truths());
}

}  // namespace faultdet
