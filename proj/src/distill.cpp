#include "faultdet/distill.hpp"

namespace faultdet {

void DistillConfig::validate() const {
  if (tau <= 0.0) throw ConfigError("DistillConfig: tau must be positive, got " + std::to_string(tau));
  if (lambda < 0.0) throw ConfigError("DistillConfig: lambda must be nonnegative");
  if (batch_size < 1 || total_iters < 0 || warmup_iters < 0)
    throw ConfigError("DistillConfig: bad schedule");
  if (lr_start < 0.0 || lr_peak <= 0.0) throw ConfigError("DistillConfig: bad learning rates");
}

namespace {

// Rearranges a (C,H,W) map into the rows the chosen softmax domain needs.
Value domain_rows(const Value& map, SoftmaxDomain domain) {
  const int c = map.shape()[0], h = map.shape()[1], w = map.shape()[2];
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  switch (domain) {
    case SoftmaxDomain::FullMap:
      return reshape(map, Shape({1, static_cast<int>(c * hw)}));
    case SoftmaxDomain::PerChannel:
      return reshape(map, Shape({c, static_cast<int>(hw)}));
    case SoftmaxDomain::PerPosition: {
      auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(c * hw));
      std::int64_t k = 0;
      for (std::int64_t p = 0; p < hw; ++p)
        for (int ch = 0; ch < c; ++ch) (*idx)[static_cast<std::size_t>(k++)] = ch * hw + p;
      return permute_elements(map, Shape({static_cast<int>(hw), c}), idx);
    }
  }
  throw ConfigError("distill_loss: unknown softmax domain");
}

Tensor row_softened(const Tensor& rows, double tau) {
  Tensor out(rows.shape());
  const int r = rows.shape()[0], n = rows.shape()[1];
  for (int i = 0; i < r; ++i) {
    double mx = -1e308;
    for (int j = 0; j < n; ++j) mx = std::max(mx, rows.at(i, j) / tau);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(rows.at(i, j) / tau - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < n; ++j) out.at(i, j) /= z;
  }
  return out;
}

}  // namespace

Value distill_loss(const std::vector<Value>& teacher_maps,
                   const std::vector<Value>& student_maps, double tau, bool tau_squared,
                   SoftmaxDomain domain) {
  if (tau <= 0.0) throw ConfigError("distill_loss: tau must be positive, got " + std::to_string(tau));
  if (teacher_maps.size() != student_maps.size() || teacher_maps.empty())
    throw ConfigError("distill_loss: level count mismatch");
  const double factor = tau_squared ? tau * tau : 1.0;

  Value acc;
  for (std::size_t l = 0; l < teacher_maps.size(); ++l) {
    if (teacher_maps[l].shape() != student_maps[l].shape())
      throw ConfigError("distill_loss: level " + std::to_string(l + 1) + " shapes differ: " +
                        teacher_maps[l].shape().str() + " vs " + student_maps[l].shape().str());
    Value t_rows = domain_rows(detach(teacher_maps[l]), domain);
    auto teacher_probs = std::make_shared<Tensor>(row_softened(t_rows.val(), tau));
    Value s_rows = domain_rows(student_maps[l], domain);

    // per-row KL(teacher || student), averaged over rows
    const int rows = s_rows.shape()[0], cols = s_rows.shape()[1];
    auto q = std::make_shared<Tensor>(row_softened(s_rows.val(), tau));
    double loss = 0.0;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const double p = teacher_probs->at(i, j);
        if (p <= 0.0) continue;
        loss += p * (std::log(p) - std::log(std::max(q->at(i, j), 1e-300)));
      }
    loss *= factor / rows;
    Value lvl = make_node(
        Tensor::scalar(loss), {s_rows},
        [teacher_probs, q, tau, factor, rows](Node& self) {
          if (Tensor* gx = grad_sink(self.parents[0])) {
            const double g = self.grad[0] * factor / (tau * rows);
            double* dst = gx->data();
            const std::int64_t n = gx->numel();
            for (std::int64_t i = 0; i < n; ++i) dst[i] += g * ((*q)[i] - (*teacher_probs)[i]);
          }
        },
        "kl_rows");
    acc = acc.defined() ? add(acc, lvl) : lvl;
  }
  return scale(acc, 1.0 / static_cast<double>(teacher_maps.size()));
}

Value total_loss(Model& model, Binder& b, const std::vector<BatchSample>& batch,
                 const DistillConfig& cfg, LossParts* parts) {
  cfg.validate();
  if (batch.empty()) throw InputError("total_loss: empty batch");
  const HeadConfig& hc = model.head_config();

  Value acc_s, acc_t, acc_d;
  for (const BatchSample& sample : batch) {
    auto pyramid = model.student_pyramid(b, sample.image);
    Value det_s = detection_loss(model.predict(b, pyramid), sample.labels, hc);
    acc_s = acc_s.defined() ? add(acc_s, det_s) : det_s;
    if (cfg.teacher_enabled) {
      auto teacher_maps = model.teacher_features(b, pyramid, sample.labels);
      Value det_t = detection_loss(model.predict(b, teacher_maps), sample.labels, hc);
      acc_t = acc_t.defined() ? add(acc_t, det_t) : det_t;
      if (cfg.lambda != 0.0) {
        auto adapted = model.adapted_student(b, pyramid);
        Value dl = distill_loss(teacher_maps, adapted, cfg.tau, cfg.tau_squared, cfg.domain);
        acc_d = acc_d.defined() ? add(acc_d, dl) : dl;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  Value total = scale(acc_s, inv);
  if (parts) {
    *parts = LossParts{};
    parts->det_student = total.val().item();
  }
  if (cfg.teacher_enabled) {
    Value det_t = scale(acc_t, inv);
    if (parts) parts->det_teacher = det_t.val().item();
    total = add(total, det_t);
    if (cfg.lambda != 0.0) {
      Value dl = scale(acc_d, inv);
      if (parts) parts->distill = dl.val().item();
      total = add(total, scale(dl, cfg.lambda));
    }
  }
  if (parts) parts->total = cfg.teacher_enabled
                                ? parts->det_student + parts->det_teacher + cfg.lambda * parts->distill
                                : parts->det_student;
  return total;
}

}  // namespace faultdet
