#include "faultdet/head.hpp"

#include <algorithm>
#include <cmath>

namespace faultdet {

namespace {

Param& setup(Param& p, std::string name, const Shape& s, ParamStore& store) {
  p.name = std::move(name);
  p.value = Tensor(s);
  p.zero_grad();
  store.reg(&p);
  return p;
}

// Upper bound on the normalized half-extent handled by each level; level 0
// is the finest. Caps 0.1/0.2/0.4 route full-image boxes (extent 0.5) to the
// coarsest level.
double level_range_cap(int level, int levels) {
  if (level >= levels - 1) return 1e9;
  return 0.1 * static_cast<double>(1 << level);
}

}  // namespace

DetectionHead::DetectionHead(const std::string& prefix, const HeadConfig& cfg, ParamStore& store,
                             Rng& rng)
    : cfg_(cfg) {
  if (cfg_.num_classes < 1 || cfg_.channels < 1 || cfg_.levels < 1)
    throw ConfigError("DetectionHead: bad configuration");
  const int c = cfg_.channels;
  for (int i = 0; i < cfg_.tower_depth; ++i) {
    auto layer = std::make_unique<TowerLayer>();
    const std::string lp = prefix + ".tower" + std::to_string(i);
    init_kaiming(setup(layer->w, lp + ".w", {c, c, 3, 3}, store), rng, c * 9);
    setup(layer->bias, lp + ".b", {c}, store);
    setup(layer->ln_g, lp + ".ln.g", {c}, store).value.fill(1.0);
    setup(layer->ln_b, lp + ".ln.b", {c}, store);
    tower_.push_back(std::move(layer));
  }
  init_kaiming(setup(cls_w_, prefix + ".cls.w", {cfg_.num_classes, c, 3, 3}, store), rng, c * 9);
  // rare-positive prior keeps early focal loss small
  setup(cls_b_, prefix + ".cls.b", {cfg_.num_classes}, store).value.fill(-2.944438979166441);
  init_kaiming(setup(box_w_, prefix + ".box.w", {4, c, 3, 3}, store), rng, c * 9);
  setup(box_b_, prefix + ".box.b", {4}, store);
  init_kaiming(setup(q_w_, prefix + ".quality.w", {1, c, 3, 3}, store), rng, c * 9);
  setup(q_b_, prefix + ".quality.b", {1}, store);
  for (int l = 0; l < cfg_.levels; ++l) {
    auto s = std::make_unique<Param>();
    setup(*s, prefix + ".scale" + std::to_string(l + 1), {1}, store);
    level_scale_.push_back(std::move(s));
  }
}

Prediction DetectionHead::forward(Binder& b, const std::vector<Value>& pyramid) {
  if (static_cast<int>(pyramid.size()) != cfg_.levels)
    throw ConfigError("DetectionHead: expected " + std::to_string(cfg_.levels) + " levels, got " +
                      std::to_string(pyramid.size()));
  Prediction out;
  for (int l = 0; l < cfg_.levels; ++l) {
    Value x = pyramid[static_cast<std::size_t>(l)];
    if (x.shape().rank() != 3 || x.shape()[0] != cfg_.channels)
      throw ConfigError("DetectionHead: level " + std::to_string(l + 1) + " carries " +
                        x.shape().str() + ", expected " + std::to_string(cfg_.channels) +
                        " channels");
    for (auto& layer : tower_) {
      x = conv2d(x, b(layer->w), b(layer->bias));
      x = relu(layer_norm_chan(x, b(layer->ln_g), b(layer->ln_b)));
    }
    LevelPrediction p;
    p.cls = conv2d(x, b(cls_w_), b(cls_b_));
    Value scale_v = b(*level_scale_[static_cast<std::size_t>(l)]);
    // softplus keeps distances positive; exp(scale) gives each level its range
    Value dist = softplus(conv2d(x, b(box_w_), b(box_b_)));
    p.box = mul_scalar_value(dist, exp_value(scale_v));
    p.quality = conv2d(x, b(q_w_), b(q_b_));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<LevelTargets> assign_targets(const LabelDescriptorSet& labels,
                                         const std::vector<std::pair<int, int>>& level_shapes,
                                         const HeadConfig& cfg) {
  const int levels = static_cast<int>(level_shapes.size());
  std::vector<LevelTargets> out(static_cast<std::size_t>(levels));
  for (int l = 0; l < levels; ++l) {
    auto& t = out[static_cast<std::size_t>(l)];
    const auto [h, w] = level_shapes[static_cast<std::size_t>(l)];
    t.cls = std::make_shared<Tensor>(Tensor({cfg.num_classes, h, w}));
    t.box = std::make_shared<Tensor>(Tensor({4, h, w}));
    t.quality = std::make_shared<Tensor>(Tensor({1, h, w}));
    t.pos = std::make_shared<Tensor>(Tensor({h, w}));
  }
  // area of the owning object per positive cell; smaller objects win overlaps
  std::vector<std::vector<double>> owner_area(static_cast<std::size_t>(levels));
  for (int l = 0; l < levels; ++l)
    owner_area[static_cast<std::size_t>(l)]
        .assign(static_cast<std::size_t>(level_shapes[static_cast<std::size_t>(l)].first) *
                    level_shapes[static_cast<std::size_t>(l)].second,
                1e30);

  for (const LabelDescriptor& gt : labels.items) {
    const double extent = 0.5 * std::max(gt.x2 - gt.x1, gt.y2 - gt.y1);
    int lvl = levels - 1;
    for (int l = 0; l < levels; ++l) {
      if (extent <= level_range_cap(l, levels)) {
        lvl = l;
        break;
      }
    }
    auto& t = out[static_cast<std::size_t>(lvl)];
    const auto [h, w] = level_shapes[static_cast<std::size_t>(lvl)];
    const double cx = 0.5 * (gt.x1 + gt.x2), cy = 0.5 * (gt.y1 + gt.y2);
    const double rx = cfg.center_radius / w, ry = cfg.center_radius / h;

    auto try_claim = [&](int r, int c) {
      const double ccx = (c + 0.5) / w, ccy = (r + 0.5) / h;
      const std::size_t flat = static_cast<std::size_t>(r) * w + c;
      if (owner_area[static_cast<std::size_t>(lvl)][flat] <= gt.area()) return;
      const double dl = ccx - gt.x1, dt = ccy - gt.y1, dr = gt.x2 - ccx, db = gt.y2 - ccy;
      if (std::min(std::min(dl, dr), std::min(dt, db)) <= 0.0) return;
      owner_area[static_cast<std::size_t>(lvl)][flat] = gt.area();
      if (t.pos->at(r, c) == 0.0) {
        t.pos->at(r, c) = 1.0;
      } else {
        // overwrite a previous, larger owner: clear its class bit first
        for (int k = 0; k < cfg.num_classes; ++k) t.cls->at(k, r, c) = 0.0;
      }
      t.cls->at(gt.class_id, r, c) = 1.0;
      t.box->at(0, r, c) = dl;
      t.box->at(1, r, c) = dt;
      t.box->at(2, r, c) = dr;
      t.box->at(3, r, c) = db;
      t.quality->at(0, r, c) =
          std::sqrt((std::min(dl, dr) / std::max(dl, dr)) * (std::min(dt, db) / std::max(dt, db)));
    };

    const int r0 = std::max(0, static_cast<int>((cy - ry) * h));
    const int r1 = std::min(h - 1, static_cast<int>((cy + ry) * h));
    const int c0 = std::max(0, static_cast<int>((cx - rx) * w));
    const int c1 = std::min(w - 1, static_cast<int>((cx + rx) * w));
    bool claimed = false;
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double ccx = (c + 0.5) / w, ccy = (r + 0.5) / h;
        if (std::fabs(ccx - cx) > rx || std::fabs(ccy - cy) > ry) continue;
        const std::size_t before = static_cast<std::size_t>(r) * w + c;
        const double prev = owner_area[static_cast<std::size_t>(lvl)][before];
        try_claim(r, c);
        claimed = claimed || owner_area[static_cast<std::size_t>(lvl)][before] != prev;
      }
    if (!claimed) {
      // guarantee one positive: the cell whose center is nearest the box center
      const int r = std::clamp(static_cast<int>(cy * h), 0, h - 1);
      const int c = std::clamp(static_cast<int>(cx * w), 0, w - 1);
      const std::size_t flat = static_cast<std::size_t>(r) * w + c;
      const double ccx = (c + 0.5) / w, ccy = (r + 0.5) / h;
      const double dl = std::max(1e-4, ccx - gt.x1), dt = std::max(1e-4, ccy - gt.y1);
      const double dr = std::max(1e-4, gt.x2 - ccx), db = std::max(1e-4, gt.y2 - ccy);
      if (owner_area[static_cast<std::size_t>(lvl)][flat] > gt.area()) {
        owner_area[static_cast<std::size_t>(lvl)][flat] = gt.area();
        if (out[static_cast<std::size_t>(lvl)].pos->at(r, c) != 0.0)
          for (int k = 0; k < cfg.num_classes; ++k)
            out[static_cast<std::size_t>(lvl)].cls->at(k, r, c) = 0.0;
        auto& t2 = out[static_cast<std::size_t>(lvl)];
        t2.pos->at(r, c) = 1.0;
        t2.cls->at(gt.class_id, r, c) = 1.0;
        t2.box->at(0, r, c) = dl;
        t2.box->at(1, r, c) = dt;
        t2.box->at(2, r, c) = dr;
        t2.box->at(3, r, c) = db;
        t2.quality->at(0, r, c) = std::sqrt((std::min(dl, dr) / std::max(dl, dr)) *
                                            (std::min(dt, db) / std::max(dt, db)));
      }
    }
  }
  for (auto& t : out) {
    int n = 0;
    for (std::int64_t i = 0; i < t.pos->numel(); ++i) n += (*t.pos)[i] != 0.0 ? 1 : 0;
    t.num_pos = n;
  }
  return out;
}

Value detection_loss(const Prediction& pred, const LabelDescriptorSet& labels,
                     const HeadConfig& cfg) {
  if (pred.empty()) throw ConfigError("detection_loss: empty prediction");
  std::vector<std::pair<int, int>> shapes;
  for (const auto& p : pred) shapes.emplace_back(p.cls.shape()[1], p.cls.shape()[2]);
  auto targets = assign_targets(labels, shapes, cfg);

  int total_pos = 0;
  for (const auto& t : targets) total_pos += t.num_pos;
  const double norm = 1.0 / std::max(1, total_pos);

  Value loss;
  for (std::size_t l = 0; l < pred.size(); ++l) {
    const auto& t = targets[l];
    Value cls_l = focal_loss_sum(pred[l].cls, t.cls, cfg.focal_alpha, cfg.focal_gamma);
    Value lvl = cls_l;
    if (t.num_pos > 0) {
      Value box_l = iou_loss_sum(pred[l].box, t.box, t.pos);
      auto qmask = std::make_shared<Tensor>(Tensor({1, t.pos->shape()[0], t.pos->shape()[1]}));
      double entropy_floor = 0.0;
      for (std::int64_t i = 0; i < t.pos->numel(); ++i) {
        (*qmask)[i] = (*t.pos)[i];
        if ((*t.pos)[i] != 0.0) {
          const double y = (*t.quality)[i];
          if (y > 0.0 && y < 1.0)
            entropy_floor += -y * std::log(y) - (1.0 - y) * std::log(1.0 - y);
        }
      }
      // subtracting the target entropy turns the BCE into a KL with zero
      // minimum, so a saturated-correct prediction scores ~0
      Value q_l = add_scalar(bce_logits_sum(pred[l].quality, t.quality, qmask), -entropy_floor);
      lvl = add(lvl, add(box_l, q_l));
    }
    loss = loss.defined() ? add(loss, lvl) : lvl;
  }
  return scale(loss, norm);
}

double box_iou(double ax1, double ay1, double ax2, double ay2, double bx1, double by1, double bx2,
               double by2) {
  const double ix = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double iy = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = ix * iy;
  const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

std::vector<Detection> decode_detections(const Prediction& pred, int image_id,
                                         const HeadConfig& cfg) {
  std::vector<Detection> candidates;
  for (const auto& level : pred) {
    const int k = level.cls.shape()[0], h = level.cls.shape()[1], w = level.cls.shape()[2];
    const Tensor& cls = level.cls.val();
    const Tensor& box = level.box.val();
    const Tensor& q = level.quality.val();
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double quality = 1.0 / (1.0 + std::exp(-q.at(0, r, c)));
        const double cx = (c + 0.5) / w, cy = (r + 0.5) / h;
        for (int cl = 0; cl < k; ++cl) {
          const double p = 1.0 / (1.0 + std::exp(-cls.at(cl, r, c)));
          const double score = std::sqrt(p * quality);
          if (score < cfg.score_floor) continue;
          Detection d;
          d.image_id = image_id;
          d.class_id = cl;
          d.score = score;
          d.x1 = std::clamp(cx - box.at(0, r, c), 0.0, 1.0);
          d.y1 = std::clamp(cy - box.at(1, r, c), 0.0, 1.0);
          d.x2 = std::clamp(cx + box.at(2, r, c), 0.0, 1.0);
          d.y2 = std::clamp(cy + box.at(3, r, c), 0.0, 1.0);
          if (d.x1 >= d.x2 || d.y1 >= d.y2) continue;
          candidates.push_back(d);
        }
      }
    }
  }
  auto order = [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.x1 != b.x1) return a.x1 < b.x1;
    if (a.y1 != b.y1) return a.y1 < b.y1;
    if (a.x2 != b.x2) return a.x2 < b.x2;
    return a.y2 < b.y2;
  };
  std::vector<Detection> kept;
  std::vector<Detection> cls_pool;
  int max_class = 0;
  for (const auto& d : candidates) max_class = std::max(max_class, d.class_id);
  for (int cl = 0; cl <= max_class; ++cl) {
    cls_pool.clear();
    for (const auto& d : candidates)
      if (d.class_id == cl) cls_pool.push_back(d);
    std::sort(cls_pool.begin(), cls_pool.end(), order);
    std::vector<bool> dead(cls_pool.size(), false);
    for (std::size_t i = 0; i < cls_pool.size(); ++i) {
      if (dead[i]) continue;
      kept.push_back(cls_pool[i]);
      for (std::size_t j = i + 1; j < cls_pool.size(); ++j) {
        if (dead[j]) continue;
        if (box_iou(cls_pool[i].x1, cls_pool[i].y1, cls_pool[i].x2, cls_pool[i].y2, cls_pool[j].x1,
                    cls_pool[j].y1, cls_pool[j].x2, cls_pool[j].y2) > cfg.nms_iou)
          dead[j] = true;
      }
    }
  }
  std::sort(kept.begin(), kept.end(), order);
  if (static_cast<int>(kept.size()) > cfg.max_detections)
    kept.resize(static_cast<std::size_t>(cfg.max_detections));
  return kept;
}

}  // namespace faultdet
