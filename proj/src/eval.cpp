#include "faultdet/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

namespace faultdet {

namespace {

constexpr int kNumThresholds = 10;   // 0.50 : 0.05 : 0.95
constexpr int kRecallPoints = 101;   // 0.00 : 0.01 : 1.00

double threshold(int t) { return 0.5 + 0.05 * t; }

bool detection_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  if (a.x1 != b.x1) return a.x1 < b.x1;
  if (a.y1 != b.y1) return a.y1 < b.y1;
  if (a.x2 != b.x2) return a.x2 < b.x2;
  return a.y2 < b.y2;
}

bool malformed(const Detection& d) {
  return !(d.x1 < d.x2) || !(d.y1 < d.y2) || d.x1 < 0.0 || d.y1 < 0.0 || d.x2 > 1.0 ||
         d.y2 > 1.0 || !std::isfinite(d.score);
}

// 101-point interpolated AP from a tp/fp sequence in score order.
double interpolated_ap(const std::vector<char>& tp_flags, int total_gt) {
  if (total_gt == 0) return -1.0;
  std::vector<double> precisions, recalls;
  int tp = 0, fp = 0;
  for (char f : tp_flags) {
    if (f)
      ++tp;
    else
      ++fp;
    precisions.push_back(static_cast<double>(tp) / (tp + fp));
    recalls.push_back(static_cast<double>(tp) / total_gt);
  }
  // precision envelope: best precision at recall >= r
  for (int i = static_cast<int>(precisions.size()) - 2; i >= 0; --i)
    precisions[static_cast<std::size_t>(i)] =
        std::max(precisions[static_cast<std::size_t>(i)], precisions[static_cast<std::size_t>(i) + 1]);
  double acc = 0.0;
  std::size_t j = 0;
  for (int i = 0; i < kRecallPoints; ++i) {
    const double r = static_cast<double>(i) / (kRecallPoints - 1);
    while (j < recalls.size() && recalls[j] < r - 1e-12) ++j;
    if (j < precisions.size()) acc += precisions[j];
  }
  return acc / kRecallPoints;
}

}  // namespace

EvalResult evaluate(const std::vector<Detection>& detections_in,
                    const std::vector<GroundTruth>& gts) {
  EvalResult res;
  std::vector<Detection> detections;
  detections.reserve(detections_in.size());
  for (const Detection& d : detections_in) {
    if (malformed(d)) {
      ++res.skipped_detections;
      continue;
    }
    detections.push_back(d);
  }

  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  if (classes.empty()) return res;

  double ap_sum = 0.0, ap50_sum = 0.0, ap75_sum = 0.0, ar1_sum = 0.0, ar10_sum = 0.0;
  int cells = 0;

  for (int cls : classes) {
    // ground truth per image
    std::map<int, std::vector<const GroundTruth*>> gt_by_img;
    int total_gt = 0;
    for (const auto& g : gts)
      if (g.class_id == cls) {
        gt_by_img[g.image_id].push_back(&g);
        ++total_gt;
      }
    std::vector<Detection> dets;
    for (const auto& d : detections)
      if (d.class_id == cls) dets.push_back(d);
    std::sort(dets.begin(), dets.end(), detection_order);

    for (int t = 0; t < kNumThresholds; ++t) {
      const double thr = threshold(t);
      // greedy matching in global score order
      std::map<int, std::vector<char>> used;
      for (auto& [img, v] : gt_by_img) used[img].assign(v.size(), 0);
      std::vector<char> tp_flags(dets.size(), 0);
      for (std::size_t i = 0; i < dets.size(); ++i) {
        const Detection& d = dets[i];
        auto it = gt_by_img.find(d.image_id);
        if (it == gt_by_img.end()) continue;
        double best = thr;
        int best_j = -1;
        for (std::size_t j = 0; j < it->second.size(); ++j) {
          if (used[d.image_id][j]) continue;
          const GroundTruth* g = it->second[j];
          const double iou = box_iou(d.x1, d.y1, d.x2, d.y2, g->x1, g->y1, g->x2, g->y2);
          if (iou >= best) {
            best = iou;
            best_j = static_cast<int>(j);
          }
        }
        if (best_j >= 0) {
          used[d.image_id][static_cast<std::size_t>(best_j)] = 1;
          tp_flags[i] = 1;
        }
      }
      const double ap = interpolated_ap(tp_flags, total_gt);
      ap_sum += ap;
      if (t == 0) ap50_sum += ap;
      if (t == 5) ap75_sum += ap;

      // recall at k detections per image
      for (int k : {1, 10}) {
        std::map<int, int> taken;
        std::map<int, std::vector<char>> used_k;
        for (auto& [img, v] : gt_by_img) used_k[img].assign(v.size(), 0);
        int matched = 0;
        for (const Detection& d : dets) {
          if (taken[d.image_id] >= k) continue;
          ++taken[d.image_id];
          auto it = gt_by_img.find(d.image_id);
          if (it == gt_by_img.end()) continue;
          double best = thr;
          int best_j = -1;
          for (std::size_t j = 0; j < it->second.size(); ++j) {
            if (used_k[d.image_id][j]) continue;
            const GroundTruth* g = it->second[j];
            const double iou = box_iou(d.x1, d.y1, d.x2, d.y2, g->x1, g->y1, g->x2, g->y2);
            if (iou >= best) {
              best = iou;
              best_j = static_cast<int>(j);
            }
          }
          if (best_j >= 0) {
            used_k[d.image_id][static_cast<std::size_t>(best_j)] = 1;
            ++matched;
          }
        }
        const double recall = total_gt > 0 ? static_cast<double>(matched) / total_gt : 0.0;
        if (k == 1)
          ar1_sum += recall;
        else
          ar10_sum += recall;
      }
    }
    ++cells;
  }

  const double denom = static_cast<double>(cells) * kNumThresholds;
  res.map = ap_sum / denom;
  res.ap50 = ap50_sum / cells;
  res.ap75 = ap75_sum / cells;
  res.ar1 = ar1_sum / denom;
  res.ar10 = ar10_sum / denom;
  return res;
}

void write_detections_jsonl(const std::string& path, const std::vector<Detection>& detections) {
  std::ofstream out(path);
  if (!out) throw IoError("write_detections_jsonl: cannot open " + path);
  for (const Detection& d : detections) {
    nlohmann::ordered_json j;
    j["image_id"] = d.image_id;
    j["class"] = d.class_id;
    j["box"] = {d.x1, d.y1, d.x2, d.y2};
    j["score"] = d.score;
    out << j.dump() << '\n';
  }
}

std::vector<Detection> read_detections_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_detections_jsonl: cannot open " + path);
  std::vector<Detection> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("read_detections_jsonl: bad record at line " + std::to_string(line_no) + ": " +
                    e.what());
    }
    Detection d;
    d.image_id = j.at("image_id").get<int>();
    d.class_id = j.at("class").get<int>();
    const auto& box = j.at("box");
    d.x1 = box.at(0).get<double>();
    d.y1 = box.at(1).get<double>();
    d.x2 = box.at(2).get<double>();
    d.y2 = box.at(3).get<double>();
    d.score = j.at("score").get<double>();
    out.push_back(d);
  }
  return out;
}

}  // namespace faultdet
