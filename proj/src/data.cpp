#include "faultdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "faultdet/png_io.hpp"

namespace fs = std::filesystem;

namespace faultdet {

void SynthConfig::validate() const {
  if (image_size < 32 || image_size % 32 != 0)
    throw ConfigError("SynthConfig: image size " + std::to_string(image_size) +
                      " must be a positive multiple of 32");
  if (num_classes != 2) throw ConfigError("SynthConfig: the component taxonomy has 2 classes");
  if (min_objects < 0 || max_objects < min_objects)
    throw ConfigError("SynthConfig: bad objects-per-image range");
  if (fault_rate < 0.0 || fault_rate > 1.0) throw ConfigError("SynthConfig: bad fault rate");
  if (min_box_frac <= 0.0 || max_box_frac > 0.95 || min_box_frac > max_box_frac)
    throw ConfigError("SynthConfig: bad box size range");
  if (train_count < 0 || test_count < 0 || train_count + test_count == 0)
    throw ConfigError("SynthConfig: empty dataset");
}

namespace {

struct Rect {
  double x1, y1, x2, y2;
};

double rect_iou(const Rect& a, const Rect& b) {
  return box_iou(a.x1, a.y1, a.x2, a.y2, b.x1, b.y1, b.x2, b.y2);
}

void fill_rect(std::vector<float>& rgb, int s, const Rect& r, const float color[3]) {
  const int x0 = std::clamp(static_cast<int>(r.x1 * s), 0, s - 1);
  const int x1 = std::clamp(static_cast<int>(r.x2 * s), 0, s);
  const int y0 = std::clamp(static_cast<int>(r.y1 * s), 0, s - 1);
  const int y1 = std::clamp(static_cast<int>(r.y2 * s), 0, s);
  for (int c = 0; c < 3; ++c)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x)
        rgb[(static_cast<std::size_t>(c) * s + y) * s + x] = color[c];
}

}  // namespace

RenderedImage render_image(const SynthConfig& cfg, int image_id) {
  cfg.validate();
  Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(image_id) + 0x1000));
  const int s = cfg.image_size;
  RenderedImage out;
  out.rgb.assign(static_cast<std::size_t>(3) * s * s, 0.0f);

  // layered background: base tint, two sinusoidal gradients, uniform clutter
  float base[3];
  for (float& b : base) b = static_cast<float>(0.32 + 0.18 * rng.uniform());
  const double fx = rng.uniform(0.5, 2.5), fy = rng.uniform(0.5, 2.5);
  const double px = rng.uniform(0.0, 6.283), py = rng.uniform(0.0, 6.283);
  const double amp = 0.05 + 0.05 * cfg.clutter;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        double v = base[c];
        v += amp * std::sin(6.283 * fx * x / s + px + 0.7 * c);
        v += amp * std::sin(6.283 * fy * y / s + py - 0.4 * c);
        out.rgb[(static_cast<std::size_t>(c) * s + y) * s + x] = static_cast<float>(v);
      }

  // components
  const int want = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  std::vector<Rect> placed;
  for (int i = 0; i < want; ++i) {
    Rect r{};
    bool ok = false;
    for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
      const double w = rng.uniform(cfg.min_box_frac, cfg.max_box_frac);
      const double h = rng.uniform(cfg.min_box_frac, cfg.max_box_frac);
      r.x1 = rng.uniform(0.01, 0.99 - w);
      r.y1 = rng.uniform(0.01, 0.99 - h);
      r.x2 = r.x1 + w;
      r.y2 = r.y1 + h;
      ok = true;
      for (const Rect& p : placed) ok = ok && rect_iou(r, p) < 0.02;
    }
    if (!ok) break;
    placed.push_back(r);

    const bool fault = rng.uniform() < cfg.fault_rate;
    const float jitter = static_cast<float>(0.06 * (rng.uniform() - 0.5));

    const float frame[3] = {0.72f + jitter, 0.74f + jitter, 0.78f + jitter};
    const float cavity[3] = {0.16f + jitter, 0.17f + jitter, 0.20f + jitter};
    const float key[3] = {0.93f + jitter, 0.84f + jitter, 0.42f + jitter};

    fill_rect(out.rgb, s, r, frame);
    const double bw = 0.15 * (r.x2 - r.x1), bh = 0.15 * (r.y2 - r.y1);
    const Rect inner{r.x1 + bw, r.y1 + bh, r.x2 - bw, r.y2 - bh};
    fill_rect(out.rgb, s, inner, cavity);

    const double kw = 0.52 * (inner.x2 - inner.x1), kh = 0.36 * (inner.y2 - inner.y1);
    const double cx = 0.5 * (inner.x1 + inner.x2), cy = 0.5 * (inner.y1 + inner.y2);
    bool draw_key = true;
    double kx = cx, ky = cy;
    if (fault) {
      if (rng.uniform() < 0.5) {
        draw_key = false;  // key missing
      } else {
        // key displaced toward a corner of the cavity
        const double dx = (rng.uniform() < 0.5 ? -1.0 : 1.0) * 0.3 * (inner.x2 - inner.x1);
        const double dy = (rng.uniform() < 0.5 ? -1.0 : 1.0) * 0.3 * (inner.y2 - inner.y1);
        kx += dx;
        ky += dy;
      }
    }
    if (draw_key)
      fill_rect(out.rgb, s, Rect{kx - 0.5 * kw, ky - 0.5 * kh, kx + 0.5 * kw, ky + 0.5 * kh}, key);

    LabelDescriptor lab;
    lab.x1 = r.x1;
    lab.y1 = r.y1;
    lab.x2 = r.x2;
    lab.y2 = r.y2;
    lab.class_id = fault ? 1 : 0;
    out.labels.items.push_back(lab);
  }

  // clutter noise on top (uniform, so the stream stays platform-exact)
  const double noise = 0.10 * cfg.clutter;
  if (noise > 0.0)
    for (float& v : out.rgb) v += static_cast<float>(noise * (2.0 * rng.uniform() - 1.0));
  for (float& v : out.rgb) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

void generate_dataset(const SynthConfig& cfg, const std::string& out_dir, bool overwrite) {
  cfg.validate();
  const fs::path root(out_dir);
  const fs::path meta_path = root / "meta.json";
  if (fs::exists(meta_path) && !overwrite)
    throw IoError("generate_dataset: " + meta_path.string() + " exists (pass overwrite)");
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw IoError("generate_dataset: cannot create " + (root / "images").string());

  std::ofstream ann(root / "annotations.jsonl");
  if (!ann) throw IoError("generate_dataset: cannot write annotations under " + out_dir);

  const int total = cfg.train_count + cfg.test_count;
  std::array<double, 3> sum{}, sumsq{};
  std::int64_t train_pixels = 0;
  for (int id = 0; id < total; ++id) {
    RenderedImage img = render_image(cfg, id);
    const int s = cfg.image_size;
    ImageU8 u8;
    u8.width = s;
    u8.height = s;
    u8.rgb.resize(static_cast<std::size_t>(s) * s * 3);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        for (int c = 0; c < 3; ++c) {
          const float v = img.rgb[(static_cast<std::size_t>(c) * s + y) * s + x];
          u8.rgb[(static_cast<std::size_t>(y) * s + x) * 3 + c] =
              static_cast<unsigned char>(std::lround(v * 255.0f));
        }
    if (id < cfg.train_count) {
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          for (int c = 0; c < 3; ++c) {
            const double v = u8.rgb[(static_cast<std::size_t>(y) * s + x) * 3 + c] / 255.0;
            sum[static_cast<std::size_t>(c)] += v;
            sumsq[static_cast<std::size_t>(c)] += v * v;
          }
      train_pixels += static_cast<std::int64_t>(s) * s;
    }
    write_png_rgb8((root / "images" / (std::to_string(id) + ".png")).string(), u8);
    for (const LabelDescriptor& l : img.labels.items) {
      nlohmann::ordered_json j;
      j["image_id"] = id;
      j["class_id"] = l.class_id;
      j["box"] = {l.x1, l.y1, l.x2, l.y2};
      ann << j.dump() << '\n';
    }
  }
  ann.close();

  nlohmann::ordered_json meta;
  meta["format_version"] = kDatasetFormatVersion;
  meta["seed"] = cfg.seed;
  meta["cfg"] = {{"image_size", cfg.image_size},
                 {"num_classes", cfg.num_classes},
                 {"min_objects", cfg.min_objects},
                 {"max_objects", cfg.max_objects},
                 {"clutter", cfg.clutter},
                 {"fault_rate", cfg.fault_rate},
                 {"min_box_frac", cfg.min_box_frac},
                 {"max_box_frac", cfg.max_box_frac},
                 {"train_count", cfg.train_count},
                 {"test_count", cfg.test_count}};
  std::array<double, 3> mean{}, stddev{};
  for (int c = 0; c < 3; ++c) {
    mean[static_cast<std::size_t>(c)] = train_pixels > 0 ? sum[static_cast<std::size_t>(c)] / train_pixels : 0.0;
    const double var = train_pixels > 0
                           ? sumsq[static_cast<std::size_t>(c)] / train_pixels -
                                 mean[static_cast<std::size_t>(c)] * mean[static_cast<std::size_t>(c)]
                           : 1.0;
    stddev[static_cast<std::size_t>(c)] = std::sqrt(std::max(var, 1e-8));
  }
  meta["normalization"] = {{"mean", mean}, {"std", stddev}};
  std::ofstream mf(meta_path);
  if (!mf) throw IoError("generate_dataset: cannot write " + meta_path.string());
  mf << meta.dump(2) << '\n';
}

Dataset::Dataset(const std::string& dir, Split split) : dir_(dir), split_(split) {
  const fs::path root(dir);
  std::ifstream mf(root / "meta.json");
  if (!mf) throw IoError("Dataset: missing meta.json under " + dir);
  nlohmann::json meta;
  try {
    mf >> meta;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("Dataset: corrupt meta.json: " + std::string(e.what()));
  }
  const int version = meta.value("format_version", -1);
  if (version != kDatasetFormatVersion)
    throw IoError("Dataset: format version " + std::to_string(version) + " != supported " +
                  std::to_string(kDatasetFormatVersion) + "; regenerate the dataset");
  const auto& c = meta.at("cfg");
  cfg_.seed = meta.at("seed").get<std::uint64_t>();
  cfg_.image_size = c.at("image_size").get<int>();
  cfg_.num_classes = c.at("num_classes").get<int>();
  cfg_.min_objects = c.at("min_objects").get<int>();
  cfg_.max_objects = c.at("max_objects").get<int>();
  cfg_.clutter = c.at("clutter").get<double>();
  cfg_.fault_rate = c.at("fault_rate").get<double>();
  cfg_.min_box_frac = c.at("min_box_frac").get<double>();
  cfg_.max_box_frac = c.at("max_box_frac").get<double>();
  cfg_.train_count = c.at("train_count").get<int>();
  cfg_.test_count = c.at("test_count").get<int>();
  for (int i = 0; i < 3; ++i) {
    mean_[static_cast<std::size_t>(i)] = meta.at("normalization").at("mean").at(static_cast<std::size_t>(i)).get<double>();
    std_[static_cast<std::size_t>(i)] = meta.at("normalization").at("std").at(static_cast<std::size_t>(i)).get<double>();
  }

  const int lo = split == Split::Train ? 0 : cfg_.train_count;
  const int hi = split == Split::Train ? cfg_.train_count : cfg_.train_count + cfg_.test_count;
  for (int id = lo; id < hi; ++id) {
    ids_.push_back(id);
    labels_.emplace(id, LabelDescriptorSet{});
  }

  std::ifstream ann(root / "annotations.jsonl");
  if (!ann) throw IoError("Dataset: missing annotations.jsonl under " + dir);
  std::string line;
  int line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("Dataset: annotations.jsonl record " + std::to_string(line_no) +
                    " is invalid: " + e.what());
    }
    LabelDescriptor l;
    int id;
    try {
      id = j.at("image_id").get<int>();
      l.class_id = j.at("class_id").get<int>();
      l.x1 = j.at("box").at(0).get<double>();
      l.y1 = j.at("box").at(1).get<double>();
      l.x2 = j.at("box").at(2).get<double>();
      l.y2 = j.at("box").at(3).get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("Dataset: annotations.jsonl record " + std::to_string(line_no) +
                    " is malformed: " + e.what());
    }
    try {
      l.validate(cfg_.num_classes);
    } catch (const AnnotationError& e) {
      throw AnnotationError("annotations.jsonl record " + std::to_string(line_no) + ": " +
                            e.what());
    }
    auto it = labels_.find(id);
    if (it != labels_.end()) it->second.items.push_back(l);
  }
}

const LabelDescriptorSet& Dataset::labels_of(int index) const {
  return labels_.at(ids_.at(static_cast<std::size_t>(index)));
}

DetectionSample Dataset::sample(int index) const {
  const int id = ids_.at(static_cast<std::size_t>(index));
  DetectionSample out;
  out.image_id = id;
  out.split = split_;
  out.labels = labels_.at(id);
  const std::string path = (fs::path(dir_) / "images" / (std::to_string(id) + ".png")).string();
  ImageU8 img = read_png_rgb8(path);
  if (img.width != cfg_.image_size || img.height != cfg_.image_size)
    throw IoError("Dataset: " + path + " has unexpected size");
  const int s = cfg_.image_size;
  out.image = Tensor({3, s, s});
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = img.rgb[(static_cast<std::size_t>(y) * s + x) * 3 + c] / 255.0;
        out.image.at(c, y, x) = (v - mean_[static_cast<std::size_t>(c)]) / std_[static_cast<std::size_t>(c)];
      }
  return out;
}

std::vector<GroundTruth> Dataset::ground_truths() const {
  std::vector<GroundTruth> out;
  for (int id : ids_) {
    for (const LabelDescriptor& l : labels_.at(id).items) {
      GroundTruth g;
      g.image_id = id;
      g.class_id = l.class_id;
      g.x1 = l.x1;
      g.y1 = l.y1;
      g.x2 = l.x2;
      g.y2 = l.y2;
      out.push_back(g);
    }
  }
  return out;
}

}  // namespace faultdet
