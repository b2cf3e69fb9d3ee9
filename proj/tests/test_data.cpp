#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "faultdet/data.hpp"
#include "faultdet/plot.hpp"
#include "faultdet/png_io.hpp"
#include "test_util.hpp"

using namespace faultdet;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  const std::string dir = "/tmp/faultdet_test_" + name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

SynthConfig tiny_cfg() {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.image_size = 32;
  cfg.train_count = 6;
  cfg.test_count = 4;
  cfg.min_objects = 1;
  cfg.max_objects = 2;
  return cfg;
}

}  // namespace

TEST_CASE("png io: write/read round trip is lossless") {
  ImageU8 img;
  img.width = 21;
  img.height = 13;
  img.rgb.resize(21 * 13 * 3);
  Rng rng(9);
  for (auto& b : img.rgb) b = static_cast<unsigned char>(rng.uniform_int(0, 255));
  const std::string path = "/tmp/faultdet_png_test.png";
  write_png_rgb8(path, img);
  ImageU8 back = read_png_rgb8(path);
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  CHECK(back.rgb == img.rgb);
  fs::remove(path);
  CHECK_THROWS_AS(read_png_rgb8("/tmp/faultdet_missing.png"), IoError);
}

TEST_CASE("generation is deterministic: byte-identical annotations and images") {
  const std::string d1 = fresh_dir("det1");
  const std::string d2 = fresh_dir("det2");
  SynthConfig cfg = tiny_cfg();
  generate_dataset(cfg, d1);
  generate_dataset(cfg, d2);
  CHECK(slurp(d1 + "/annotations.jsonl") == slurp(d2 + "/annotations.jsonl"));
  CHECK(slurp(d1 + "/images/0.png") == slurp(d2 + "/images/0.png"));
  CHECK(slurp(d1 + "/images/9.png") == slurp(d2 + "/images/9.png"));

  // refusing to clobber without the flag
  CHECK_THROWS_AS(generate_dataset(cfg, d1), IoError);
  generate_dataset(cfg, d1, /*overwrite=*/true);
}

TEST_CASE("objects-per-image pinned to one gives exactly one record per image") {
  const std::string dir = fresh_dir("count");
  SynthConfig cfg = tiny_cfg();
  cfg.min_objects = 1;
  cfg.max_objects = 1;
  cfg.train_count = 10;
  cfg.test_count = 0;
  generate_dataset(cfg, dir);
  std::ifstream ann(dir + "/annotations.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(ann, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 10);
}

TEST_CASE("class balance stays near the configured fault rate") {
  SynthConfig cfg;
  cfg.seed = 77;
  cfg.image_size = 32;
  cfg.min_objects = 1;
  cfg.max_objects = 2;
  // 1000 sampled images, rendered only through their label stream
  int objects = 0, faults = 0;
  for (int id = 0; id < 1000; ++id) {
    RenderedImage img = render_image(cfg, id);
    for (const auto& l : img.labels.items) {
      ++objects;
      faults += l.class_id == 1 ? 1 : 0;
    }
  }
  const double rate = static_cast<double>(faults) / objects;
  CHECK(rate > cfg.fault_rate - 0.1 * cfg.fault_rate);
  CHECK(rate < cfg.fault_rate + 0.1 * cfg.fault_rate);
}

TEST_CASE("default-size boxes cover at least four cells of the coarsest grid") {
  SynthConfig cfg;  // image_size 256
  cfg.seed = 13;
  for (int id = 0; id < 20; ++id) {
    RenderedImage img = render_image(cfg, id);
    for (const auto& l : img.labels.items) {
      const double cells = (l.x2 - l.x1) * 8.0 * (l.y2 - l.y1) * 8.0;
      CHECK(cells >= 4.0);
    }
  }
}

TEST_CASE("load round trip: boxes, splits, ordering, normalization statistics") {
  const std::string dir = fresh_dir("roundtrip");
  SynthConfig cfg = tiny_cfg();
  generate_dataset(cfg, dir);

  Dataset train(dir, Split::Train);
  Dataset test(dir, Split::Test);
  REQUIRE(train.size() == 6);
  REQUIRE(test.size() == 4);

  // ids ascend and boxes equal the rendered originals
  for (int i = 0; i < train.size(); ++i) {
    CHECK(train.image_id(i) == i);
    RenderedImage want = render_image(cfg, i);
    const auto& got = train.labels_of(i);
    REQUIRE(got.count() == want.labels.count());
    for (int k = 0; k < got.count(); ++k) {
      CHECK(std::fabs(got.items[static_cast<std::size_t>(k)].x1 - want.labels.items[static_cast<std::size_t>(k)].x1) < 1e-9);
      CHECK(std::fabs(got.items[static_cast<std::size_t>(k)].y2 - want.labels.items[static_cast<std::size_t>(k)].y2) < 1e-9);
      CHECK(got.items[static_cast<std::size_t>(k)].class_id == want.labels.items[static_cast<std::size_t>(k)].class_id);
    }
  }

  // normalized per-channel mean over the train split sits near zero
  double mean[3] = {0, 0, 0};
  std::int64_t count = 0;
  for (int i = 0; i < train.size(); ++i) {
    DetectionSample s = train.sample(i);
    const int sz = cfg.image_size;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < sz; ++y)
        for (int x = 0; x < sz; ++x) mean[c] += s.image.at(c, y, x);
    count += static_cast<std::int64_t>(sz) * sz;
  }
  for (double m : {mean[0] / count, mean[1] / count, mean[2] / count}) CHECK(std::fabs(m) < 0.1);

  // ground truths carry split-local ids
  auto gts = test.ground_truths();
  for (const auto& g : gts) CHECK(g.image_id >= 6);
}

TEST_CASE("loader errors: truncated records, bad boxes, version mismatch") {
  const std::string dir = fresh_dir("errors");
  generate_dataset(tiny_cfg(), dir);

  SUBCASE("truncated annotation line names the record index") {
    std::string body = slurp(dir + "/annotations.jsonl");
    const std::size_t second_line = body.find('\n') + 1;
    std::ofstream out(dir + "/annotations.jsonl", std::ios::trunc);
    out << body.substr(0, second_line) << "{\"image_id\": 1, \"class_id\"\n";
    out.close();
    try {
      Dataset d(dir, Split::Train);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("record 2") != std::string::npos);
    }
  }

  SUBCASE("invalid box is rejected with its record index") {
    std::ofstream out(dir + "/annotations.jsonl", std::ios::trunc);
    out << R"({"image_id":0,"class_id":0,"box":[0.5,0.1,0.2,0.6]})" << "\n";
    out.close();
    try {
      Dataset d(dir, Split::Train);
      FAIL("expected AnnotationError");
    } catch (const AnnotationError& e) {
      CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
  }

  SUBCASE("format version mismatch demands regeneration") {
    std::string meta = slurp(dir + "/meta.json");
    const auto pos = meta.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    meta.replace(pos, std::string("\"format_version\": 1").size(), "\"format_version\": 99");
    std::ofstream out(dir + "/meta.json", std::ios::trunc);
    out << meta;
    out.close();
    try {
      Dataset d(dir, Split::Train);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
}

TEST_CASE("line plot renders a readable png") {
  const std::string path = "/tmp/faultdet_plot_test.png";
  PlotSeries a{"a", {}}, b{"b", {}};
  for (int i = 0; i < 60; ++i) {
    a.ys.push_back(5.0 * std::exp(-i / 20.0) + 0.3);
    b.ys.push_back(4.0 * std::exp(-i / 12.0) + 0.5);
  }
  render_line_plot(path, {a, b}, 320, 200);
  ImageU8 img = read_png_rgb8(path);
  CHECK(img.width == 320);
  CHECK(img.height == 200);
  fs::remove(path);
}
