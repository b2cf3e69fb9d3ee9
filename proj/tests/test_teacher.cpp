#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "faultdet/appearance.hpp"
#include "faultdet/interaction.hpp"
#include "faultdet/labels.hpp"
#include "test_util.hpp"

using namespace faultdet;
using namespace faultdet::testing;

namespace {

LabelDescriptorSet three_boxes() {
  LabelDescriptorSet s;
  s.items.push_back({0.1, 0.2, 0.5, 0.6, 0});
  s.items.push_back({0.4, 0.1, 0.9, 0.3, 1});
  s.items.push_back({0.05, 0.55, 0.35, 0.95, 1});
  return s;
}

}  // namespace

TEST_CASE("label encoder: permutation equivariance, determinism, row independence") {
  Rng rng(21);
  ParamStore store;
  LabelEncoder enc("lab", 2, 8, store, rng);
  LabelDescriptorSet s = three_boxes();

  Binder b;
  Value e = enc.forward(b, s);
  REQUIRE(e.shape() == Shape({3, 8}));
  CHECK(e.val().all_finite());

  // deterministic
  Value e2 = enc.forward(b, s);
  CHECK(max_abs_diff(e.val(), e2.val()) == 0.0);

  // permuting descriptors permutes rows identically (exactly)
  LabelDescriptorSet p;
  p.items = {s.items[2], s.items[0], s.items[1]};
  Value ep = enc.forward(b, p);
  for (int j = 0; j < 8; ++j) {
    CHECK(ep.val().at(0, j) == e.val().at(2, j));
    CHECK(ep.val().at(1, j) == e.val().at(0, j));
    CHECK(ep.val().at(2, j) == e.val().at(1, j));
  }

  // encoding one object alone matches its row inside the set
  LabelDescriptorSet solo;
  solo.items = {s.items[1]};
  Value es = enc.forward(b, solo);
  for (int j = 0; j < 8; ++j) CHECK(es.val().at(0, j) == e.val().at(1, j));
}

TEST_CASE("label encoder: identity-initialized pipeline reduces to layer norm") {
  Rng rng(22);
  ParamStore store;
  LabelEncoder enc("lab", 4, 8, store, rng);  // descriptor dim 4+4 == out dim 8
  for (auto& [name, p] : store.items()) {
    if (name == "lab.mlp1.w" || name == "lab.mlp2.w") init_identity(*p);
    if (name == "lab.mlp1.b" || name == "lab.mlp2.b") p->value.fill(0.0);
  }
  LabelDescriptorSet s;
  s.items.push_back({0.0, 0.0, 1.0, 1.0, 0});
  s.items.push_back({0.25, 0.5, 0.75, 0.9, 3});
  Binder b;
  Value e = enc.forward(b, s);

  for (int i = 0; i < 2; ++i) {
    double raw[8] = {s.items[static_cast<std::size_t>(i)].x1, s.items[static_cast<std::size_t>(i)].y1,
                     s.items[static_cast<std::size_t>(i)].x2, s.items[static_cast<std::size_t>(i)].y2,
                     0, 0, 0, 0};
    raw[4 + s.items[static_cast<std::size_t>(i)].class_id] = 1.0;
    double mu = 0.0;
    for (double v : raw) mu += v;
    mu /= 8.0;
    double var = 0.0;
    for (double v : raw) var += (v - mu) * (v - mu);
    var /= 8.0;
    for (int j = 0; j < 8; ++j) {
      const double want = (raw[j] - mu) / std::sqrt(var + 1e-5);
      CHECK(e.val().at(i, j) == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("label encoder: errors and empty sets") {
  Rng rng(23);
  ParamStore store;
  LabelEncoder enc("lab", 2, 8, store, rng);
  Binder b;
  LabelDescriptorSet bad;
  bad.items.push_back({0.5, 0.2, 0.5, 0.6, 0});  // x1 == x2
  CHECK_THROWS_AS(enc.forward(b, bad), AnnotationError);
  LabelDescriptorSet bad2;
  bad2.items.push_back({0.1, 0.2, 0.5, 0.6, 7});
  CHECK_THROWS_AS(enc.forward(b, bad2), AnnotationError);
  LabelDescriptorSet empty;
  CHECK_FALSE(enc.forward(b, empty).defined());
}

TEST_CASE("label encoder: gradient check incl. alignment matrices") {
  Rng rng(24);
  ParamStore store;
  LabelEncoder enc("lab", 2, 6, store, rng);
  LabelDescriptorSet s = three_boxes();
  std::vector<Param*> params;
  for (auto& [name, p] : store.items()) params.push_back(p);
  Rng probe(25);
  auto rep = check_gradients(params,
                             [&](Binder& b) { return mean(gelu(enc.forward(b, s))); }, probe, 10);
  INFO("worst " << (rep.worst_param ? rep.worst_param->name : "-") << " err " << rep.max_err);
  CHECK(rep.max_err < 1e-4);
}

TEST_CASE("mask rasterization: box geometry at each level") {
  LabelDescriptorSet s;
  s.items.push_back({0.0, 0.0, 1.0, 1.0, 0});
  MaskSetLevel full = rasterize_masks_level(s, 7, 7);
  REQUIRE(full.rows() == 2);
  CHECK(full.area(0) == 49);  // full-image box hits every cell
  CHECK(full.area(1) == 49);  // virtual object always does

  LabelDescriptorSet h;
  h.items.push_back({0.0, 0.0, 0.5, 0.5, 0});
  MaskSetLevel half = rasterize_masks_level(h, 8, 8);
  REQUIRE(half.area(0) == 16);
  for (std::int64_t cell : (*half.cells)[0]) {
    CHECK(cell % 8 < 4);
    CHECK(cell / 8 < 4);
  }

  LabelDescriptorSet c;
  c.items.push_back({0.49, 0.49, 0.51, 0.51, 0});
  MaskSetLevel center = rasterize_masks_level(c, 7, 7);
  REQUIRE(center.area(0) == 1);
  CHECK((*center.cells)[0][0] == 3 * 7 + 3);

  // a box that captures no cell center still activates one cell
  LabelDescriptorSet tiny;
  tiny.items.push_back({0.01, 0.01, 0.02, 0.02, 0});
  MaskSetLevel t = rasterize_masks_level(tiny, 4, 4);
  CHECK(t.area(0) == 1);
  CHECK((*t.cells)[0][0] == 0);

  auto levels = rasterize_masks(s, {{8, 8}, {4, 4}, {2, 2}, {1, 1}});
  CHECK(levels.size() == 4);
  CHECK(levels[3].area(0) == 1);
}

TEST_CASE("appearance embedding: forced values and loop oracle") {
  Rng rng(26);

  SUBCASE("virtual mask mean of 2x2 map") {
    ParamStore store;
    AppearanceEncoder enc("app", 1, 1, store, rng);
    store.find("app.proj.w")->value.fill(1.0);  // identity projection
    store.find("app.proj.b")->value.fill(0.0);
    LabelDescriptorSet none;
    MaskSetLevel masks = rasterize_masks_level(none, 2, 2);
    Param x{"x", Tensor::from({1, 2, 2}, {1, 2, 3, 4}), Tensor({1, 2, 2})};
    Binder b;
    Value a = enc.forward(b, b(x), masks);
    REQUIRE(a.shape() == Shape({1, 1}));
    CHECK(a.val().at(0, 0) == doctest::Approx(2.5).epsilon(1e-12));
  }

  SUBCASE("single-cell mask picks the projected feature") {
    ParamStore store;
    AppearanceEncoder enc("app", 2, 3, store, rng);
    LabelDescriptorSet s;
    s.items.push_back({0.0, 0.0, 0.26, 0.26, 0});  // only cell (0,0) at 4x4
    MaskSetLevel masks = rasterize_masks_level(s, 4, 4);
    REQUIRE(masks.area(0) == 1);
    Param x = make_param("x", {2, 4, 4}, rng);
    Binder b;
    Value a = enc.forward(b, b(x), masks);
    const Tensor& w = store.find("app.proj.w")->value;
    const Tensor& bias = store.find("app.proj.b")->value;
    for (int co = 0; co < 3; ++co) {
      const double want =
          bias.at(co) + w.at(co, 0, 0, 0) * x.value.at(0, 0, 0) + w.at(co, 1, 0, 0) * x.value.at(1, 0, 0);
      CHECK(a.val().at(0, co) == doctest::Approx(want).epsilon(1e-12));
    }
  }

  SUBCASE("random masks match the mask-multiply-sum-divide oracle") {
    ParamStore store;
    AppearanceEncoder enc("app", 4, 4, store, rng);
    LabelDescriptorSet s;
    s.items.push_back({0.1, 0.1, 0.7, 0.5, 0});
    s.items.push_back({0.5, 0.4, 0.95, 0.95, 1});
    MaskSetLevel masks = rasterize_masks_level(s, 6, 6);
    Param x = make_param("x", {4, 6, 6}, rng);
    Binder b;
    Value a = enc.forward(b, b(x), masks);
    REQUIRE(a.shape() == Shape({3, 4}));

    const Tensor& w = store.find("app.proj.w")->value;
    const Tensor& bias = store.find("app.proj.b")->value;
    // oracle over dense binary masks
    for (int r = 0; r < 3; ++r) {
      Tensor dense({6, 6});
      for (std::int64_t cell : (*masks.cells)[static_cast<std::size_t>(r)]) dense[cell] = 1.0;
      double cnt = 0.0;
      for (std::int64_t i = 0; i < 36; ++i) cnt += dense[i];
      for (int co = 0; co < 4; ++co) {
        double acc = 0.0;
        for (int i = 0; i < 6; ++i)
          for (int j = 0; j < 6; ++j) {
            double proj = bias.at(co);
            for (int ci = 0; ci < 4; ++ci) proj += w.at(co, ci, 0, 0) * x.value.at(ci, i, j);
            acc += proj * dense.at(i, j);
          }
        CHECK(a.val().at(r, co) == doctest::Approx(acc / cnt).epsilon(1e-6));
      }
    }

    // gradient through projection and features
    std::vector<Param*> params{&x, store.find("app.proj.w"), store.find("app.proj.b")};
    Rng probe(27);
    auto rep = check_gradients(
        params, [&](Binder& bb) { return mean(gelu(enc.forward(bb, bb(x), masks))); }, probe, 12);
    CHECK(rep.max_err < 1e-4);
  }
}

TEST_CASE("appearance embedding: size invariance and linearity") {
  Rng rng(28);
  ParamStore store;
  AppearanceEncoder enc("app", 2, 2, store, rng);
  store.find("app.proj.b")->value.fill(0.0);

  // constant features: small and large masks give identical embeddings
  Param flat{"flat", Tensor::full({2, 8, 8}, 1.7), Tensor({2, 8, 8})};
  LabelDescriptorSet s;
  s.items.push_back({0.0, 0.0, 0.25, 0.25, 0});
  s.items.push_back({0.0, 0.0, 1.0, 1.0, 0});
  MaskSetLevel masks = rasterize_masks_level(s, 8, 8);
  Binder b;
  Value a = enc.forward(b, b(flat), masks);
  for (int j = 0; j < 2; ++j)
    CHECK(a.val().at(0, j) == doctest::Approx(a.val().at(1, j)).epsilon(1e-12));

  // linearity in the feature map (zero projection bias)
  Param f1 = make_param("f1", {2, 8, 8}, rng);
  Param f2 = make_param("f2", {2, 8, 8}, rng);
  Param mix{"mix", Tensor({2, 8, 8}), Tensor({2, 8, 8})};
  for (std::int64_t i = 0; i < mix.value.numel(); ++i)
    mix.value[i] = 2.0 * f1.value[i] - 3.0 * f2.value[i];
  Value am = enc.forward(b, b(mix), masks);
  Value a1 = enc.forward(b, b(f1), masks);
  Value a2 = enc.forward(b, b(f2), masks);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 2; ++j)
      CHECK(am.val().at(r, j) ==
            doctest::Approx(2.0 * a1.val().at(r, j) - 3.0 * a2.val().at(r, j)).epsilon(1e-9));
}

TEST_CASE("interaction: single key makes every row the projected value") {
  Rng rng(30);
  ParamStore store;
  InteractionEncoder enc("att", AttentionConfig{2, 4}, store, rng);
  init_identity(*store.find("att.proj.w"));
  store.find("att.proj.b")->value.fill(0.0);

  Param app = make_param("app", {3, 4}, rng);
  Param lab = make_param("lab", {1, 4}, rng);
  Binder b;
  Value out = enc.forward(b, b(app), b(lab));
  REQUIRE(out.shape() == Shape({3, 4}));

  const Tensor& wv = store.find("att.v.w")->value;
  const Tensor& bv = store.find("att.v.b")->value;
  for (int j = 0; j < 4; ++j) {
    double v = bv.at(j);
    for (int k = 0; k < 4; ++k) v += lab.value.at(0, k) * wv.at(k, j);
    for (int i = 0; i < 3; ++i) CHECK(out.val().at(i, j) == doctest::Approx(v).epsilon(1e-9));
  }
}

TEST_CASE("interaction: key permutation invariance and query equivariance") {
  Rng rng(31);
  ParamStore store;
  InteractionEncoder enc("att", AttentionConfig{2, 6}, store, rng);
  Param app = make_param("app", {4, 6}, rng);
  Param lab = make_param("lab", {3, 6}, rng);
  Binder b;
  Value base = enc.forward(b, b(app), b(lab));

  Param lab_perm{"lp", Tensor({3, 6}), Tensor({3, 6})};
  const int order[3] = {2, 0, 1};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j) lab_perm.value.at(i, j) = lab.value.at(order[i], j);
  Value permuted = enc.forward(b, b(app), b(lab_perm));
  CHECK(max_abs_diff(base.val(), permuted.val()) < 1e-12);

  Param app_perm{"ap", Tensor({4, 6}), Tensor({4, 6})};
  const int qorder[4] = {3, 1, 0, 2};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) app_perm.value.at(i, j) = app.value.at(qorder[i], j);
  Value qperm = enc.forward(b, b(app_perm), b(lab));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j)
      CHECK(qperm.val().at(i, j) == doctest::Approx(base.val().at(qorder[i], j)).epsilon(1e-12));
}

TEST_CASE("interaction: explicit attention oracle and gradients (heads=2, C=4, N=3)") {
  Rng rng(32);
  ParamStore store;
  InteractionEncoder enc("att", AttentionConfig{2, 4}, store, rng);
  Param app = make_param("app", {2, 4}, rng);
  Param lab = make_param("lab", {3, 4}, rng);
  Binder b;
  Value out = enc.forward(b, b(app), b(lab));

  auto get = [&](const char* n) { return store.find(n)->value; };
  const Tensor wq = get("att.q.w"), bq = get("att.q.b");
  const Tensor wk = get("att.k.w"), bk = get("att.k.b");
  const Tensor wv = get("att.v.w"), bv = get("att.v.b");
  const Tensor wp = get("att.proj.w"), bp = get("att.proj.b");

  auto project = [](const Tensor& x, const Tensor& w, const Tensor& bias, int row, int col) {
    double acc = bias.at(col);
    for (int k = 0; k < x.shape()[1]; ++k) acc += x.at(row, k) * w.at(k, col);
    return acc;
  };

  const int dh = 2;
  for (int i = 0; i < 2; ++i) {
    double concat[4];
    for (int h = 0; h < 2; ++h) {
      double logits[3];
      double mx = -1e300;
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int d = 0; d < dh; ++d)
          dot += project(app.value, wq, bq, i, h * dh + d) * project(lab.value, wk, bk, j, h * dh + d);
        logits[j] = dot / std::sqrt(2.0);
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      double w8[3];
      for (int j = 0; j < 3; ++j) {
        w8[j] = std::exp(logits[j] - mx);
        z += w8[j];
      }
      for (int d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (int j = 0; j < 3; ++j) acc += (w8[j] / z) * project(lab.value, wv, bv, j, h * dh + d);
        concat[h * dh + d] = acc;
      }
    }
    for (int j = 0; j < 4; ++j) {
      double final = bp.at(j);
      for (int k = 0; k < 4; ++k) final += concat[k] * wp.at(k, j);
      CHECK(out.val().at(i, j) == doctest::Approx(final).epsilon(1e-6));
    }
  }

  std::vector<Param*> params{&app, &lab};
  for (auto& [name, p] : store.items()) params.push_back(p);
  Rng probe(33);
  auto rep = check_gradients(
      params, [&](Binder& bb) { return mean(gelu(enc.forward(bb, bb(app), bb(lab)))); }, probe, 10);
  INFO("worst " << (rep.worst_param ? rep.worst_param->name : "-") << " err " << rep.max_err);
  CHECK(rep.max_err < 1e-4);
}

TEST_CASE("interaction: zero-object images fall back to the learned null label") {
  Rng rng(34);
  ParamStore store;
  InteractionEncoder enc("att", AttentionConfig{2, 4}, store, rng);
  Param app = make_param("app", {1, 4}, rng);  // just the virtual object
  Binder b;
  Value out = enc.forward(b, b(app), Value());
  REQUIRE(out.shape() == Shape({1, 4}));
  CHECK(out.val().all_finite());

  // the null embedding is trainable through this path
  Param* null_row = store.find("att.null_label");
  std::vector<Param*> params{null_row};
  Rng probe(35);
  auto rep = check_gradients(
      params, [&](Binder& bb) { return mean(gelu(enc.forward(bb, bb(app), Value()))); }, probe, 8);
  CHECK(rep.max_err < 1e-4);
  // and the analytic gradient is nonzero
  double norm = 0.0;
  for (std::int64_t i = 0; i < null_row->grad.numel(); ++i)
    norm += std::fabs(null_row->grad[i]);
  CHECK(norm > 0.0);
}

TEST_CASE("interaction: dimension mismatch raises a configuration error") {
  Rng rng(36);
  ParamStore store;
  InteractionEncoder enc("att", AttentionConfig{2, 4}, store, rng);
  Param app = make_param("app", {2, 6}, rng);
  Param lab = make_param("lab", {2, 4}, rng);
  Binder b;
  CHECK_THROWS_AS(enc.forward(b, b(app), b(lab)), ConfigError);
  AttentionConfig bad{3, 4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
