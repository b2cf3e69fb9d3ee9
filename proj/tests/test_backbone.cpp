#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "faultdet/backbone.hpp"
#include "test_util.hpp"

using namespace faultdet;
using namespace faultdet::testing;

namespace {

// Reference for the axial shift: evaluates the shifted channel projection
// index by index, straight from its defining sum.
Tensor axial_shift_reference(const Tensor& x, const Tensor& w, const Tensor& bias, int s, int d,
                             Axis axis) {
  const int c = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int group = (c + s - 1) / s;
  Tensor y({c, h, wd});
  for (int co = 0; co < c; ++co)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < wd; ++j) {
        double acc = bias.at(co);
        for (int ci = 0; ci < c; ++ci) {
          const int off = ci / group - (s / 2) * d;
          const int si = axis == Axis::Vertical ? i + off : i;
          const int sj = axis == Axis::Horizontal ? j + off : j;
          if (si >= 0 && si < h && sj >= 0 && sj < wd)
            acc += w.at(co, ci, 0, 0) * x.at(ci, si, sj);
        }
        y.at(co, i, j) = acc;
      }
  return y;
}

void zero_path_weights(ParamStore& store, const std::string& block_prefix) {
  for (auto& [name, p] : store.items()) {
    if (name.rfind(block_prefix, 0) == 0 && name.find(".ln.") == std::string::npos)
      p->value.fill(0.0);
  }
}

}  // namespace

TEST_CASE("axial shift: config validation") {
  AxialShiftConfig bad{4, 1, 8};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  AxialShiftConfig bad2{3, 0, 8};
  CHECK_THROWS_AS(bad2.validate(), ConfigError);

  Rng rng(1);
  Param w = make_param("w", {8, 8, 1, 1}, rng);
  Param b = make_param("b", {8}, rng);
  Param x = make_param("x", {4, 3, 3}, rng);
  Binder bd;
  AxialShiftConfig cfg{3, 1, 8};
  CHECK_THROWS_AS(axial_shift(bd(x), cfg, Axis::Horizontal, bd(w), bd(b)), ConfigError);
}

TEST_CASE("axial shift: s=1 with unit projection is the identity") {
  Rng rng(2);
  Param x = make_param("x", {1, 5, 4}, rng);
  Param w = make_param("w", {1, 1, 1, 1}, rng);
  Param b = make_param("b", {1}, rng);
  w.value.fill(1.0);
  b.value.fill(0.0);
  Binder bd;
  Value y = axial_shift(bd(x), AxialShiftConfig{1, 1, 1}, Axis::Horizontal, bd(w), bd(b));
  CHECK(max_abs_diff(y.val(), x.value) == 0.0);
}

TEST_CASE("axial shift: three-channel row example sums the diagonal") {
  // channels [1,2,3],[4,5,6],[7,8,9] on a 1x3 map; all-ones projection rows.
  Tensor xv = Tensor::from({3, 1, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Param x{"x", xv, Tensor({3, 1, 3})};
  Param w{"w", Tensor::full({3, 3, 1, 1}, 1.0), Tensor({3, 3, 1, 1})};
  Param b{"b", Tensor({3}), Tensor({3})};
  Binder bd;
  Value y = axial_shift(bd(x), AxialShiftConfig{3, 1, 3}, Axis::Horizontal, bd(w), bd(b));
  for (int co = 0; co < 3; ++co) CHECK(y.val().at(co, 0, 1) == doctest::Approx(15.0).epsilon(1e-12));
}

TEST_CASE("axial shift matches the index-wise reference on randomized instances") {
  Rng rng(99);
  int instances = 0;
  for (int s : {1, 3, 5}) {
    for (int d : {1, 2}) {
      for (int rep = 0; rep < 10; ++rep) {
        const int c = rng.uniform_int(1, 16);
        const int h = rng.uniform_int(1, 16);
        const int wd = rng.uniform_int(1, 16);
        Param x = make_param("x", {c, h, wd}, rng);
        Param w = make_param("w", {c, c, 1, 1}, rng);
        Param b = make_param("b", {c}, rng);
        const Axis axis = rng.uniform() < 0.5 ? Axis::Horizontal : Axis::Vertical;
        Binder bd;
        Value y = axial_shift(bd(x), AxialShiftConfig{s, d, c}, axis, bd(w), bd(b));
        Tensor ref = axial_shift_reference(x.value, w.value, b.value, s, d, axis);
        CHECK(max_abs_diff(y.val(), ref) < 1e-6);
        ++instances;
      }
    }
  }
  CHECK(instances == 60);
}

TEST_CASE("shift partition: contiguous groups, symmetric offsets for odd s") {
  auto group_count = [](int c, int s, int d) {
    int groups = 1;
    int prev = axial_offset(0, c, s, d);
    int mn = prev, mx = prev;
    for (int ch = 1; ch < c; ++ch) {
      const int off = axial_offset(ch, c, s, d);
      CHECK(off >= prev);  // contiguous, nondecreasing
      if (off != prev) ++groups;
      prev = off;
      mn = std::min(mn, off);
      mx = std::max(mx, off);
    }
    // With the full group set and unit dilation the offsets straddle zero
    // symmetrically; d > 1 scales only the centering term, skewing them.
    if (groups == s && d == 1) CHECK(mn + mx == 0);
    return groups;
  };
  for (int s : {1, 3, 5}) {
    for (int d : {1, 2}) {
      for (int mult = 1; mult <= 3; ++mult)
        CHECK(group_count(s * mult, s, d) == std::min(s, s * mult));
      // fewer channels than shifts: every channel its own group
      for (int c = 1; c < s; ++c) CHECK(group_count(c, s, d) == std::min(s, c));
    }
  }
}

TEST_CASE("mlp block: zeroed path weights give the exact identity") {
  Rng rng(3);
  ParamStore store;
  MlpBlock block("blk", 6, AxialShiftConfig{3, 1, 6}, 2, store, rng);
  zero_path_weights(store, "blk");
  Param x = make_param("x", {6, 5, 5}, rng);
  Binder bd;
  Value y = block.forward(bd, bd(x));
  CHECK(y.shape() == x.value.shape());
  CHECK(max_abs_diff(y.val(), x.value) == 0.0);
}

TEST_CASE("mlp block: shape preserved and gradients correct on (4,8,8)") {
  Rng rng(4);
  ParamStore store;
  MlpBlock block("blk", 4, AxialShiftConfig{3, 1, 4}, 2, store, rng);
  Param x = make_param("x", {4, 8, 8}, rng);
  {
    Binder bd;
    CHECK(block.forward(bd, bd(x)).shape() == Shape({4, 8, 8}));
  }
  std::vector<Param*> params{&x};
  for (auto& [name, p] : store.items()) params.push_back(p);
  Rng probe(5);
  auto rep = check_gradients(params,
                             [&](Binder& bd) { return mean(gelu(block.forward(bd, bd(x)))); },
                             probe, 12);
  INFO("worst param " << (rep.worst_param ? rep.worst_param->name : "-") << " err " << rep.max_err);
  CHECK(rep.max_err < 1e-4);
}

TEST_CASE("backbone: default ladder shapes at 224 and 64") {
  Rng rng(6);
  ParamStore store;
  Backbone bb("backbone", default_stage_configs(), store, rng);
  CHECK(bb.total_reduction() == 32);

  NoGradGuard ng;
  Binder bd;
  {
    Value img = make_constant(random_tensor({3, 224, 224}, rng, 0.3));
    auto feats = bb.forward(bd, img);
    REQUIRE(feats.size() == 4);
    CHECK(feats[0].shape() == Shape({64, 56, 56}));
    CHECK(feats[1].shape() == Shape({128, 28, 28}));
    CHECK(feats[2].shape() == Shape({256, 14, 14}));
    CHECK(feats[3].shape() == Shape({512, 7, 7}));
  }
  {
    Value img = make_constant(random_tensor({3, 64, 64}, rng, 0.3));
    auto feats = bb.forward(bd, img);
    CHECK(feats[0].shape() == Shape({64, 16, 16}));
    CHECK(feats[1].shape() == Shape({128, 8, 8}));
    CHECK(feats[2].shape() == Shape({256, 4, 4}));
    CHECK(feats[3].shape() == Shape({512, 2, 2}));
  }
}

TEST_CASE("backbone: indivisible input rejected with the required multiple") {
  Rng rng(7);
  ParamStore store;
  Backbone bb("backbone", default_stage_configs(), store, rng);
  Binder bd;
  Value img = make_constant(random_tensor({3, 60, 64}, rng));
  try {
    bb.forward(bd, img);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("32") != std::string::npos);
  }
}

TEST_CASE("backbone parameter count equals the per-layer tally") {
  Rng rng(8);
  ParamStore store;
  auto stages = default_stage_configs();
  Backbone bb("backbone", stages, store, rng);

  // independent tally, layer by layer
  std::int64_t expect = 0;
  int prev_dim = 3;
  for (const auto& s : stages) {
    const std::int64_t in_cols = static_cast<std::int64_t>(prev_dim) * s.patch_merge * s.patch_merge;
    expect += in_cols * s.dim + s.dim;  // merge linear
    expect += 2 * s.dim;                // merge layer norm
    const std::int64_t dim = s.dim, hidden = static_cast<std::int64_t>(s.dim) * s.mlp_ratio;
    const std::int64_t per_block = 2 * dim            // block layer norm
                                   + 2 * (dim * dim + dim)  // h/v channel projections
                                   + dim * hidden + hidden  // mlp in
                                   + hidden * dim + dim;    // mlp out
    expect += per_block * s.depth;
    prev_dim = s.dim;
  }
  CHECK(store.count_with_prefix("backbone.") == expect);
  CHECK(store.total_count() == expect);
}

TEST_CASE("fpn: level shapes, width validation, parameter monotonicity") {
  Rng rng(9);
  const std::vector<int> dims{64, 128, 256, 512};

  ParamStore s64, s128, s256;
  Fpn f64("fpn", dims, 64, s64, rng);
  Fpn f128("fpn", dims, 128, s128, rng);
  Fpn f256("fpn", dims, 256, s256, rng);
  CHECK_THROWS_AS(([&] {
                    ParamStore bad;
                    Fpn f("fpn", dims, 0, bad, rng);
                  }()),
                  ConfigError);

  // parameter tally for one width
  auto tally = [&](std::int64_t c) {
    std::int64_t n = 0;
    for (int d : dims) n += static_cast<std::int64_t>(d) * c + c + 9 * c * c + c;
    return n;
  };
  CHECK(s64.total_count() == tally(64));
  CHECK(s128.total_count() == tally(128));
  CHECK(s256.total_count() > s128.total_count());
  CHECK(s128.total_count() > s64.total_count());
  CHECK(s128.total_count() - s64.total_count() == tally(128) - tally(64));

  // shapes at 224 input: four levels, all 64 channels
  ParamStore bbs;
  Backbone bb("backbone", default_stage_configs(), bbs, rng);
  NoGradGuard ng;
  Binder bd;
  Value img = make_constant(random_tensor({3, 224, 224}, rng, 0.3));
  auto pyr = f64.forward(bd, bb.forward(bd, img));
  REQUIRE(pyr.size() == 4);
  CHECK(pyr[0].shape() == Shape({64, 56, 56}));
  CHECK(pyr[1].shape() == Shape({64, 28, 28}));
  CHECK(pyr[2].shape() == Shape({64, 14, 14}));
  CHECK(pyr[3].shape() == Shape({64, 7, 7}));
}

TEST_CASE("small backbone+fpn end-to-end gradient check") {
  Rng rng(10);
  ParamStore store;
  std::vector<StageConfig> stages;
  StageConfig s1;
  s1.patch_merge = 2;
  s1.dim = 4;
  s1.depth = 1;
  s1.mlp_ratio = 2;
  s1.shift = AxialShiftConfig{3, 1, 4};
  StageConfig s2 = s1;
  s2.dim = 6;
  StageConfig s3 = s2;
  s3.dim = 8;
  StageConfig s4 = s3;
  s4.dim = 10;
  stages = {s1, s2, s3, s4};
  Backbone bb("backbone", stages, store, rng);
  Fpn fpn("fpn", {4, 6, 8, 10}, 4, store, rng);

  Tensor img = random_tensor({3, 16, 16}, rng, 0.5);
  std::vector<Param*> params;
  for (auto& [name, p] : store.items()) params.push_back(p);
  Rng probe(11);
  auto rep = check_gradients(params,
                             [&](Binder& bd) {
                               auto pyr = fpn.forward(bd, bb.forward(bd, make_constant(img)));
                               Value acc = mean(gelu(pyr[0]));
                               for (int i = 1; i < 4; ++i) acc = add(acc, mean(gelu(pyr[static_cast<std::size_t>(i)])));
                               return acc;
                             },
                             probe, 4);
  INFO("worst param " << (rep.worst_param ? rep.worst_param->name : "-") << " err " << rep.max_err);
  CHECK(rep.max_err < 1e-4);
}
