#include "doctest.h"

#include "sge/attention.hpp"
#include "sge/encoder.hpp"
#include "sge/grad_check.hpp"
#include "sge/io_util.hpp"
#include "sge/scene.hpp"
#include "sge/sge_module.hpp"
#include "sge/tensor.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

using namespace sge;
using sge::test::randn;
using sge::test::weighted_sum;

namespace {

double fd_max_rel_err(ParamStore& store, const std::function<Tensor()>& loss_fn) {
  GradCheckOptions opts;
  opts.h = 1e-6;
  auto report = grad_check(store, loss_fn, opts);
  REQUIRE(report.checks > 0);
  return report.max_rel_err;
}

std::vector<std::uint8_t> rect_mask(std::int64_t h, std::int64_t w, std::int64_t x0,
                                    std::int64_t y0, std::int64_t x1, std::int64_t y1) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(h * w), 0);
  for (std::int64_t y = y0; y < y1; ++y)
    for (std::int64_t x = x0; x < x1; ++x) m[static_cast<std::size_t>(y * w + x)] = 1;
  return m;
}

SGEConfig small_cfg() {
  SGEConfig cfg;
  cfg.d_e = 6;
  cfg.d_g = 6;
  cfg.d_t = 6;
  cfg.mp_layers = 1;
  cfg.mp_heads = 2;
  cfg.prompt_heads = 2;
  return cfg;
}

bool values_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a.values()[i] != b.values()[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("parameter factory seeds by name") {
  ParamStore a, b;
  Tensor ta = add_param(a, "block.w", {3, 3}, {2, 3}, Init::gaussian, 0.5, 42);
  Tensor tb = add_param(b, "block.w", {3, 3}, {1}, Init::gaussian, 0.5, 42);
  CHECK(values_equal(ta, tb));  // same (seed, name) -> same init, stores differ

  Tensor tc = add_param(b, "other.w", {3, 3}, {1}, Init::gaussian, 0.5, 42);
  CHECK_FALSE(values_equal(ta, tc));

  ParamStore c;
  Tensor td = add_param(c, "block.w", {3, 3}, {1}, Init::gaussian, 0.5, 43);
  CHECK_FALSE(values_equal(ta, td));

  CHECK(a.find("block.w")->trainable_in_stage == std::set<int>{2, 3});
  CHECK(ta.requires_grad());

  Tensor ones = add_param(c, "ln.g", {4}, {3}, Init::ones, 0.0, 1);
  CHECK(ones.values().minCoeff() == 1.0);
  Tensor zeros = add_param(c, "ln.b", {4}, {3}, Init::zeros, 0.0, 1);
  CHECK(zeros.values().maxCoeff() == 0.0);
}

TEST_CASE("multi-head attention") {
  Rng rng(7);
  ParamStore store;
  AttentionParams p = make_attention_params(store, "a", 4, 5, 8, 4, {3}, 11);
  CHECK(store.find("a.wk") != nullptr);
  CHECK(store.find("a.bk") == nullptr);  // key bias is dead under softmax
  CHECK(store.count() == 7);

  Tensor q = randn(rng, {3, 4});
  Tensor kv = randn(rng, {6, 5});

  SUBCASE("shapes and row-stochastic attention") {
    AttentionResult r = multi_head_attention(q, kv, p, 2);
    CHECK(r.out.shape() == Shape{3, 4});
    REQUIRE(r.head_attn.size() == 2);
    for (const auto& attn : r.head_attn) {
      REQUIRE(attn.shape() == Shape{3, 6});
      for (std::int64_t i = 0; i < 3; ++i) {
        double s = attn.mat().row(i).sum();
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
    }
  }

  SUBCASE("determinism") {
    Tensor o1 = multi_head_attention(q, kv, p, 2).out;
    Tensor o2 = multi_head_attention(q, kv, p, 2).out;
    CHECK(tensor_checksum(o1) == tensor_checksum(o2));
  }

  SUBCASE("head count must divide width") {
    CHECK_THROWS_AS(multi_head_attention(q, kv, p, 3), std::invalid_argument);
    CHECK_THROWS_AS(multi_head_attention(q, kv, p, 0), std::invalid_argument);
  }

  SUBCASE("causal mask blocks future positions exactly") {
    ParamStore st2;
    AttentionParams ps = make_attention_params(st2, "s", 4, 4, 8, 4, {3}, 5);
    Tensor x = randn(rng, {5, 4});
    AttentionResult r = multi_head_attention(x, x, ps, 2, true);
    for (const auto& attn : r.head_attn) {
      for (std::int64_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < 5; ++j) {
          if (j > i) CHECK(attn.mat()(i, j) == 0.0);
          s += attn.mat()(i, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
    }
    CHECK_THROWS_AS(multi_head_attention(q, kv, p, 2, true), std::invalid_argument);
  }

  SUBCASE("gradients match finite differences") {
    store.add("q", q);
    store.add("kv", kv);
    Tensor w = randn(rng, {3, 4}, false);
    CHECK(fd_max_rel_err(store, [&] {
            return weighted_sum(multi_head_attention(q, kv, p, 2).out, w);
          }) < 1e-5);
  }

  SUBCASE("causal gradients match finite differences") {
    ParamStore st2;
    AttentionParams ps = make_attention_params(st2, "s", 4, 4, 8, 4, {3}, 5);
    Tensor x = randn(rng, {4, 4});
    st2.add("x", x);
    Tensor w = randn(rng, {4, 4}, false);
    CHECK(fd_max_rel_err(st2, [&] {
            return weighted_sum(multi_head_attention(x, x, ps, 2, true).out, w);
          }) < 1e-5);
  }
}

TEST_CASE("transformer layer") {
  Rng rng(13);
  ParamStore store;
  TransformerLayerParams p = make_transformer_layer(store, "L0", 4, 2, {3}, 21);
  Tensor x = randn(rng, {3, 4});

  SUBCASE("zeroed output projections give residual identity") {
    p.attn.wo.values_mut().setZero();
    p.attn.bo.values_mut().setZero();
    p.ffn_w2.values_mut().setZero();
    p.ffn_b2.values_mut().setZero();
    Tensor y = transformer_layer(x, p, 2, false);
    CHECK(values_equal(y, x));
  }

  SUBCASE("gradients match finite differences") {
    store.add("x", x);
    Tensor w = randn(rng, {3, 4}, false);
    CHECK(fd_max_rel_err(store, [&] { return weighted_sum(transformer_layer(x, p, 2, false), w); }) <
          1e-5);
  }

  SUBCASE("ffn hidden width is 2x") {
    CHECK(store.find("L0.ffn.w1")->tensor.shape() == Shape{4, 8});
  }
}

TEST_CASE("mask sample point mapping") {
  SUBCASE("identity when grids match") {
    auto masks = std::vector<std::vector<std::uint8_t>>{rect_mask(4, 4, 2, 3, 3, 4)};
    masks[0][0] = 1;  // add pixel (0,0)
    auto pts = mask_sample_points(masks, 4, 4, 4, 4, 1024);
    REQUIRE(pts.size() == 1);
    REQUIRE(pts[0].size() == 2);
    CHECK(pts[0][0] == std::pair<double, double>{0.0, 0.0});
    CHECK(pts[0][1] == std::pair<double, double>{2.0, 3.0});
  }

  SUBCASE("downscale mapping with border clamp") {
    std::vector<std::uint8_t> m(48 * 48, 0);
    m[0] = 1;                 // (0,0)
    m[47] = 1;                // (47,0)
    m[5 * 48 + 20] = 1;       // (20,5)
    auto pts = mask_sample_points({m}, 48, 48, 6, 6, 1024)[0];
    REQUIRE(pts.size() == 3);
    CHECK(pts[0] == std::pair<double, double>{0.0, 0.0});       // -0.4375 clamped
    CHECK(pts[1] == std::pair<double, double>{5.0, 0.0});       // 5.4375 clamped
    CHECK(pts[2].first == 2.0625);   // (20.5)/8 - 0.5, exact in binary
    CHECK(pts[2].second == 0.1875);  // (5.5)/8 - 0.5
  }

  SUBCASE("stratified subsampling is deterministic") {
    std::vector<std::uint8_t> m(16, 0);
    for (int i = 0; i < 10; ++i) m[static_cast<std::size_t>(i)] = 1;  // row 0 + start of row 1
    auto pts = mask_sample_points({m}, 4, 4, 4, 4, 4)[0];
    REQUIRE(pts.size() == 4);
    // kept indices floor(k*10/4) = 0, 2, 5, 7 of the row-major point list
    CHECK(pts[0] == std::pair<double, double>{0.0, 0.0});
    CHECK(pts[1] == std::pair<double, double>{2.0, 0.0});
    CHECK(pts[2] == std::pair<double, double>{1.0, 1.0});
    CHECK(pts[3] == std::pair<double, double>{3.0, 1.0});

    auto all = mask_sample_points({m}, 4, 4, 4, 4, 10)[0];
    CHECK(all.size() == 10);
  }

  SUBCASE("errors") {
    std::vector<std::uint8_t> empty(16, 0);
    CHECK_THROWS_AS(mask_sample_points({empty}, 4, 4, 4, 4, 8), std::invalid_argument);
    std::vector<std::uint8_t> short_mask(15, 1);
    CHECK_THROWS_AS(mask_sample_points({short_mask}, 4, 4, 4, 4, 8), std::invalid_argument);
  }
}

TEST_CASE("mask pooling matches the arithmetic-mean oracle on aligned grids") {
  Rng rng(29);
  const std::int64_t d = 3, h = 5, w = 5;
  Tensor fmap = randn(rng, {d, h, w}, false);

  std::vector<std::vector<std::uint8_t>> masks;
  for (int e = 0; e < 3; ++e) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(h * w), 0);
    bool any = false;
    for (auto& bit : m) {
      bit = rng.uniform() < 0.4 ? 1 : 0;
      any = any || bit;
    }
    if (!any) m[static_cast<std::size_t>(e)] = 1;
    masks.push_back(std::move(m));
  }

  Tensor pooled = pool_mask_features(fmap, masks, h, w, 1024);
  REQUIRE(pooled.shape() == Shape{3, d});
  for (std::size_t e = 0; e < masks.size(); ++e) {
    for (std::int64_t c = 0; c < d; ++c) {
      double sum = 0.0;
      std::int64_t cnt = 0;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          if (masks[e][static_cast<std::size_t>(y * w + x)]) {
            sum += fmap.values()[c * h * w + y * w + x];
            ++cnt;
          }
      CHECK(std::abs(pooled.mat()(static_cast<std::int64_t>(e), c) - sum / cnt) <= 1e-12);
    }
  }

  SUBCASE("single aligned pixel pools to that grid point") {
    std::vector<std::uint8_t> one(static_cast<std::size_t>(h * w), 0);
    one[2 * 5 + 4] = 1;  // (x=4, y=2)
    Tensor p = pool_mask_features(fmap, {one}, h, w, 1024);
    for (std::int64_t c = 0; c < d; ++c)
      CHECK(p.mat()(0, c) == fmap.values()[c * h * w + 2 * w + 4]);
  }

  SUBCASE("no masks give an empty feature matrix") {
    Tensor p = pool_mask_features(fmap, {}, h, w, 1024);
    CHECK(p.shape() == Shape{0, d});
  }
}

TEST_CASE("pooled coordinate ramps recover exact pixel centroids") {
  // Entity interior to the canvas so no sample coordinate clamps; the ramp
  // channels are linear fields, which bilinear sampling reproduces exactly.
  SyntheticScene scene;
  scene.seed = 1;
  scene.config = SceneConfig{};
  Entity e;
  e.category_id = 2;
  e.x0 = 10;
  e.y0 = 14;
  e.x1 = 20;
  e.y1 = 30;
  scene.entities.push_back(e);
  scene.masks.push_back(rect_mask(48, 48, 10, 14, 20, 30));

  EncoderConfig enc;
  enc.d_e = 12;
  enc.noise_sigma = 0.0;
  Tensor fmap = render_feature_map(scene, enc);
  Tensor pooled = pool_mask_features(fmap, scene.masks, 48, 48, 1 << 20);
  // centroid_x = (mean(px) + 0.5)/48 with px in [10,20): mean 14.5 -> 0.3125
  CHECK(std::abs(pooled.mat()(0, 8) - 0.3125) <= 1e-12);
  // centroid_y with py in [14,30): mean 21.5 -> 22/48
  CHECK(std::abs(pooled.mat()(0, 9) - 22.0 / 48.0) <= 1e-12);
}

TEST_CASE("sge config validation") {
  SGEConfig bad = small_cfg();
  bad.mp_heads = 4;  // 6 % 4 != 0
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_cfg();
  bad.sample_points_cap = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_cfg();
  bad.mp_layers = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_NOTHROW(small_cfg().validate());
}

TEST_CASE("build_graph") {
  Rng rng(31);
  SGEConfig cfg = small_cfg();
  ParamStore store;
  SGEParams p = make_sge_params(store, cfg, SGEOptions{false, false}, {2, 3}, 3);

  SUBCASE("identity projection passes features through") {
    p.in_w.values_mut().setZero();
    for (std::int64_t i = 0; i < cfg.d_e; ++i)
      p.in_w.values_mut()[i * cfg.d_g + i] = 1.0;
    Tensor pooled = randn(rng, {3, cfg.d_e}, false);
    SceneGraph g = build_graph(pooled, p);
    CHECK_FALSE(g.activated);
    CHECK(g.n() == 3);
    CHECK(values_equal(g.node_features, pooled));
  }

  SUBCASE("empty input gives an empty raw graph") {
    SceneGraph g = build_graph(Tensor::zeros({0, cfg.d_e}), p);
    CHECK(g.n() == 0);
    CHECK(g.node_features.shape() == Shape{0, cfg.d_g});
  }
}

TEST_CASE("message passing") {
  Rng rng(37);
  SGEConfig cfg = small_cfg();
  cfg.mp_layers = 2;
  ParamStore store;
  SGEParams p = make_sge_params(store, cfg, SGEOptions{true, false}, {2, 3}, 9);

  SUBCASE("zeroed output projections are the identity") {
    for (auto& layer : p.mp) {
      layer.attn.wo.values_mut().setZero();
      layer.attn.bo.values_mut().setZero();
      layer.ffn_w2.values_mut().setZero();
      layer.ffn_b2.values_mut().setZero();
    }
    SceneGraph g{randn(rng, {4, cfg.d_g}, false), false};
    SceneGraph out = message_pass(g, p, cfg);
    CHECK_FALSE(out.activated);
    CHECK(values_equal(out.node_features, g.node_features));
  }

  SUBCASE("empty graph passes through") {
    SceneGraph g{Tensor::zeros({0, cfg.d_g}), false};
    CHECK(message_pass(g, p, cfg).n() == 0);
  }

  SUBCASE("activated graphs are rejected") {
    SceneGraph g{randn(rng, {2, cfg.d_g}, false), true};
    CHECK_THROWS_AS(message_pass(g, p, cfg), std::logic_error);
  }
}

TEST_CASE("prompt injection") {
  Rng rng(41);
  SGEConfig cfg = small_cfg();
  ParamStore store;
  SGEParams p = make_sge_params(store, cfg, SGEOptions{false, true}, {2, 3}, 17);
  SceneGraph g{randn(rng, {3, cfg.d_g}, false), false};

  SUBCASE("attention rows sum to one") {
    Tensor prompt = randn(rng, {4, cfg.d_t}, false);
    PromptAttention attn;
    SceneGraph out = inject_prompt(g, prompt, p, cfg, &attn);
    CHECK(out.activated);
    CHECK(out.n() == 3);
    REQUIRE(attn.head_rows.size() == static_cast<std::size_t>(cfg.prompt_heads));
    for (const auto& rows : attn.head_rows) {
      REQUIRE(rows.shape() == Shape{3, 4});
      for (std::int64_t i = 0; i < 3; ++i)
        CHECK(std::abs(rows.mat().row(i).sum() - 1.0) < 1e-9);
    }
  }

  SUBCASE("identical prompt tokens attract uniform attention") {
    Tensor row = randn(rng, {1, cfg.d_t}, false);
    Tensor prompt = Tensor::zeros({4, cfg.d_t});
    for (std::int64_t i = 0; i < 4; ++i) prompt.mat_mut().row(i) = row.mat().row(0);
    PromptAttention attn;
    inject_prompt(g, prompt, p, cfg, &attn);
    for (const auto& rows : attn.head_rows)
      for (std::int64_t i = 0; i < rows.dim(0); ++i)
        for (std::int64_t j = 0; j < rows.dim(1); ++j)
          CHECK(rows.mat()(i, j) == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("zeroed output projection leaves node features unchanged") {
    p.prompt_attn.wo.values_mut().setZero();
    p.prompt_attn.bo.values_mut().setZero();
    Tensor prompt = randn(rng, {2, cfg.d_t}, false);
    SceneGraph out = inject_prompt(g, prompt, p, cfg);
    CHECK(out.activated);
    CHECK(values_equal(out.node_features, g.node_features));
  }

  SUBCASE("activation requires a prompt") {
    CHECK_THROWS_AS(inject_prompt(g, Tensor::zeros({0, cfg.d_t}), p, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(inject_prompt(g, Tensor{}, p, cfg), std::invalid_argument);
  }

  SUBCASE("double activation is rejected") {
    Tensor prompt = randn(rng, {2, cfg.d_t}, false);
    SceneGraph out = inject_prompt(g, prompt, p, cfg);
    CHECK_THROWS_AS(inject_prompt(out, prompt, p, cfg), std::logic_error);
  }

  SUBCASE("empty graph still activates") {
    SceneGraph empty{Tensor::zeros({0, cfg.d_g}), false};
    Tensor prompt = randn(rng, {2, cfg.d_t}, false);
    SceneGraph out = inject_prompt(empty, prompt, p, cfg);
    CHECK(out.activated);
    CHECK(out.n() == 0);
  }
}

TEST_CASE("sge_forward") {
  Rng rng(43);
  SGEConfig cfg = small_cfg();
  const std::int64_t h = 5, w = 5;
  ParamStore store;
  SGEParams p = make_sge_params(store, cfg, SGEOptions{}, {2, 3}, 23);
  Tensor fmap = randn(rng, {cfg.d_e, h, w});
  std::vector<std::vector<std::uint8_t>> masks = {
      rect_mask(h, w, 0, 0, 2, 2),
      rect_mask(h, w, 3, 0, 5, 3),
      rect_mask(h, w, 1, 3, 4, 5),
  };
  Tensor prompt = randn(rng, {3, cfg.d_t});

  SUBCASE("deterministic and activated") {
    SceneGraph a = sge_forward(fmap, masks, h, w, prompt, p, cfg);
    SceneGraph b = sge_forward(fmap, masks, h, w, prompt, p, cfg);
    CHECK(a.activated);
    CHECK(a.n() == 3);
    CHECK(tensor_checksum(a.node_features) == tensor_checksum(b.node_features));
  }

  SUBCASE("prompt changes the output") {
    Tensor prompt2 = randn(rng, {3, cfg.d_t});
    Tensor a = sge_forward(fmap, masks, h, w, prompt, p, cfg).node_features;
    Tensor b = sge_forward(fmap, masks, h, w, prompt2, p, cfg).node_features;
    CHECK((a.mat() - b.mat()).cwiseAbs().maxCoeff() > 0.0);
  }

  SUBCASE("permutation equivariance") {
    Tensor base = sge_forward(fmap, masks, h, w, prompt, p, cfg).node_features;
    std::vector<int> perm = {0, 1, 2};
    do {
      std::vector<std::vector<std::uint8_t>> permuted;
      for (int idx : perm) permuted.push_back(masks[static_cast<std::size_t>(idx)]);
      Tensor out = sge_forward(fmap, permuted, h, w, prompt, p, cfg).node_features;
      for (std::int64_t i = 0; i < 3; ++i) {
        double diff =
            (out.mat().row(i) - base.mat().row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff();
        CHECK(diff < 1e-9);
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }

  SUBCASE("gradients match finite differences for every parameter and the map") {
    store.add("input.fmap", fmap);
    store.add("input.prompt", prompt);
    Tensor cot = randn(rng, {3, cfg.d_g}, false);
    CHECK(fd_max_rel_err(store, [&] {
            return weighted_sum(sge_forward(fmap, masks, h, w, prompt, p, cfg).node_features,
                                cot);
          }) < 1e-5);
  }

  SUBCASE("no dead parameters") {
    Tensor cot = randn(rng, {3, cfg.d_g}, false);
    store.zero_grads();
    Tensor loss =
        weighted_sum(sge_forward(fmap, masks, h, w, prompt, p, cfg).node_features, cot);
    backward(loss);
    for (const Parameter* param : static_cast<const ParamStore&>(store).all()) {
      INFO("param " << param->name);
      REQUIRE(param->tensor.has_grad());
      CHECK(param->tensor.grad().cwiseAbs().maxCoeff() > 0.0);
    }
  }

  SUBCASE("message-passing bypass registers no mp parameters") {
    ParamStore st2;
    SGEParams p2 = make_sge_params(st2, cfg, SGEOptions{false, true}, {2, 3}, 23);
    for (const Parameter* param : static_cast<const ParamStore&>(st2).all())
      CHECK(param->name.find("sge.mp.") == std::string::npos);
    SceneGraph g = sge_forward(fmap, masks, h, w, prompt, p2, cfg);
    CHECK(g.activated);
    // shared names initialize identically regardless of the option set
    CHECK(values_equal(p2.in_w, p.in_w));
  }

  SUBCASE("prompt bypass activates without attending to the prompt") {
    ParamStore st2;
    SGEParams p2 = make_sge_params(st2, cfg, SGEOptions{true, false}, {2, 3}, 23);
    SceneGraph g = sge_forward(fmap, masks, h, w, Tensor{}, p2, cfg);
    CHECK(g.activated);
    Tensor pooled = pool_mask_features(fmap, masks, h, w, cfg.sample_points_cap);
    SceneGraph manual = message_pass(build_graph(pooled, p2), p2, cfg);
    CHECK(values_equal(g.node_features, manual.node_features));
  }

  SUBCASE("single-node scene works") {
    std::vector<std::vector<std::uint8_t>> one = {rect_mask(h, w, 1, 1, 3, 3)};
    SceneGraph g = sge_forward(fmap, one, h, w, prompt, p, cfg);
    CHECK(g.n() == 1);
    CHECK(g.activated);
  }

  SUBCASE("feature map width must match the config") {
    Tensor bad = randn(rng, {cfg.d_e - 1, h, w}, false);
    CHECK_THROWS_AS(sge_forward(bad, masks, h, w, prompt, p, cfg), std::invalid_argument);
  }
}
