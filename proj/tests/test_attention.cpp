#include "doctest.h"

#include <set>

#include "bpclip/attention.hpp"
#include "bpclip/heatmap.hpp"
#include "bpclip/oracles.hpp"
#include "support.hpp"

using namespace bpclip;
using testing::as_doubles;
using testing::uniform;

namespace {

AttentionConfig small_cfg() {
  AttentionConfig c;
  c.dim = 8;
  c.num_heads = 2;
  return c;
}

ParameterSet<double> attn_params(const AttentionConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet<double> p;
  init_attention_params(cfg, rng, p);
  return p;
}

std::vector<double> project(const std::vector<double>& x, const Tensor<double>& w, int rows) {
  return oracle::affine(x, as_doubles(w), {}, rows, static_cast<int>(w.dim(1)), static_cast<int>(w.dim(0)));
}

PooledFeatures<double> random_pooled(std::mt19937_64& rng, std::int64_t B, std::int64_t L, std::int64_t D) {
  PooledFeatures<double> p;
  for (auto& l : p.levels) l = Var<double>::constant(uniform(Shape{B, L, D}, rng));
  return p;
}

}  // namespace

TEST_CASE("msca with zero projections is the residual only") {
  const auto cfg = small_cfg();
  auto p = attn_params(cfg, 1);
  for (const char* n : {".q.weight", ".k.weight", ".v.weight"}) p.mutable_value("attn.msca1" + std::string(n)).fill(0.0);
  Context<double> ctx(p, false);
  std::mt19937_64 rng(2);
  const auto g1 = uniform(Shape{2, 4, 8}, rng), g2 = uniform(Shape{2, 4, 8}, rng);
  CHECK(msca_block(ctx, Var<double>::constant(g1), Var<double>::constant(g2), 1, cfg).value() == g1);

  auto td = cfg;
  td.direction = MscaDirection::top_down;
  CHECK(msca_block(ctx, Var<double>::constant(g1), Var<double>::constant(g2), 1, td).value() == g2);
}

TEST_CASE("msca matches oracle attention plus residual") {
  auto cfg = small_cfg();
  auto p = attn_params(cfg, 3);
  Context<double> ctx(p, false);
  std::mt19937_64 rng(4);
  const auto shallow = uniform(Shape{2, 4, 8}, rng), deep = uniform(Shape{2, 4, 8}, rng);
  for (MscaDirection dir : {MscaDirection::bottom_up, MscaDirection::top_down}) {
    cfg.direction = dir;
    Tensor<double> probs;
    const auto out = msca_block(ctx, Var<double>::constant(shallow), Var<double>::constant(deep), 2, cfg, &probs).value();
    const auto& qsrc = dir == MscaDirection::bottom_up ? shallow : deep;
    const auto& kvsrc = dir == MscaDirection::bottom_up ? deep : shallow;
    const auto q = project(as_doubles(qsrc), p.get("attn.msca2.q.weight"), 8);
    const auto k = project(as_doubles(kvsrc), p.get("attn.msca2.k.weight"), 8);
    const auto v = project(as_doubles(kvsrc), p.get("attn.msca2.v.weight"), 8);
    auto ref = oracle::attention(q, k, v, 2, 4, 4, 8, 2);
    for (std::size_t i = 0; i < ref.out.size(); ++i) ref.out[i] += qsrc[i];
    CHECK(testing::max_abs_diff(out, ref.out) < 1e-13);
    CHECK(testing::max_abs_diff(probs, ref.probs) < 1e-13);
  }
  CHECK(msca_wiring(1, MscaDirection::bottom_up).query_level == 1);
  CHECK(msca_wiring(1, MscaDirection::bottom_up).key_value_level == 2);
  CHECK(msca_wiring(4, MscaDirection::top_down).query_level == 5);
}

TEST_CASE("sa block: zero projections, a single position, and the oracle") {
  const auto cfg = small_cfg();
  auto p = attn_params(cfg, 5);
  std::mt19937_64 rng(6);
  {
    auto z = p;
    for (const char* n : {".q.weight", ".k.weight", ".v.weight"}) z.mutable_value("attn.sa1" + std::string(n)).fill(0.0);
    Context<double> ctx(z, false);
    const auto g = uniform(Shape{2, 4, 8}, rng);
    CHECK(sa_block(ctx, Var<double>::constant(g), 1, cfg).value() == g);
  }
  Context<double> ctx(p, false);
  {
    const auto g = uniform(Shape{1, 1, 8}, rng);
    const auto out = sa_block(ctx, Var<double>::constant(g), 3, cfg).value();
    auto expected = project(as_doubles(g), p.get("attn.sa3.v.weight"), 1);
    for (std::size_t i = 0; i < 8; ++i) expected[i] += g[i];
    CHECK(testing::max_abs_diff(out, expected) < 1e-14);
  }
  const auto g = uniform(Shape{2, 5, 8}, rng);
  const auto out = sa_block(ctx, Var<double>::constant(g), 4, cfg).value();
  const auto x = as_doubles(g);
  auto ref = oracle::attention(project(x, p.get("attn.sa4.q.weight"), 10), project(x, p.get("attn.sa4.k.weight"), 10),
                               project(x, p.get("attn.sa4.v.weight"), 10), 2, 5, 5, 8, 2);
  for (std::size_t i = 0; i < ref.out.size(); ++i) ref.out[i] += x[i];
  CHECK(testing::max_abs_diff(out, ref.out) < 1e-13);
}

TEST_CASE("fuse_branches: saturated, neutral and bounded gates") {
  const auto cfg = small_cfg();
  auto p = attn_params(cfg, 7);
  std::mt19937_64 rng(8);
  const auto info = uniform(Shape{2, 4, 8}, rng), weight = uniform(Shape{2, 4, 8}, rng);
  Tensor<double> mlp_info;
  {
    Context<double> ctx(p, false);
    mlp_info = mlp(ctx, Var<double>::constant(info), "attn.info1").value();
  }
  {
    auto s = p;
    s.mutable_value("attn.gate1.fc2.weight").fill(0.0);
    s.mutable_value("attn.gate1.fc2.bias").fill(30.0);
    Context<double> ctx(s, false);
    const auto out = fuse_branches(ctx, Var<double>::constant(info), Var<double>::constant(weight), 1).value();
    CHECK(testing::max_abs_diff(out, as_doubles(mlp_info)) < 1e-4);
  }
  {
    auto s = p;
    s.mutable_value("attn.gate1.fc2.weight").fill(0.0);
    s.mutable_value("attn.gate1.fc2.bias").fill(0.0);
    Context<double> ctx(s, false);
    const auto out = fuse_branches(ctx, Var<double>::constant(info), Var<double>::constant(weight), 1).value();
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.5 * mlp_info[i]);
  }
  Context<double> ctx(p, false);
  Var<double> gate;
  const auto out = fuse_branches(ctx, Var<double>::constant(info), Var<double>::constant(weight), 1, &gate).value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    CHECK(std::abs(out[i]) <= std::abs(mlp_info[i]));
    CHECK(gate.value()[i] > 0.0);
    CHECK(gate.value()[i] < 1.0);
  }
  CHECK_THROWS_AS(fuse_branches(ctx, Var<double>::constant(info), Var<double>::constant(Tensor<double>(Shape{2, 3, 8})), 1),
                  InputError);
}

TEST_CASE("attention_forward: four fused outputs from five levels, every switch") {
  std::mt19937_64 rng(9);
  for (bool dual : {true, false}) {
    for (bool ln : {false, true}) {
      for (MscaDirection dir : {MscaDirection::bottom_up, MscaDirection::top_down}) {
        auto cfg = small_cfg();
        cfg.dual_branch = dual;
        cfg.layer_norm = ln;
        cfg.direction = dir;
        auto p = attn_params(cfg, 10);
        CHECK(p.contains("attn.sa1.q.weight") == dual);
        CHECK(p.contains("attn.msca1.ln_q.weight") == ln);
        Context<double> ctx(p, false);
        const auto out = attention_forward(ctx, random_pooled(rng, 2, 4, 8), cfg);
        for (int i = 0; i < kNumFusedLevels; ++i) {
          CHECK(out.levels[static_cast<std::size_t>(i)].shape() == Shape{2, 4, 8});
          CHECK(out.info[static_cast<std::size_t>(i)].defined());
          CHECK(out.gates[static_cast<std::size_t>(i)].defined() == dual);
        }
      }
    }
  }
  AttentionConfig bad = small_cfg();
  bad.num_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(msca_direction_from_string("top-down") == MscaDirection::top_down);
}

TEST_CASE("attention maps: eight files, normalized info maps, gate range") {
  auto cfg = small_cfg();
  auto p = attn_params(cfg, 11);
  std::mt19937_64 rng(12);
  const auto pooled = random_pooled(rng, 1, 4, 8);
  auto pf = p.cast<float>();
  PooledFeatures<float> pooled_f;
  for (int i = 0; i < kNumLevels; ++i) {
    pooled_f.levels[static_cast<std::size_t>(i)] =
        Var<float>::constant(pooled.levels[static_cast<std::size_t>(i)].value().cast<float>());
  }
  Context<float> ctx(pf, false);
  const auto fused = attention_forward(ctx, pooled_f, cfg);
  const auto maps = attention_maps(fused, 2, 2);
  REQUIRE(maps.size() == 8);
  std::set<std::string> names;
  for (const auto& m : maps) {
    names.insert(m.file_name());
    CHECK(m.values.shape() == Shape{2, 2});
    double s = 0.0;
    for (float v : m.values.data()) {
      s += v;
      if (m.branch == "weight") {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
      }
    }
    if (m.branch == "info") CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
  CHECK(names == std::set<std::string>{"level1_info.png", "level2_info.png", "level3_info.png", "level4_info.png",
                                       "level1_weight.png", "level2_weight.png", "level3_weight.png", "level4_weight.png"});

  const auto dir = testing::scratch("heatmaps");
  const auto files = write_attention_maps(maps, dir, 64, 64);
  CHECK(files.size() == 8);
  for (const auto& f : files) CHECK(std::filesystem::exists(f));
  CHECK(load_image(files.front()).shape() == Shape{3, 64, 64});

  auto single = cfg;
  single.dual_branch = false;
  auto ps = attn_params(single, 11).cast<float>();
  Context<float> cs(ps, false);
  CHECK_THROWS_AS(attention_maps(attention_forward(cs, pooled_f, single), 2, 2), ConfigError);
}

TEST_CASE("uniform attention gives a constant info heatmap") {
  auto cfg = small_cfg();
  auto p = attn_params(cfg, 13);
  for (int b = 1; b <= kNumFusedLevels; ++b) p.mutable_value("attn.msca" + std::to_string(b) + ".q.weight").fill(0.0);
  auto pf = p.cast<float>();
  std::mt19937_64 rng(14);
  PooledFeatures<float> pooled;
  for (auto& l : pooled.levels) l = Var<float>::constant(uniform<float>(Shape{1, 4, 8}, rng));
  Context<float> ctx(pf, false);
  const auto maps = attention_maps(attention_forward(ctx, pooled, cfg), 2, 2);
  for (const auto& m : maps) {
    if (m.branch != "info") continue;
    for (float v : m.values.data()) CHECK(v == doctest::Approx(0.25f));
  }
  const auto img = render_heatmap(maps.front().values, 16, 16);
  CHECK(img.shape() == Shape{3, 16, 16});
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t i = 0; i < 256; ++i) CHECK(img[static_cast<std::size_t>(c * 256 + i)] == img[static_cast<std::size_t>(c * 256)]);
  }
}
