#include "doctest.h"

#include "bpclip/glp.hpp"
#include "bpclip/oracles.hpp"
#include "support.hpp"

using namespace bpclip;
using testing::uniform;

namespace {

BackboneConfig four_channel_backbone() {
  BackboneConfig bb;
  bb.stage_channels = {4, 4, 4, 4, 4};
  return bb;
}

ParameterSet<double> glp_params(Mode mode, std::int64_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet<double> p;
  init_glp_params(four_channel_backbone(), GlpConfig{mode, dim}, rng, p);
  return p;
}

void zero_mask_net(ParameterSet<double>& p, int level) {
  for (const char* n : {".mask.conv1.weight", ".mask.conv1.bias", ".mask.conv2.weight", ".mask.conv2.bias"}) {
    p.mutable_value(glp_prefix(level) + n).fill(0.0);
  }
}

// Plain loops: 3x3 same-padded conv, ReLU, 1x1 conv, sigmoid.
std::vector<double> mask_oracle(const std::vector<double>& x, int C, int H, int W, const Tensor<double>& w1,
                                const Tensor<double>& b1, const Tensor<double>& w2, const Tensor<double>& b2) {
  const int M = static_cast<int>(w1.dim(0));
  std::vector<double> hidden(static_cast<std::size_t>(M * H * W));
  for (int m = 0; m < M; ++m) {
    for (int y = 0; y < H; ++y) {
      for (int xx = 0; xx < W; ++xx) {
        double s = b1[static_cast<std::size_t>(m)];
        for (int c = 0; c < C; ++c) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xs = xx + dx;
              if (yy < 0 || yy >= H || xs < 0 || xs >= W) continue;
              s += w1.at(m, c, dy + 1, dx + 1) * x[static_cast<std::size_t>((c * H + yy) * W + xs)];
            }
          }
        }
        hidden[static_cast<std::size_t>((m * H + y) * W + xx)] = std::max(0.0, s);
      }
    }
  }
  std::vector<double> mask(static_cast<std::size_t>(H * W));
  for (int i = 0; i < H * W; ++i) {
    double s = b2[0];
    for (int m = 0; m < M; ++m) s += w2.at(0, m, 0, 0) * hidden[static_cast<std::size_t>(m * H * W + i)];
    mask[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-s));
  }
  return mask;
}

}  // namespace

TEST_CASE("FR gating: identical inputs give a spatially constant mask") {
  auto p = glp_params(Mode::fr, 8, 1);
  std::mt19937_64 rng(11);
  p.mutable_value("glp.level2.mask.conv1.bias") = uniform(p.get("glp.level2.mask.conv1.bias").shape(), rng);
  p.mutable_value("glp.level2.mask.conv2.bias") = uniform(Shape{1}, rng);
  Context<double> ctx(p, false);
  auto f = Var<double>::constant(uniform(Shape{2, 4, 6, 6}, rng));
  Var<double> mask;
  gated_fuse_fr(ctx, f, f, 2, &mask);
  // A zero difference map passes only biases through the mask network.
  const double b2 = p.get("glp.level2.mask.conv2.bias")[0];
  double pre = b2;
  for (std::int64_t m = 0; m < p.get("glp.level2.mask.conv1.bias").dim(0); ++m) {
    pre += p.get("glp.level2.mask.conv2.weight").at(0, m, 0, 0) * std::max(0.0, p.get("glp.level2.mask.conv1.bias")[m]);
  }
  const double expected = 1.0 / (1.0 + std::exp(-pre));
  for (double v : mask.value().data()) CHECK(v == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("FR gating with a zero mask network halves the concatenation") {
  auto p = glp_params(Mode::fr, 8, 2);
  zero_mask_net(p, 1);
  Context<double> ctx(p, false);
  std::mt19937_64 rng(12);
  const auto d = uniform(Shape{1, 4, 4, 4}, rng), r = uniform(Shape{1, 4, 4, 4}, rng);
  Var<double> mask;
  const auto out = gated_fuse_fr(ctx, Var<double>::constant(d), Var<double>::constant(r), 1, &mask).value();
  for (double v : mask.value().data()) CHECK(v == 0.5);
  REQUIRE(out.shape() == Shape{1, 12, 4, 4});
  for (int c = 0; c < 4; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        CHECK(out.at(0, c, y, x) == 0.5 * d.at(0, c, y, x));
        CHECK(out.at(0, 4 + c, y, x) == 0.5 * r.at(0, c, y, x));
        CHECK(out.at(0, 8 + c, y, x) == 0.5 * std::abs(d.at(0, c, y, x) - r.at(0, c, y, x)));
      }
    }
  }
}

TEST_CASE("FR gating matches a step-by-step loop oracle") {
  auto p = glp_params(Mode::fr, 8, 3);
  std::mt19937_64 rng(13);
  for (const char* n : {".mask.conv1.bias", ".mask.conv2.bias"}) {
    p.mutable_value(glp_prefix(3) + n) = uniform(p.get(glp_prefix(3) + n).shape(), rng, -0.3, 0.3);
  }
  Context<double> ctx(p, false);
  const auto d = uniform(Shape{1, 4, 4, 4}, rng), r = uniform(Shape{1, 4, 4, 4}, rng);
  const auto out = gated_fuse_fr(ctx, Var<double>::constant(d), Var<double>::constant(r), 3).value();

  std::vector<double> diff(64);
  for (std::size_t i = 0; i < 64; ++i) diff[i] = std::abs(d[i] - r[i]);
  const auto mask = mask_oracle(diff, 4, 4, 4, p.get("glp.level3.mask.conv1.weight"), p.get("glp.level3.mask.conv1.bias"),
                                p.get("glp.level3.mask.conv2.weight"), p.get("glp.level3.mask.conv2.bias"));
  double worst = 0.0;
  for (int c = 0; c < 12; ++c) {
    for (int i = 0; i < 16; ++i) {
      const double src = c < 4 ? d[static_cast<std::size_t>(c * 16 + i)]
                         : c < 8 ? r[static_cast<std::size_t>((c - 4) * 16 + i)]
                                 : diff[static_cast<std::size_t>((c - 8) * 16 + i)];
      worst = std::max(worst, std::abs(out[static_cast<std::size_t>(c * 16 + i)] - mask[static_cast<std::size_t>(i)] * src));
    }
  }
  CHECK(worst < 1e-14);
}

TEST_CASE("NR gating: identity value map and zero mask network halve the input") {
  auto p = glp_params(Mode::nr, 8, 4);
  zero_mask_net(p, 1);
  auto& w = p.mutable_value("glp.level1.value.weight");
  w.fill(0.0);
  for (int c = 0; c < 4; ++c) w.at(c, c, 0, 0) = 1.0;
  Context<double> ctx(p, false);
  std::mt19937_64 rng(14);
  const auto f = uniform(Shape{1, 4, 4, 4}, rng);
  const auto out = gated_fuse_nr(ctx, Var<double>::constant(f), 1).value();
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(out[i] == 0.5 * f[i]);

  const auto zero = gated_fuse_nr(ctx, Var<double>::constant(Tensor<double>(Shape{1, 4, 4, 4})), 1).value();
  for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("NR gating matches a loop oracle") {
  auto p = glp_params(Mode::nr, 8, 5);
  std::mt19937_64 rng(15);
  p.mutable_value("glp.level2.mask.conv2.bias") = uniform(Shape{1}, rng);
  Context<double> ctx(p, false);
  // three of the four channels carry signal
  auto f = uniform(Shape{1, 4, 4, 4}, rng);
  for (int i = 0; i < 16; ++i) f[static_cast<std::size_t>(48 + i)] = 0.0;
  const auto out = gated_fuse_nr(ctx, Var<double>::constant(f), 2).value();
  const auto mask = mask_oracle(testing::as_doubles(f), 4, 4, 4, p.get("glp.level2.mask.conv1.weight"),
                                p.get("glp.level2.mask.conv1.bias"), p.get("glp.level2.mask.conv2.weight"),
                                p.get("glp.level2.mask.conv2.bias"));
  const auto& w = p.get("glp.level2.value.weight");
  double worst = 0.0;
  for (int o = 0; o < 4; ++o) {
    for (int i = 0; i < 16; ++i) {
      double v = 0.0;
      for (int c = 0; c < 4; ++c) v += w.at(o, c, 0, 0) * f[static_cast<std::size_t>(c * 16 + i)];
      worst = std::max(worst, std::abs(out[static_cast<std::size_t>(o * 16 + i)] - mask[static_cast<std::size_t>(i)] * v));
    }
  }
  CHECK(worst < 1e-14);
}

TEST_CASE("NR gating without its parameters is a configuration error") {
  auto p = glp_params(Mode::fr, 8, 6);
  Context<double> ctx(p, false);
  CHECK_THROWS_AS(gated_fuse_nr(ctx, Var<double>::constant(Tensor<double>(Shape{1, 4, 4, 4})), 1), ConfigError);
}

TEST_CASE("pool_project: window 1 with an identity map only flattens") {
  ParameterSet<double> p;
  Tensor<double> eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  p.add("glp.level5.proj.weight", eye);
  p.add("glp.level5.proj.bias", Tensor<double>(Shape{3}));
  Context<double> ctx(p, false);
  std::mt19937_64 rng(16);
  const auto x = uniform(Shape{1, 3, 2, 2}, rng);
  const auto y = pool_project(ctx, Var<double>::constant(x), 5, 2, 2).value();
  REQUIRE(y.shape() == Shape{1, 4, 3});
  for (int l = 0; l < 4; ++l) {
    for (int c = 0; c < 3; ++c) CHECK(y.at(0, l, c) == x.at(0, c, l / 2, l % 2));
  }
}

TEST_CASE("pool_project: constants stay constant and windows average") {
  std::mt19937_64 rng(17);
  ParameterSet<double> p;
  p.add("glp.level1.proj.weight", uniform(Shape{5, 2}, rng));
  p.add("glp.level1.proj.bias", uniform(Shape{5}, rng));
  Context<double> ctx(p, false);

  const auto c = pool_project(ctx, Var<double>::constant(Tensor<double>(Shape{1, 2, 4, 4}, 0.7)), 1, 2, 2).value();
  const auto row = oracle::affine({0.7, 0.7}, testing::as_doubles(p.get("glp.level1.proj.weight")),
                                  testing::as_doubles(p.get("glp.level1.proj.bias")), 1, 2, 5);
  for (int l = 0; l < 4; ++l) {
    for (int d = 0; d < 5; ++d) CHECK(c.at(0, l, d) == doctest::Approx(row[static_cast<std::size_t>(d)]).epsilon(1e-14));
  }

  const auto x = uniform(Shape{1, 2, 4, 4}, rng);
  const auto means = oracle::window_average(testing::as_doubles(x), 2, 4, 4, 2, 2);  // (2, 2, 2)
  std::vector<double> seq(8);
  for (int l = 0; l < 4; ++l) {
    for (int ch = 0; ch < 2; ++ch) seq[static_cast<std::size_t>(l * 2 + ch)] = means[static_cast<std::size_t>(ch * 4 + l)];
  }
  const auto expected = oracle::affine(seq, testing::as_doubles(p.get("glp.level1.proj.weight")),
                                       testing::as_doubles(p.get("glp.level1.proj.bias")), 4, 2, 5);
  CHECK(testing::max_abs_diff(pool_project(ctx, Var<double>::constant(x), 1, 2, 2).value(), expected) < 1e-14);
  CHECK_THROWS_AS(pool_project(ctx, Var<double>::constant(Tensor<double>(Shape{1, 2, 5, 4})), 1, 2, 2), InputError);
}

TEST_CASE("positional encoding: zero encoding, zero features, one shared tensor") {
  std::mt19937_64 rng(18);
  const auto g = uniform(Shape{2, 4, 3}, rng), pos = uniform(Shape{4, 3}, rng);
  const auto same = add_positional(Var<double>::constant(g), Var<double>::constant(Tensor<double>(Shape{4, 3}))).value();
  CHECK(same == g);
  const auto rows = add_positional(Var<double>::constant(Tensor<double>(Shape{2, 4, 3})), Var<double>::constant(pos)).value();
  for (int b = 0; b < 2; ++b) {
    for (int l = 0; l < 4; ++l) {
      for (int d = 0; d < 3; ++d) CHECK(rows.at(b, l, d) == pos.at(l, d));
    }
  }
  CHECK_THROWS_AS(add_positional(Var<double>::constant(g), Var<double>::constant(Tensor<double>(Shape{5, 3}))), ConfigError);

  const auto p = glp_params(Mode::fr, 8, 7);
  std::size_t count = 0;
  for (const auto& n : p.names()) count += n.find("pos") != std::string::npos;
  CHECK(count == 1);
  CHECK(p.contains(kPositionalEncodingName));
}

TEST_CASE("glp_forward: five equal-sized levels and mode checks") {
  BackboneConfig bb;
  bb.stage_channels = {2, 3, 4, 5, 6};
  bb.height = bb.width = 64;
  std::mt19937_64 rng(19);
  for (Mode mode : {Mode::fr, Mode::nr}) {
    ParameterSet<double> p;
    init_glp_params(bb, GlpConfig{mode, 8}, rng, p);
    Context<double> ctx(p, false);
    FeaturePyramid<double> d, r;
    for (int i = 1; i <= kNumLevels; ++i) {
      d.levels[static_cast<std::size_t>(i - 1)] = Var<double>::constant(uniform(Shape{2, bb.channels(i), 64 >> i, 64 >> i}, rng));
      r.levels[static_cast<std::size_t>(i - 1)] = Var<double>::constant(uniform(Shape{2, bb.channels(i), 64 >> i, 64 >> i}, rng));
    }
    const auto out = glp_forward(ctx, d, mode == Mode::fr ? &r : nullptr, GlpConfig{mode, 8});
    for (int i = 1; i <= kNumLevels; ++i) CHECK(out.level(i).shape() == Shape{2, 4, 8});
    CHECK_THROWS_AS(glp_forward(ctx, d, mode == Mode::fr ? nullptr : &r, GlpConfig{mode, 8}), ConfigError);
  }
  CHECK(mode_from_string("NR") == Mode::nr);
  CHECK_THROWS_AS(mode_from_string("both"), ConfigError);
}
