#include "doctest.h"

#include <chrono>
#include <random>

#include "bpclip/model.hpp"

using namespace bpclip;

namespace {

Tensor<float> random_bank(std::int64_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<float> b(Shape{kNumAdjectives, d});
  for (std::int64_t r = 0; r < kNumAdjectives; ++r) {
    double s = 0;
    for (std::int64_t c = 0; c < d; ++c) {
      b.at(r, c) = static_cast<float>(n(rng));
      s += b.at(r, c) * b.at(r, c);
    }
    for (std::int64_t c = 0; c < d; ++c) b.at(r, c) = static_cast<float>(b.at(r, c) / std::sqrt(s));
  }
  return b;
}

Tensor<float> random_image(std::int64_t b, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Tensor<float> t(Shape{b, 3, h, w});
  for (auto& v : t.data()) v = u(rng);
  return t;
}

ModelConfig small_config(Mode mode) {
  ModelConfig cfg;
  cfg.glp.mode = mode;
  cfg.glp.dim = cfg.attention.dim = cfg.head.dim = 32;
  cfg.head.text_dim = 64;
  cfg.head.hidden = 16;
  return cfg;
}

}  // namespace

TEST_CASE("full model runs forward and backward in both modes") {
  for (Mode mode : {Mode::fr, Mode::nr}) {
    const auto cfg = small_config(mode);
    auto params = init_model_params<float>(cfg, 7);
    const auto bank = random_bank(cfg.head.text_dim, 3);
    Context<float> ctx(params, true);
    auto img = Var<float>::constant(random_image(2, 64, 64, 1));
    auto ref = Var<float>::constant(random_image(2, 64, 64, 2));
    auto out = model_forward(ctx, img, mode == Mode::fr ? &ref : nullptr, cfg, &bank);
    REQUIRE(out.score.shape() == Shape{2});
    CHECK(out.score.value().all_finite());
    auto loss = mse_loss(out.score, Var<float>::constant(Tensor<float>(Shape{2}, 0.5f)));
    backward(loss);
    const auto grads = ctx.gradients();
    CHECK(grads.count("head.reg.fc2.bias") == 1);
    CHECK(grads.count("backbone.stage1.norm.weight") == 0);
    CHECK(grads.count("backbone.stage1.conv.weight") == 1);
  }
}
