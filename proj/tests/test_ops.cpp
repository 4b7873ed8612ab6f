#include "doctest.h"

#include "bpclip/gradcheck.hpp"
#include "bpclip/ops.hpp"
#include "bpclip/oracles.hpp"
#include "bpclip/parameters.hpp"
#include "support.hpp"

using namespace bpclip;
using testing::uniform;

TEST_CASE("tensor indexing, reshape and bounds") {
  Tensor<double> t(Shape{2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  CHECK(t.at(1, 2) == 5);
  CHECK(t.dim(-1) == 3);
  CHECK(t.reshaped({3, 2}).at(2, 0) == 4);
  CHECK_THROWS_AS(t.at(2, 0), InputError);
  CHECK_THROWS_AS(t.reshaped({4, 2}), InputError);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), InputError);
}

TEST_CASE("sdp attention: a single key returns its value row") {
  std::mt19937_64 rng(1);
  auto q = Var<double>::constant(uniform(Shape{1, 3, 4}, rng));
  auto k = Var<double>::constant(uniform(Shape{1, 1, 4}, rng));
  auto v = Var<double>::constant(uniform(Shape{1, 1, 4}, rng));
  const auto out = sdp_attention(q, k, v, 1).value();
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 4; ++c) CHECK(out.at(0, i, c) == doctest::Approx(v.value().at(0, 0, c)).epsilon(1e-12));
  }
}

TEST_CASE("sdp attention: zero queries average the values") {
  std::mt19937_64 rng(2);
  auto q = Var<double>::constant(Tensor<double>(Shape{1, 2, 4}));
  auto k = Var<double>::constant(uniform(Shape{1, 5, 4}, rng));
  auto v = Var<double>::constant(uniform(Shape{1, 5, 4}, rng));
  const auto out = sdp_attention(q, k, v, 2).value();
  for (int c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (int j = 0; j < 5; ++j) mean += v.value().at(0, j, c) / 5.0;
    CHECK(out.at(0, 0, c) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(out.at(0, 1, c) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("sdp attention matches the loop oracle") {
  std::mt19937_64 rng(3);
  struct Case {
    int B, Lq, Lk, D, heads;
  };
  for (const Case c : {Case{1, 2, 2, 2, 1}, Case{2, 3, 3, 4, 1}, Case{2, 3, 5, 8, 2}, Case{1, 4, 4, 8, 4}}) {
    auto q = uniform(Shape{c.B, c.Lq, c.D}, rng, -2, 2);
    auto k = uniform(Shape{c.B, c.Lk, c.D}, rng, -2, 2);
    auto v = uniform(Shape{c.B, c.Lk, c.D}, rng, -2, 2);
    Tensor<double> probs;
    const auto out = sdp_attention(Var<double>::constant(q), Var<double>::constant(k), Var<double>::constant(v),
                                   c.heads, &probs)
                         .value();
    const auto ref = oracle::attention(testing::as_doubles(q), testing::as_doubles(k), testing::as_doubles(v), c.B,
                                       c.Lq, c.Lk, c.D, c.heads);
    CHECK(testing::max_abs_diff(out, ref.out) < 1e-12);
    CHECK(testing::max_abs_diff(probs, ref.probs) < 1e-12);
  }
}

TEST_CASE("sdp attention rejects widths not divisible by the head count") {
  std::mt19937_64 rng(4);
  auto x = Var<double>::constant(uniform(Shape{1, 2, 6}, rng));
  CHECK_THROWS_AS(sdp_attention(x, x, x, 4), Error);
}

TEST_CASE("linear and gelu match scalar loops") {
  std::mt19937_64 rng(5);
  auto x = uniform(Shape{3, 5}, rng), w = uniform(Shape{4, 5}, rng), b = uniform(Shape{4}, rng);
  const auto y = linear(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b)).value();
  CHECK(testing::max_abs_diff(y, oracle::affine(testing::as_doubles(x), testing::as_doubles(w), testing::as_doubles(b),
                                                 3, 5, 4)) < 1e-13);
  const auto g = gelu(Var<double>::constant(x)).value();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(g[i] == doctest::Approx(oracle::gelu(x[i])).epsilon(1e-14));
}

TEST_CASE("softmax rows are positive and sum to one, even for large logits") {
  Tensor<double> x(Shape{2, 3}, std::vector<double>{1000, 1001, 999, -5, 0, 5});
  const auto s = softmax(Var<double>::constant(x)).value();
  for (int r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      CHECK(s.at(r, c) > 0.0);
      sum += s.at(r, c);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("mse loss examples") {
  Tensor<double> p(Shape{4}, std::vector<double>{0.1, 0.5, 0.9, 0.3});
  auto pv = Var<double>::constant(p);
  CHECK(mse_loss(pv, pv).value()[0] == 0.0);
  Tensor<double> off = p;
  for (auto& v : off.data()) v += 0.1;
  CHECK(mse_loss(Var<double>::constant(off), pv).value()[0] == doctest::Approx(0.01).epsilon(1e-12));

  std::mt19937_64 rng(6);
  auto a = uniform(Shape{5}, rng), b = uniform(Shape{5}, rng);
  CHECK(mse_loss(Var<double>::constant(a), Var<double>::constant(b)).value()[0] ==
        doctest::Approx(oracle::mse(testing::as_doubles(a), testing::as_doubles(b))).epsilon(1e-14));
  CHECK_THROWS_AS(mse_loss(Var<double>::constant(a), Var<double>::constant(Tensor<double>(Shape{4}))), InputError);
}

TEST_CASE("window average pooling matches block means") {
  std::mt19937_64 rng(7);
  auto x = uniform(Shape{1, 2, 4, 4}, rng);
  const auto y = avg_pool2d(Var<double>::constant(x), 2, 2).value();
  CHECK(y.shape() == Shape{1, 2, 2, 2});
  CHECK(testing::max_abs_diff(y, oracle::window_average(testing::as_doubles(x), 2, 4, 4, 2, 2)) < 1e-15);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  // f = sum(x * x + x) -> df/dx = 2x + 1
  auto x = Var<double>::leaf(Tensor<double>(Shape{3}, std::vector<double>{1, -2, 0.5}));
  auto f = sum(add(mul(x, x), x));
  backward(f);
  const auto g = x.grad();
  CHECK(g[0] == 3.0);
  CHECK(g[1] == -3.0);
  CHECK(g[2] == 2.0);
}

TEST_CASE("gradient check: linear fragment is exact to roundoff") {
  std::mt19937_64 rng(8);
  ParameterSet<double> leaves;
  leaves.add("w", uniform(Shape{3, 4}, rng));
  leaves.add("b", uniform(Shape{3}, rng));
  leaves.add("x", uniform(Shape{2, 4}, rng));
  ScalarFn loss = [](Context<double>& ctx) {
    return random_projection(linear(ctx.param("x"), ctx.param("w"), ctx.param("b")), 1);
  };
  GradCheckOptions opt;
  opt.samples_per_tensor = 100;
  const auto r = gradient_check(loss, leaves, opt);
  CHECK(r.checked == 12 + 3 + 8);
  CHECK(r.max_rel_error <= 1e-9);
}

TEST_CASE("gradient check: sdp attention on 2x3x4 inputs") {
  std::mt19937_64 rng(9);
  ParameterSet<double> leaves;
  for (const char* n : {"q", "k", "v"}) leaves.add(n, uniform(Shape{2, 3, 4}, rng));
  ScalarFn loss = [](Context<double>& ctx) {
    return random_projection(sdp_attention(ctx.param("q"), ctx.param("k"), ctx.param("v"), 2), 2);
  };
  GradCheckOptions opt;
  opt.samples_per_tensor = 24;
  const auto r = gradient_check(loss, leaves, opt);
  CHECK(r.checked == 72);
  CHECK(r.max_rel_error <= 1e-6);

  opt.gradient_scale = 1.01;
  CHECK_FALSE(gradient_check(loss, leaves, opt).passed(1e-6));
}

TEST_CASE("gradient check reports non-finite losses") {
  ParameterSet<double> leaves;
  leaves.add("x", Tensor<double>(Shape{2}, std::vector<double>{1.0, 2.0}));
  ScalarFn loss = [](Context<double>& ctx) { return sum(scale(ctx.param("x"), std::numeric_limits<double>::infinity())); };
  const auto r = gradient_check(loss, leaves);
  CHECK_FALSE(r.finite);
  CHECK_FALSE(r.passed(1.0));
}
