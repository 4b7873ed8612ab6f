#include "doctest.h"

#include "bpclip/error.hpp"
#include "bpclip/metrics.hpp"
#include "bpclip/oracles.hpp"
#include "support.hpp"

using namespace bpclip;

TEST_CASE("perfectly monotone and anti-monotone predictions") {
  const std::vector<double> p{1, 2, 3}, g{10, 20, 30}, r{30, 20, 10};
  CHECK(srcc(p, g) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(plcc(p, g) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(srcc(p, r) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(plcc(p, r) == doctest::Approx(-1.0).epsilon(1e-15));
  // monotone but nonlinear: rank order is perfect, linear fit is not
  const std::vector<double> x{1, 2, 3, 4, 5}, y{1, 4, 9, 16, 125};
  CHECK(srcc(x, y) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(plcc(x, y) < 0.99);
}

TEST_CASE("tied values receive the mean of their positions") {
  const std::vector<double> v{3, 1, 3, 2, 3, 1};
  const auto r = mid_ranks(v);
  CHECK(r == std::vector<double>{5, 1.5, 5, 3, 5, 1.5});
  CHECK(r == oracle::brute_mid_ranks(v));

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> d(0, 4);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(11), b(11);
    for (auto& x : a) x = d(rng);
    for (auto& x : b) x = d(rng);
    CHECK(mid_ranks(a) == oracle::brute_mid_ranks(a));
    bool degenerate = std::all_of(a.begin(), a.end(), [&](double x) { return x == a[0]; }) ||
                      std::all_of(b.begin(), b.end(), [&](double x) { return x == b[0]; });
    if (!degenerate) CHECK(srcc(a, b) == doctest::Approx(oracle::spearman(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("random inputs agree with the two-pass oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(7), b(7);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    CHECK(std::abs(plcc(a, b) - oracle::pearson(a, b)) <= 1e-10);
    CHECK(std::abs(srcc(a, b) - oracle::spearman(a, b)) <= 1e-10);
  }
  // large offsets stress naive one-pass sums
  std::vector<double> a{1e9 + 1, 1e9 + 2, 1e9 + 4, 1e9 + 3}, b{1, 2, 3, 5};
  CHECK(std::abs(plcc(a, b) - oracle::pearson({1, 2, 4, 3}, b)) <= 1e-10);
}

TEST_CASE("undefined correlations raise") {
  const std::vector<double> two{1, 2}, flat{1, 1, 1}, three{1, 2, 3};
  CHECK_THROWS_AS(srcc(two, two), MetricUndefinedError);
  CHECK_THROWS_AS(plcc(flat, three), MetricUndefinedError);
  CHECK_THROWS_AS(srcc(three, flat), MetricUndefinedError);
  CHECK_THROWS_AS(plcc(three, std::vector<double>{1, 2, 3, 4}), MetricUndefinedError);
  CHECK_THROWS_AS(plcc(three, std::vector<double>{1, std::nan(""), 3}), MetricUndefinedError);
}

TEST_CASE("repeated-split summary uses the sample standard deviation") {
  std::vector<MetricsReport> runs{{0.8, 0.7, 10}, {0.9, 0.8, 10}, {1.0, 0.9, 10}};
  const auto s = summarize(runs);
  CHECK(s.srcc_mean == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(s.srcc_std == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(s.plcc_mean == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(s.plcc_std == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(summarize({runs[0]}).srcc_std == 0.0);

  const auto j = to_json(s);
  CHECK(j.at("runs").size() == 3);
  CHECK(j.at("srcc_mean").get<double>() == doctest::Approx(0.9));
  const auto one = to_json(compute_metrics(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}));
  CHECK(one.at("count").get<int>() == 3);
  CHECK(one.at("srcc").get<double>() == doctest::Approx(0.5));
}
