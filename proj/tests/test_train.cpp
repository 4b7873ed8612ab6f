#include "doctest.h"

#include <fstream>
#include <numbers>

#include "bpclip/config.hpp"
#include "bpclip/synthetic.hpp"
#include "bpclip/train.hpp"
#include "bpclip/verify.hpp"
#include "support.hpp"

using namespace bpclip;

namespace {

struct Setup {
  ModelConfig model = verify::small_model(Mode::fr, 16, 32, 32);
  Tensor<float> bank;
  ParameterSet<float> params;
  std::vector<LoadedSample> train_set, val_set;

  Setup() {
    std::mt19937_64 rng(3);
    bank = testing::unit_rows<float>(kNumAdjectives, 32, rng);
    params = init_model_params<float>(model, 11);
    SyntheticSpec spec;
    spec.size = 32;
    spec.num_references = 3;
    spec.per_reference = 3;
    spec.seed = 5;
    train_set = make_synthetic(spec);
    spec.seed = 6;
    spec.num_references = 1;
    val_set = make_synthetic(spec);
  }
};

TrainConfig quick() {
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 2;
  c.batch_size = 4;
  c.patch_size = 32;
  c.resize = 0;
  c.t_max = 2;
  c.seed = 9;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("cosine schedule endpoints, midpoint and period") {
  const CosineSchedule s{1e-4, 1e-6, 50};
  CHECK(s(0) == doctest::Approx(1e-4).epsilon(1e-14));
  CHECK(s(50) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(s(25) == doctest::Approx(0.5 * (1e-4 + 1e-6)).epsilon(1e-12));
  CHECK(s(100) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s(75) == doctest::Approx(s(25)).epsilon(1e-12));
  CHECK_THROWS_AS((CosineSchedule{0, 0, 50}).validate(), ConfigError);
  CHECK_THROWS_AS((CosineSchedule{1e-4, 2e-4, 50}).validate(), ConfigError);
  CHECK_THROWS_AS((CosineSchedule{1e-4, 0, 0}).validate(), ConfigError);
}

TEST_CASE("adamw matches a hand-computed trajectory") {
  ParameterSet<float> p;
  p.add("w", Tensor<float>(Shape{1}, std::vector<float>{1.0f}));
  p.add("frozen", Tensor<float>(Shape{1}, std::vector<float>{2.0f}), false);
  AdamW opt({0.9, 0.999, 1e-8, 0.01});
  const double expected[] = {0.899000002, 0.9033641597874735, 0.8435830956086494};
  const float grads[] = {0.5f, -0.5f, 2.0f};
  for (int t = 0; t < 3; ++t) {
    std::map<std::string, Tensor<float>> g;
    g["w"] = Tensor<float>(Shape{1}, std::vector<float>{grads[t]});
    g["frozen"] = Tensor<float>(Shape{1}, std::vector<float>{1.0f});
    opt.step(p, g, 0.1);
    CHECK(p.get("w")[0] == doctest::Approx(expected[t]).epsilon(1e-6));
    CHECK(p.get("frozen")[0] == 2.0f);
  }
  CHECK(opt.steps() == 3);
}

TEST_CASE("training keeps frozen tensors, logs every epoch and is reproducible") {
  Setup s;
  const auto before = s.params;
  auto p1 = s.params;
  const auto dir = testing::scratch("train_run");
  const auto r1 = train(quick(), s.model, p1, &s.bank, s.train_set, s.val_set, dir);
  REQUIRE(r1.epochs.size() == 2);
  CHECK(r1.step_losses.size() == 6);  // 9 samples, batches of 4
  CHECK(r1.step_lrs.front() == doctest::Approx(1e-3));
  CHECK(r1.epochs[1].lr == doctest::Approx(0.5e-3));
  for (double l : r1.step_losses) CHECK(std::isfinite(l));

  std::size_t frozen = 0, moved = 0;
  for (const auto& [name, e] : p1.entries()) {
    if (!e.trainable) {
      ++frozen;
      CHECK(e.value == before.get(name));
    } else if (!(e.value == before.get(name))) {
      ++moved;
    }
  }
  CHECK(frozen > 0);
  CHECK(moved > 0);

  for (const char* f : {"train_log.jsonl", "last.bpta", "best.bpta", "state.json"}) CHECK(std::filesystem::exists(dir / f));
  std::istringstream log(slurp(dir / "train_log.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch").get<int>() == lines);
    CHECK(j.contains("loss"));
    CHECK(j.contains("val_srcc"));
    ++lines;
  }
  CHECK(lines == 2);

  auto p2 = s.params;
  const auto dir2 = testing::scratch("train_run2");
  const auto r2 = train(quick(), s.model, p2, &s.bank, s.train_set, s.val_set, dir2);
  CHECK(r1.step_losses == r2.step_losses);
  CHECK(slurp(dir / "train_log.jsonl") == slurp(dir2 / "train_log.jsonl"));
  for (const auto& [name, e] : p1.entries()) CHECK(e.value == p2.get(name));
}

TEST_CASE("a non-finite loss stops training with DivergenceError") {
  Setup s;
  auto p = s.params;
  p.mutable_value("head.reg.fc2.bias").fill(std::numeric_limits<float>::infinity());
  const auto dir = testing::scratch("train_diverge");
  CHECK_THROWS_AS(train(quick(), s.model, p, &s.bank, s.train_set, s.val_set, dir), DivergenceError);
  CHECK(std::filesystem::exists(dir / "last.bpta"));
}

TEST_CASE("configuration merging and validation") {
  const auto tiny = testing::source_dir() / "configs" / "tiny_fr.toml";
  const auto rc = resolve_config(&tiny, {});
  CHECK(rc.model.mode() == Mode::fr);
  CHECK(rc.train.epochs == 4);
  CHECK(rc.train.patch_size == 64);

  const auto over = resolve_config(&tiny, {"train.epochs=9", "train.lr=0.01"});
  CHECK(over.train.epochs == 9);
  CHECK(over.train.lr == 0.01);
  CHECK(over.resolved.at("train").at("epochs") == 9);

  CHECK_THROWS_AS(resolve_config(&tiny, {"train.bogus=1"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(&tiny, {"train.epochs=\"many\""}), ConfigError);
  CHECK_THROWS_AS(resolve_config(&tiny, {"nonsense"}), ConfigError);

  auto base = default_config();
  CHECK_THROWS_AS(merge_config(base, {{"model", {{"colour", "red"}}}}), ConfigError);

  const auto dir = testing::scratch("config");
  {
    std::ofstream f(dir / "broken.toml");
    f << "[train\nlr = \n";
  }
  const auto broken = dir / "broken.toml";
  CHECK_THROWS_AS(resolve_config(&broken, {}), ConfigError);

  auto bad = quick();
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(TrainConfig::defaults_for(Mode::fr).patch_size == 384);
}

TEST_CASE("evaluation with perfect predictions") {
  SyntheticSpec spec;
  spec.size = 32;
  spec.mode = Mode::nr;
  const auto samples = make_synthetic(spec);
  const auto r = evaluate([](const LoadedSample& s) { return 2.0 * s.mos + 1.0; }, samples);
  CHECK(r.srcc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.plcc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.count == samples.size());
  const auto j = to_json(r);
  CHECK(j.size() == 3);
  CHECK(j.at("count").get<std::size_t>() == samples.size());

  std::vector<LoadedSample> two(samples.begin(), samples.begin() + 2);
  CHECK_THROWS_AS(evaluate([](const LoadedSample&) { return 0.0; }, two), MetricUndefinedError);
}
