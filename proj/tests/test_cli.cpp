#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string("\"") + BPCLIP_CLI + "\" " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

const fs::path kConfig = testing::source_dir() / "configs" / "tiny_fr.toml";
const fs::path kImages = testing::source_dir() / "data" / "synthetic" / "fr" / "images";

// One short training run shared by the read-only cases below.
const fs::path& trained() {
  static const fs::path dir = [] {
    auto d = testing::scratch("cli_train");
    const auto r = run("train --config " + q(kConfig) + " --out-dir " + q(d) + " --train.epochs=2");
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("train writes checkpoints, logs and reports") {
  const auto& dir = trained();
  for (const char* f : {"best.bpta", "last.bpta", "config.json", "report.json", "state.json", "train_log.jsonl"}) {
    CHECK(fs::exists(dir / f));
  }
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.is_object());
  const auto cfg = nlohmann::json::parse(slurp(dir / "config.json"));
  CHECK(cfg.at("train").at("epochs") == 2);
}

TEST_CASE("same seed twice gives an identical training log") {
  const auto a = testing::scratch("cli_seed_a"), b = testing::scratch("cli_seed_b");
  const std::string common = "train --config " + q(kConfig) + " --train.epochs=2 --seed 3 --out-dir ";
  REQUIRE(run(common + q(a)).code == 0);
  REQUIRE(run(common + q(b)).code == 0);
  const auto la = slurp(a / "train_log.jsonl");
  CHECK_FALSE(la.empty());
  CHECK(la == slurp(b / "train_log.jsonl"));
}

TEST_CASE("usage errors exit with code 2") {
  const auto d = testing::scratch("cli_usage");
  CHECK(run("train --config " + q(kConfig) + " --out-dir " + q(d) + " --no-such-flag").code == 2);
  CHECK(run("train --config " + q(kConfig) + " --out-dir " + q(d) + " --train.bogus=1").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("score --checkpoint " + q(trained() / "best.bpta") + " --image " + q(kImages / "ref0_d1.png")).code == 2);
  CHECK(run("eval --checkpoint " + q(d / "missing.bpta")).code == 2);
}

TEST_CASE("score prints the documented JSON") {
  const auto r = run("score --json --checkpoint " + q(trained() / "best.bpta") + " --image " +
                     q(kImages / "ref0_d1.png") + " --reference " + q(kImages / "ref0.png"));
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j.at("mode") == "FR");
  CHECK(j.at("levels") == 4);
  CHECK(std::isfinite(j.at("score").get<double>()));
  CHECK(j.at("adjectives").size() == 40);
  CHECK(j.at("dimensions").size() == 6);
  const auto& sims = j.at("similarities");
  REQUIRE(sims.size() == 160);  // 4 levels x 40 adjectives, softmax per level
  for (int l = 0; l < 4; ++l) {
    double total = 0.0;
    for (int k = 0; k < 40; ++k) total += sims.at(l * 40 + k).get<double>();
    CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
  }
  CHECK(j.at("level_similarities").size() == 4);

  // a pair of identical images still scores finitely
  const auto same = run("score --json --checkpoint " + q(trained() / "best.bpta") + " --image " +
                        q(kImages / "ref0.png") + " --reference " + q(kImages / "ref0.png"));
  REQUIRE(same.code == 0);
  CHECK(std::isfinite(nlohmann::json::parse(same.out).at("score").get<double>()));
}

TEST_CASE("eval prints SRCC/PLCC JSON") {
  const auto r = run("eval --json --checkpoint " + q(trained() / "best.bpta"));
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j.at("count") == 20);
  CHECK(j.at("srcc").get<double>() >= -1.0);
  CHECK(j.at("srcc").get<double>() <= 1.0);
  CHECK(j.at("plcc").get<double>() >= -1.0);
  CHECK(j.at("plcc").get<double>() <= 1.0);
}

TEST_CASE("export-attn writes eight heatmaps") {
  const auto d = testing::scratch("cli_attn");
  const auto r = run("export-attn --checkpoint " + q(trained() / "best.bpta") + " --image " + q(kImages / "ref1_d2.png") +
                     " --reference " + q(kImages / "ref1.png") + " --out-dir " + q(d));
  REQUIRE(r.code == 0);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(d)) pngs += e.path().extension() == ".png";
  CHECK(pngs == 8);
  CHECK(fs::exists(d / "level4_weight.png"));
}
