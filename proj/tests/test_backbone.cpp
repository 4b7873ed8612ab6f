#include "doctest.h"

#include <fstream>

#include "bpclip/archive.hpp"
#include "bpclip/backbone.hpp"
#include "bpclip/model.hpp"
#include "support.hpp"

using namespace bpclip;
using testing::uniform;

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

FeaturePyramid<double> run_backbone(const BackboneConfig& cfg, const Tensor<double>& image, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  static ParameterSet<double> params;
  params = ParameterSet<double>{};
  init_backbone_params(cfg, rng, params);
  Context<double> ctx(params, false);
  return backbone_forward(ctx, Var<double>::constant(image), cfg);
}

}  // namespace

TEST_CASE("archive round trip is bitwise identical") {
  std::mt19937_64 rng(1);
  ParameterSet<float> p;
  p.add("stage1.conv.weight", uniform<float>(Shape{8, 3, 3, 3}, rng));
  p.add("stage1.norm.running_mean", uniform<float>(Shape{8}, rng), false);
  const auto dir = testing::scratch("archive");
  save_parameter_archive(dir / "a.bpta", p);
  const auto loaded = load_parameter_archive<float>(dir / "a.bpta");
  REQUIRE(loaded.contains("stage1.conv.weight"));
  CHECK(loaded.get("stage1.conv.weight") == p.get("stage1.conv.weight"));
  CHECK(loaded.get("stage1.conv.weight").shape() == Shape{8, 3, 3, 3});
  CHECK_FALSE(loaded.is_trainable("stage1.norm.running_mean"));
  save_parameter_archive(dir / "b.bpta", loaded);
  CHECK(read_bytes(dir / "a.bpta") == read_bytes(dir / "b.bpta"));
}

TEST_CASE("archive corruption and truncation are detected") {
  std::mt19937_64 rng(2);
  ParameterSet<float> p;
  p.add("w", uniform<float>(Shape{16, 16}, rng));
  const auto dir = testing::scratch("archive_bad");
  save_parameter_archive(dir / "a.bpta", p);
  auto bytes = read_bytes(dir / "a.bpta");

  auto write = [&](const std::vector<std::uint8_t>& b) {
    std::ofstream f(dir / "bad.bpta", std::ios::binary);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  };
  auto kind_of = [&]() {
    try {
      load_parameter_archive<float>(dir / "bad.bpta");
    } catch (const LoadError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };

  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  write(truncated);
  CHECK(kind_of() == static_cast<int>(LoadError::Kind::checksum));

  auto flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x40;
  write(flipped);
  CHECK(kind_of() == static_cast<int>(LoadError::Kind::checksum));

  write({'n', 'o', 'p', 'e'});
  CHECK(kind_of() >= 0);
  CHECK_THROWS_AS(load_parameter_archive<float>(dir / "missing.bpta"), LoadError);
}

TEST_CASE("pyramid levels halve the input size") {
  BackboneConfig cfg;
  cfg.height = cfg.width = 384;
  cfg.stage_channels = {2, 2, 2, 2, 2};
  std::mt19937_64 rng(3);
  const auto pyr = run_backbone(cfg, uniform(Shape{1, 3, 384, 384}, rng, 0, 1), 3);
  const std::int64_t expected[] = {192, 96, 48, 24, 12};
  for (int i = 1; i <= kNumLevels; ++i) {
    CHECK(pyr.level(i).dim(2) == expected[i - 1]);
    CHECK(pyr.level(i).dim(3) == expected[i - 1]);
    CHECK(pyr.level(i).dim(1) == cfg.channels(i));
  }

  BackboneConfig small;
  small.height = small.width = 32;
  small.stage_channels = {2, 2, 2, 2, 2};
  const auto p32 = run_backbone(small, uniform(Shape{1, 3, 32, 32}, rng, 0, 1), 4);
  for (int i = 1; i <= kNumLevels; ++i) CHECK(p32.level(i).dim(2) == (32 >> i));
}

TEST_CASE("a zero normalized input with zero biases gives an all-zero pyramid") {
  BackboneConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.mean = {0, 0, 0};
  cfg.stddev = {1, 1, 1};
  const auto pyr = run_backbone(cfg, Tensor<double>(Shape{1, 3, 32, 32}), 5);
  for (int i = 1; i <= kNumLevels; ++i) {
    for (double v : pyr.level(i).value().data()) CHECK(v == 0.0);
  }
}

TEST_CASE("backbone configuration errors") {
  BackboneConfig cfg;
  cfg.height = 40;  // not divisible by 32
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  BackboneConfig r50;
  r50.variant = BackboneVariant::resnet50_like;
  CHECK_THROWS_AS(r50.validate(), ConfigError);
  r50.stage_channels = kResNet50Channels;
  CHECK_NOTHROW(r50.validate());
  CHECK_THROWS_AS(backbone_variant_from_string("vgg"), ConfigError);
}

TEST_CASE("resnet50-like layout uses torchvision names") {
  BackboneConfig cfg;
  cfg.variant = BackboneVariant::resnet50_like;
  cfg.stage_channels = kResNet50Channels;
  const auto layout = backbone_layout(cfg);
  auto has = [&](const std::string& n) {
    return std::any_of(layout.begin(), layout.end(), [&](const auto& e) { return e.first == n; });
  };
  CHECK(has("backbone.conv1.weight"));
  CHECK(has("backbone.layer1.0.downsample.0.weight"));
  CHECK(has("backbone.layer4.2.bn3.running_var"));
}

TEST_CASE("norm tensors are frozen, others stay trainable") {
  ModelConfig cfg;
  cfg.glp.dim = cfg.attention.dim = cfg.head.dim = 16;
  cfg.head.text_dim = 32;
  cfg.head.hidden = 8;
  const auto p = init_model_params<float>(cfg, 1);
  std::size_t frozen = 0;
  for (const auto& [name, e] : p.entries()) {
    if (name.starts_with("backbone.") && is_norm_parameter(name)) {
      CHECK_FALSE(e.trainable);
      ++frozen;
    } else {
      CHECK(e.trainable);
    }
  }
  CHECK(frozen == 4 * kNumLevels);
  // Zero norm layers: nothing to freeze, nothing changes.
  ParameterSet<float> plain;
  plain.add("head.reg.fc2.bias", Tensor<float>(Shape{1}));
  const auto same = set_norm_frozen(plain);
  CHECK(same.is_trainable("head.reg.fc2.bias"));
  CHECK(same.get("head.reg.fc2.bias") == plain.get("head.reg.fc2.bias"));
}

TEST_CASE("backbone weights load with or without the prefix") {
  ModelConfig cfg;
  cfg.glp.dim = cfg.attention.dim = cfg.head.dim = 16;
  cfg.head.text_dim = 32;
  auto params = init_model_params<float>(cfg, 1);
  const auto donor = init_model_params<float>(cfg, 2);
  ParameterSet<float> bare;
  for (const auto& [name, e] : donor.entries()) {
    if (name.starts_with("backbone.")) bare.add(name.substr(9), e.value);
  }
  const auto dir = testing::scratch("backbone_weights");
  save_parameter_archive(dir / "w.bpta", bare);
  CHECK(load_backbone_weights(dir / "w.bpta", params) == bare.size());
  CHECK(params.get("backbone.stage3.conv.weight") == donor.get("backbone.stage3.conv.weight"));
  CHECK_FALSE(params.get("glp.level1.proj.weight") == donor.get("glp.level1.proj.weight"));

  ParameterSet<float> wrong;
  wrong.add("backbone.stage1.conv.weight", Tensor<float>(Shape{3, 3, 3, 3}));
  save_parameter_archive(dir / "wrong.bpta", wrong);
  CHECK_THROWS_AS(load_backbone_weights(dir / "wrong.bpta", params), LoadError);
}
