#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bpclip/archive.hpp"
#include "bpclip/ops.hpp"
#include "bpclip/parameters.hpp"

namespace bpclip {

inline constexpr int kNumLevels = 5;

enum class BackboneVariant {
  tiny,           ///< five stride-2 conv-norm-ReLU stages
  resnet50_like,  ///< ResNet50 tap points: stem, layer1..layer4 (torchvision parameter names)
};

std::string to_string(BackboneVariant v);
BackboneVariant backbone_variant_from_string(const std::string& s);

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::tiny;
  std::array<std::int64_t, kNumLevels> stage_channels{8, 16, 32, 64, 128};
  std::int64_t height = 64;
  std::int64_t width = 64;
  // Input normalization constants, per RGB channel.
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};

  /// Throws ConfigError on a violated invariant.
  void validate() const;

  /// Spatial size of level i (1-based): H / 2^i.
  std::int64_t level_height(int level) const { return height >> level; }
  std::int64_t level_width(int level) const { return width >> level; }
  std::int64_t channels(int level) const { return stage_channels[static_cast<std::size_t>(level - 1)]; }
};

inline constexpr std::array<std::int64_t, kNumLevels> kResNet50Channels{64, 256, 512, 1024, 2048};

template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, kNumLevels> levels;
  const Var<T>& level(int i) const { return levels[static_cast<std::size_t>(i - 1)]; }
};

/// Every backbone parameter name with its shape, in creation order.
std::vector<std::pair<std::string, Shape>> backbone_layout(const BackboneConfig& cfg);

template <typename T>
void init_backbone_params(const BackboneConfig& cfg, std::mt19937_64& rng, ParameterSet<T>& params);

/// image (B,3,H,W) with values in [0,1]; H and W must be multiples of 32.
/// Throws InputError for bad shapes or non-finite pixels, ConfigError when the
/// parameters do not match `cfg`.
template <typename T>
FeaturePyramid<T> backbone_forward(Context<T>& ctx, const Var<T>& image, const BackboneConfig& cfg);

/// Marks every backbone normalization entry (affine and running statistics)
/// non-trainable. Everything else keeps its flag.
template <typename T>
ParameterSet<T> set_norm_frozen(ParameterSet<T> params);

}  // namespace bpclip
