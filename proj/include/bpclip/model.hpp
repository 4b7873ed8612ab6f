#pragma once

#include <cstdint>
#include <filesystem>

#include "bpclip/clip_head.hpp"
#include "json.hpp"

namespace bpclip {

struct ModelConfig {
  BackboneConfig backbone;
  GlpConfig glp;
  AttentionConfig attention;
  HeadConfig head;

  Mode mode() const noexcept { return glp.mode; }
  /// Checks each part plus the shared width D across GLP, attention and head.
  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown enum strings throw ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// All parameters for `cfg`, deterministically seeded. Backbone normalization
/// entries come back frozen.
template <typename T>
ParameterSet<T> init_model_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
struct ModelOutput {
  Var<T> score;  ///< (B)
  FeaturePyramid<T> distorted;
  FeaturePyramid<T> reference;  ///< FR only
  PooledFeatures<T> pooled;
  FusedFeatures<T> fused;
  HeadOutput<T> head;
};

/// `reference` must be given in FR mode and null in NR mode. The same backbone
/// weights process both images. `bank` may be null only without the text head.
template <typename T>
ModelOutput<T> model_forward(Context<T>& ctx, const Var<T>& distorted, const Var<T>* reference,
                             const ModelConfig& cfg, const Tensor<T>* bank);

/// Copies every "backbone." tensor from a weight archive into `params`,
/// checking shapes. Archive names may omit the "backbone." prefix
/// (torchvision-style state dicts). Returns the number of tensors copied.
template <typename T>
std::size_t load_backbone_weights(const std::filesystem::path& path, ParameterSet<T>& params);

struct Checkpoint {
  ModelConfig config;
  ParameterSet<float> params;
  nlohmann::json extra = nlohmann::json::object();
};

/// Parameter archive with metadata {"model_config", "frozen", "extra"}.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParameterSet<float>& params,
                     const nlohmann::json& extra = nlohmann::json::object());
/// Validates every expected tensor name and shape against the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bpclip
