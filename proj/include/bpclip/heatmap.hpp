#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bpclip/attention.hpp"
#include "bpclip/image.hpp"

namespace bpclip {

struct AttentionMap {
  int level = 0;            // 1..4
  std::string branch;       // "info" (G') or "weight" (G'')
  Tensor<float> values;     // (grid_h, grid_w)
  std::string file_name() const { return "level" + std::to_string(level) + "_" + branch + ".png"; }
};

/// Eight maps for batch item `item`: for G'_i the cross-attention
/// probabilities averaged over heads and queries (a distribution over the
/// key grid, summing to 1); for G''_i the sigmoid weight factor averaged over
/// channels. Requires the dual-branch configuration.
std::vector<AttentionMap> attention_maps(const FusedFeatures<float>& fused, std::int64_t grid_h, std::int64_t grid_w,
                                         std::int64_t item = 0);

/// Min-max normalized, jet-colored, bilinearly upsampled to (height, width).
Image render_heatmap(const Tensor<float>& map, std::int64_t height, std::int64_t width);

/// Writes one PNG per map into `dir`; returns the paths in map order.
std::vector<std::filesystem::path> write_attention_maps(const std::vector<AttentionMap>& maps,
                                                        const std::filesystem::path& dir, std::int64_t height,
                                                        std::int64_t width);

}  // namespace bpclip
