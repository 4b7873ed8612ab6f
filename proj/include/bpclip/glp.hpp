#pragma once

#include <array>
#include <random>
#include <string>

#include "bpclip/backbone.hpp"

// Gated local pooling: gate each backbone level with a sigmoid spatial mask,
// average-pool it down to the coarsest grid and project channels to a shared
// width D. Parameter names live under "glp.level{i}." plus the shared
// positional encoding "glp.pos_embed".

namespace bpclip {

enum class Mode { fr, nr };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct GlpConfig {
  Mode mode = Mode::fr;
  std::int64_t dim = 256;
};

inline const std::string kPositionalEncodingName = "glp.pos_embed";

std::string glp_prefix(int level);

/// Channel width entering the projection at `level`: 3*C_i for FR, C_i for NR.
std::int64_t glp_concat_channels(const BackboneConfig& bb, const GlpConfig& cfg, int level);

template <typename T>
struct PooledFeatures {
  std::array<Var<T>, kNumLevels> levels;  // each (B, H_5*W_5, D)
  std::array<Var<T>, kNumLevels> masks;   // each (B, 1, H_i, W_i)
  const Var<T>& level(int i) const { return levels[static_cast<std::size_t>(i - 1)]; }
};

template <typename T>
void init_glp_params(const BackboneConfig& bb, const GlpConfig& cfg, std::mt19937_64& rng, ParameterSet<T>& params);

/// sigmoid(phi_i(x)): a 3x3 -> ReLU -> 1x1 bottleneck producing one spatial mask channel.
template <typename T>
Var<T> gate_mask(Context<T>& ctx, const Var<T>& x, int level);

/// sigmoid(phi_i(|Fd - Fr|)) * (Fd ++ Fr ++ |Fd - Fr|), concatenated on channels.
template <typename T>
Var<T> gated_fuse_fr(Context<T>& ctx, const Var<T>& distorted, const Var<T>& reference, int level,
                     Var<T>* mask_out = nullptr);

/// sigmoid(phi_i(F)) * (W_f F) with W_f a bias-free 1x1 convolution.
template <typename T>
Var<T> gated_fuse_nr(Context<T>& ctx, const Var<T>& features, int level, Var<T>* mask_out = nullptr);

/// Window average (window = stride = H_i / grid_h) then per-position linear map to D,
/// flattened to (B, grid_h*grid_w, D).
template <typename T>
Var<T> pool_project(Context<T>& ctx, const Var<T>& masked, int level, std::int64_t grid_h, std::int64_t grid_w);

/// g (B,L,D) + pos (L,D).
template <typename T>
Var<T> add_positional(const Var<T>& g, const Var<T>& pos);

/// Full GLP stage over all five levels, including the shared positional encoding.
/// `reference` is required in FR mode and must be null in NR mode.
template <typename T>
PooledFeatures<T> glp_forward(Context<T>& ctx, const FeaturePyramid<T>& distorted,
                              const FeaturePyramid<T>* reference, const GlpConfig& cfg);

}  // namespace bpclip
