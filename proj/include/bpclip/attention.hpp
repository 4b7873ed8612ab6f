#pragma once

#include <array>
#include <random>
#include <string>

#include "bpclip/glp.hpp"

namespace bpclip {

inline constexpr int kNumFusedLevels = kNumLevels - 1;

enum class MscaDirection {
  bottom_up,  ///< query from the shallower level, key/value from the deeper one
  top_down,   ///< query from the deeper level (ablation)
};

std::string to_string(MscaDirection d);
MscaDirection msca_direction_from_string(const std::string& s);

struct AttentionConfig {
  std::int64_t dim = 256;
  int num_heads = 4;
  bool layer_norm = false;   ///< pre-norm on attention inputs
  bool dual_branch = true;   ///< false drops the SA weight branch
  MscaDirection direction = MscaDirection::bottom_up;

  void validate() const;
};

/// Which pooled levels feed cross-attention block `block` (1..4).
struct MscaWiring {
  int query_level;
  int key_value_level;
};

MscaWiring msca_wiring(int block, MscaDirection direction);

template <typename T>
struct FusedFeatures {
  std::array<Var<T>, kNumFusedLevels> levels;       ///< G''' (B, L, D)
  std::array<Var<T>, kNumFusedLevels> info;         ///< G'
  std::array<Var<T>, kNumFusedLevels> weight;       ///< G'' (undefined when single-branch)
  std::array<Var<T>, kNumFusedLevels> gates;        ///< sigmoid weight factors (undefined when single-branch)
  std::array<Tensor<T>, kNumFusedLevels> info_probs;    ///< (B, heads, L, L)
  std::array<Tensor<T>, kNumFusedLevels> weight_probs;  ///< (B, heads, L, L)
};

template <typename T>
void init_attention_params(const AttentionConfig& cfg, std::mt19937_64& rng, ParameterSet<T>& params);

/// Two-layer D -> D -> D perceptron with GELU hidden activation, under `prefix`.fc1 / `prefix`.fc2.
template <typename T>
Var<T> mlp(Context<T>& ctx, const Var<T>& x, const std::string& prefix);

/// Cross-scale block `block`: shallow = G_i, deep = G_{i+1}. Bottom-up computes
/// Attn(Wq G_i, Wk G_{i+1}, Wv G_{i+1}) + G_i; top-down swaps the roles.
template <typename T>
Var<T> msca_block(Context<T>& ctx, const Var<T>& shallow, const Var<T>& deep, int block, const AttentionConfig& cfg,
                  Tensor<T>* probs = nullptr);

/// Attn(Wq G, Wk G, Wv G) + G.
template <typename T>
Var<T> sa_block(Context<T>& ctx, const Var<T>& g, int block, const AttentionConfig& cfg, Tensor<T>* probs = nullptr);

/// MLP_info(G') * sigmoid(MLP_weight(G'')). `gate_out` receives the sigmoid factor.
template <typename T>
Var<T> fuse_branches(Context<T>& ctx, const Var<T>& info, const Var<T>& weight, int block, Var<T>* gate_out = nullptr);

template <typename T>
FusedFeatures<T> attention_forward(Context<T>& ctx, const PooledFeatures<T>& pooled, const AttentionConfig& cfg);

}  // namespace bpclip
