#pragma once

#include <array>
#include <random>
#include <vector>

#include "bpclip/attention.hpp"
#include "bpclip/text_bank.hpp"

namespace bpclip {

inline constexpr std::int64_t kRegressionWidth = kNumFusedLevels * kNumAdjectives;

struct HeadConfig {
  std::int64_t dim = 256;        ///< D, width of fused features
  std::int64_t text_dim = 512;   ///< d_text
  std::int64_t hidden = 128;     ///< regression MLP hidden width
  double tau = 100.0;
  bool learn_tau = false;        ///< adds trainable "head.tau"
  bool text_head = true;         ///< false: per-level linear D -> 40 replaces the text-space step

  void validate() const;
};

inline const std::string kTauName = "head.tau";

template <typename T>
struct HeadOutput {
  Var<T> score;                                       ///< (B)
  std::array<Var<T>, kNumFusedLevels> similarities;   ///< s_i (B, 40)
  std::array<Tensor<T>, kNumFusedLevels> cosines;     ///< raw c_k (B, 40); empty without text head
  std::array<Var<T>, kNumFusedLevels> embeddings;     ///< x_i (B, d_text); undefined without text head
};

template <typename T>
void init_head_params(const HeadConfig& cfg, std::mt19937_64& rng, ParameterSet<T>& params);

/// Mean over the sequence axis, then D -> D -> d_text MLP under head.proj{level}.
template <typename T>
Var<T> project_to_clip(Context<T>& ctx, const Var<T>& fused, int level, const HeadConfig& cfg);

/// softmax(tau * cos(x, bank rows)). `cosines_out` receives the raw cosines.
template <typename T>
Var<T> adjective_similarity(const Var<T>& x, const Tensor<T>& bank, const Var<T>& tau,
                            Tensor<T>* cosines_out = nullptr);
template <typename T>
Var<T> adjective_similarity(const Var<T>& x, const Tensor<T>& bank, T tau, Tensor<T>* cosines_out = nullptr);

/// Concatenates the four s_i into a 160-vector and applies the regression MLP
/// (160 -> hidden -> 1, GELU, no output activation). Returns shape (B).
template <typename T>
Var<T> regress_score(Context<T>& ctx, const std::vector<Var<T>>& similarities);

template <typename T>
HeadOutput<T> head_forward(Context<T>& ctx, const FusedFeatures<T>& fused, const Tensor<T>* bank,
                           const HeadConfig& cfg);

}  // namespace bpclip
