#pragma once

#include <vector>

#include "bpclip/autograd.hpp"

// Differentiable tensor operations. Every op validates shapes and throws
// InputError on mismatch. Layouts: images and feature maps are NCHW,
// token sequences are (B, L, D).

namespace bpclip {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);

/// x + p where p.shape == x.shape without its leading (batch) axis.
template <typename T> Var<T> add_broadcast(const Var<T>& x, const Var<T>& p);

template <typename T> Var<T> scale(const Var<T>& x, T s);
/// x * s for a single-element variable s.
template <typename T> Var<T> scale_by(const Var<T>& x, const Var<T>& s);

template <typename T> Var<T> abs(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
/// Exact (erf) GELU.
template <typename T> Var<T> gelu(const Var<T>& x);

/// mask (B,1,H,W) broadcast over the channels of x (B,C,H,W).
template <typename T> Var<T> mul_mask(const Var<T>& mask, const Var<T>& x);

template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int axis);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);

/// x (B,Ci,H,W), weight (Co,Ci,k,k), optional bias (Co). Zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

/// Normalization with fixed statistics: (x - mean) / sqrt(var + eps) * gamma + beta, per channel.
/// The statistics never receive gradients.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& mean, const Var<T>& var, const Var<T>& gamma,
                  const Var<T>& beta, T eps);

template <typename T> Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int pad);

/// Non-overlapping average pooling with window == stride.
template <typename T> Var<T> avg_pool2d(const Var<T>& x, int window_h, int window_w);

/// y = x W^T + b over the last axis. weight (out,in), bias (out) optional.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// (B,C,H,W) -> (B,H*W,C), row-major over spatial positions.
template <typename T> Var<T> to_sequence(const Var<T>& x);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);

/// Multi-head scaled dot-product attention, softmax(Q K^T / sqrt(d_k)) V per head.
/// q (B,Lq,D), k and v (B,Lk,D). When `probs` is given it receives the
/// attention weights, shaped (B, heads, Lq, Lk).
template <typename T>
Var<T> sdp_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int num_heads,
                     Tensor<T>* probs = nullptr);

/// Mean over axis 1 of a (B,L,D) tensor.
template <typename T> Var<T> mean_sequence(const Var<T>& x);

/// Cosine similarity of every row of x (B,d) with every row of bank (K,d) -> (B,K).
/// Throws NumericError when any row has zero norm.
template <typename T> Var<T> cosine_similarity(const Var<T>& x, const Tensor<T>& bank);

/// Softmax over the last axis, max-subtracted.
template <typename T> Var<T> softmax(const Var<T>& x);

template <typename T> Var<T> mse_loss(const Var<T>& pred, const Var<T>& target);
template <typename T> Var<T> sum(const Var<T>& x);

}  // namespace bpclip
