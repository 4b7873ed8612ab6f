#pragma once

// Reference implementations written as plain scalar loops over row-major
// buffers. They share no code with the library ops and exist only to check them.

#include <cstdint>
#include <vector>

namespace bpclip::oracle {

struct Attention {
  std::vector<double> out;    // (B, Lq, D)
  std::vector<double> probs;  // (B, heads, Lq, Lk)
};

/// Per head h: softmax(Q_h K_h^T / sqrt(D/heads)) V_h, heads occupying
/// contiguous column blocks.
Attention attention(const std::vector<double>& q, const std::vector<double>& k, const std::vector<double>& v, int B,
                    int Lq, int Lk, int D, int heads);

/// Rank of each value: 1 + (#smaller) + (#equal - 1) / 2, counted pairwise.
std::vector<double> brute_mid_ranks(const std::vector<double>& v);

/// Two-pass covariance Pearson correlation.
double pearson(const std::vector<double>& a, const std::vector<double>& b);
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Mean of squared differences.
double mse(const std::vector<double>& a, const std::vector<double>& b);

/// x (B,L,D) -> mean over L, (B,D).
std::vector<double> sequence_mean(const std::vector<double>& x, int B, int L, int D);

/// y = x W^T + b; x (N,in), W (out,in).
std::vector<double> affine(const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& b,
                           int N, int in, int out);

double gelu(double x);

/// Cosine of every row of x (B,d) with every row of bank (K,d).
std::vector<double> cosines(const std::vector<double>& x, const std::vector<double>& bank, int B, int K, int d);

/// Window average over non-overlapping wh x ww blocks of (C,H,W).
std::vector<double> window_average(const std::vector<double>& x, int C, int H, int W, int wh, int ww);

}  // namespace bpclip::oracle
