#include "bpclip/oracles.hpp"

#include <cmath>
#include <stdexcept>

namespace bpclip::oracle {

Attention attention(const std::vector<double>& q, const std::vector<double>& k, const std::vector<double>& v, int B,
                    int Lq, int Lk, int D, int heads) {
  const int dh = D / heads;
  Attention r;
  r.out.assign(static_cast<std::size_t>(B * Lq * D), 0.0);
  r.probs.assign(static_cast<std::size_t>(B * heads * Lq * Lk), 0.0);
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < Lq; ++i) {
        std::vector<double> logits(static_cast<std::size_t>(Lk));
        for (int j = 0; j < Lk; ++j) {
          double dot = 0.0;
          for (int c = 0; c < dh; ++c) {
            dot += q[static_cast<std::size_t>((b * Lq + i) * D + h * dh + c)] *
                   k[static_cast<std::size_t>((b * Lk + j) * D + h * dh + c)];
          }
          logits[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
        }
        // Plain exponentials, normalized afterwards (no max shift) so the
        // oracle does not mirror the library's stabilization.
        double z = 0.0;
        for (double& l : logits) {
          l = std::exp(l);
          z += l;
        }
        for (int j = 0; j < Lk; ++j) {
          const double p = logits[static_cast<std::size_t>(j)] / z;
          r.probs[static_cast<std::size_t>(((b * heads + h) * Lq + i) * Lk + j)] = p;
          for (int c = 0; c < dh; ++c) {
            r.out[static_cast<std::size_t>((b * Lq + i) * D + h * dh + c)] +=
                p * v[static_cast<std::size_t>((b * Lk + j) * D + h * dh + c)];
          }
        }
      }
    }
  }
  return r;
}

std::vector<double> brute_mid_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0.0, equal = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) less += 1.0;
      if (v[j] == v[i]) equal += 1.0;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: bad lengths");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(brute_mid_ranks(a), brute_mid_ranks(b));
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::vector<double> sequence_mean(const std::vector<double>& x, int B, int L, int D) {
  std::vector<double> out(static_cast<std::size_t>(B * D), 0.0);
  for (int b = 0; b < B; ++b) {
    for (int l = 0; l < L; ++l) {
      for (int d = 0; d < D; ++d) out[static_cast<std::size_t>(b * D + d)] += x[static_cast<std::size_t>((b * L + l) * D + d)];
    }
  }
  for (double& v : out) v /= L;
  return out;
}

std::vector<double> affine(const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& b,
                           int N, int in, int out) {
  std::vector<double> y(static_cast<std::size_t>(N * out));
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < out; ++o) {
      double s = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
      for (int i = 0; i < in; ++i) s += x[static_cast<std::size_t>(n * in + i)] * w[static_cast<std::size_t>(o * in + i)];
      y[static_cast<std::size_t>(n * out + o)] = s;
    }
  }
  return y;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

std::vector<double> cosines(const std::vector<double>& x, const std::vector<double>& bank, int B, int K, int d) {
  std::vector<double> out(static_cast<std::size_t>(B * K));
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) {
      double dot = 0.0, nx = 0.0, ny = 0.0;
      for (int c = 0; c < d; ++c) {
        const double xv = x[static_cast<std::size_t>(b * d + c)], yv = bank[static_cast<std::size_t>(k * d + c)];
        dot += xv * yv;
        nx += xv * xv;
        ny += yv * yv;
      }
      out[static_cast<std::size_t>(b * K + k)] = dot / (std::sqrt(nx) * std::sqrt(ny));
    }
  }
  return out;
}

std::vector<double> window_average(const std::vector<double>& x, int C, int H, int W, int wh, int ww) {
  const int oh = H / wh, ow = W / ww;
  std::vector<double> out(static_cast<std::size_t>(C * oh * ow), 0.0);
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int xx = 0; xx < W; ++xx) {
        out[static_cast<std::size_t>((c * oh + y / wh) * ow + xx / ww)] += x[static_cast<std::size_t>((c * H + y) * W + xx)];
      }
    }
  }
  for (double& v : out) v /= wh * ww;
  return out;
}

}  // namespace bpclip::oracle
