#include "bpclip/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace bpclip {
namespace {

template <typename T>
Tensor<T>* grad_target(Node<T>& n, std::size_t i) {
  auto& p = n.parents[i];
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InputError(what);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T, B is [n x k]
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T s{0};
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[m x n] += A^T * B, A is [k x m], B is [k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ap[i];
      if (av == T{0}) continue;
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

struct ConvGeom {
  std::int64_t b, ci, h, w, co, k, ho, wo;
  int stride, pad;
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::int64_t hw = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.ci; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            row[oy * g.wo + ox] =
                (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(c * g.h + iy) * g.w + ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  const std::int64_t hw = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.ci; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            x[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, F f, D df) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  return Var<T>::make(std::move(out), {x}, [df](Node<T>& n) {
    const auto& xv = n.parents[0]->value();
    const auto& yv = n.value();
    auto* gx = grad_target(n, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < xv.numel(); ++i) (*gx)[i] += n.grad[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = grad_target(n, p)) {
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i];
    }
    if (auto* g = grad_target(n, 1)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value();
    const auto& bv = n.parents[1]->value();
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i] * bv[i];
    }
    if (auto* g = grad_target(n, 1)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& p) {
  const Shape& xs = x.shape();
  require(xs.size() >= 1 && Shape(xs.begin() + 1, xs.end()) == p.shape(),
          "add_broadcast: cannot broadcast " + shape_str(p.shape()) + " onto " + shape_str(xs));
  const std::size_t inner = p.value().numel();
  const std::size_t outer = static_cast<std::size_t>(xs[0]);
  Tensor<T> out(xs);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = x.value()[o * inner + i] + p.value()[i];
  }
  return Var<T>::make(std::move(out), {x, p}, [outer, inner](Node<T>& n) {
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i];
    }
    if (auto* g = grad_target(n, 1)) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) (*g)[i] += n.grad[o * inner + i];
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return unary(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
  require(s.value().numel() == 1, "scale_by: scale must have a single element");
  const T sv = s.value()[0];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * sv;
  return Var<T>::make(std::move(out), {x, s}, [](Node<T>& n) {
    const auto& xv = n.parents[0]->value();
    const T sv = n.parents[1]->value()[0];
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i] * sv;
    }
    if (auto* g = grad_target(n, 1)) {
      T acc{0};
      for (std::size_t i = 0; i < xv.numel(); ++i) acc += n.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(
      x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return unary(
      x, [=](T v) { return T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2)); },
      [=](T v, T) {
        const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
        return cdf + v * pdf;
      });
}

template <typename T>
Var<T> mul_mask(const Var<T>& mask, const Var<T>& x) {
  const Shape& ms = mask.shape();
  const Shape& xs = x.shape();
  require(ms.size() == 4 && xs.size() == 4 && ms[0] == xs[0] && ms[1] == 1 && ms[2] == xs[2] &&
              ms[3] == xs[3],
          "mul_mask: mask " + shape_str(ms) + " incompatible with " + shape_str(xs));
  const std::size_t b = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor<T> out(xs);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t p = 0; p < hw; ++p)
        out[(bi * c + ci) * hw + p] = mask.value()[bi * hw + p] * x.value()[(bi * c + ci) * hw + p];
  return Var<T>::make(std::move(out), {mask, x}, [b, c, hw](Node<T>& n) {
    const auto& mv = n.parents[0]->value();
    const auto& xv = n.parents[1]->value();
    auto* gm = grad_target(n, 0);
    auto* gx = grad_target(n, 1);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t i = (bi * c + ci) * hw + p;
          if (gm) (*gm)[bi * hw + p] += n.grad[i] * xv[i];
          if (gx) (*gx)[i] += n.grad[i] * mv[bi * hw + p];
        }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const int rank = static_cast<int>(s0.size());
  const int a = axis < 0 ? axis + rank : axis;
  require(a >= 0 && a < rank, "concat: axis out of range");
  Shape out_shape = s0;
  out_shape[a] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(static_cast<int>(s.size()) == rank, "concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != a) require(s[d] == s0[d], "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    }
    out_shape[a] += s[a];
  }
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < a; ++d) outer *= out_shape[d];
  for (int d = a + 1; d < rank; ++d) inner *= out_shape[d];
  const std::size_t out_row = out_shape[a] * inner;

  Tensor<T> out(out_shape);
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t wdt = p.shape()[a] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.value().ptr() + o * wdt, wdt, out.ptr() + o * out_row + off);
    }
    widths.push_back(wdt);
    off += wdt;
  }
  return Var<T>::make(std::move(out), parts, [outer, out_row, widths](Node<T>& n) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      if (auto* g = grad_target(n, pi)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[pi]; ++i) (*g)[o * widths[pi] + i] += n.grad[o * out_row + off + i];
      }
      off += widths[pi];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return Var<T>::make(std::move(out), {x}, [](Node<T>& n) {
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 4, "conv2d: input must be NCHW, got " + shape_str(xs));
  require(ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3],
          "conv2d: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  require(stride >= 1 && pad >= 0, "conv2d: invalid stride/padding");
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.shape() == Shape{ws[0]}, "conv2d: bias shape " + shape_str(bias.shape()));

  ConvGeom g{};
  g.b = xs[0];
  g.ci = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.co = ws[0];
  g.k = ws[2];
  g.stride = stride;
  g.pad = pad;
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d: kernel larger than padded input");

  const std::size_t ck = g.ci * g.k * g.k;
  const std::size_t hw = g.ho * g.wo;
  Tensor<T> out(Shape{g.b, g.co, g.ho, g.wo});
  std::vector<T> col(ck * hw);
  for (std::int64_t bi = 0; bi < g.b; ++bi) {
    im2col(x.value().ptr() + bi * g.ci * g.h * g.w, g, col.data());
    T* ob = out.ptr() + bi * g.co * hw;
    if (has_bias) {
      for (std::int64_t c = 0; c < g.co; ++c) std::fill_n(ob + c * hw, hw, bias.value()[c]);
    }
    gemm_nn<T>(g.co, hw, ck, weight.value().ptr(), col.data(), ob);
  }

  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var<T>::make(std::move(out), parents, [g, ck, hw, has_bias](Node<T>& n) {
    const auto& xv = n.parents[0]->value();
    const auto& wv = n.parents[1]->value();
    auto* gx = grad_target(n, 0);
    auto* gw = grad_target(n, 1);
    auto* gb = has_bias ? grad_target(n, 2) : nullptr;
    std::vector<T> col(ck * hw);
    std::vector<T> dcol;
    if (gx) dcol.resize(ck * hw);
    for (std::int64_t bi = 0; bi < g.b; ++bi) {
      const T* dout = n.grad.ptr() + bi * g.co * hw;
      if (gb) {
        for (std::int64_t c = 0; c < g.co; ++c) {
          T s{0};
          for (std::size_t p = 0; p < hw; ++p) s += dout[c * hw + p];
          (*gb)[c] += s;
        }
      }
      if (gw) {
        im2col(xv.ptr() + bi * g.ci * g.h * g.w, g, col.data());
        gemm_nt<T>(g.co, ck, hw, dout, col.data(), gw->ptr());
      }
      if (gx) {
        std::fill(dcol.begin(), dcol.end(), T{0});
        gemm_tn<T>(ck, hw, g.co, wv.ptr(), dout, dcol.data());
        col2im_add(dcol.data(), g, gx->ptr() + bi * g.ci * g.h * g.w);
      }
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& mean, const Var<T>& var, const Var<T>& gamma,
                  const Var<T>& beta, T eps) {
  const Shape& xs = x.shape();
  require(xs.size() == 4, "batch_norm: input must be NCHW");
  const Shape cs{xs[1]};
  require(mean.shape() == cs && var.shape() == cs && gamma.shape() == cs && beta.shape() == cs,
          "batch_norm: per-channel parameter shapes must be " + shape_str(cs));
  const std::size_t b = xs[0], c = xs[1], hw = xs[2] * xs[3];
  std::vector<T> inv_std(c);
  for (std::size_t ci = 0; ci < c; ++ci) inv_std[ci] = T{1} / std::sqrt(var.value()[ci] + eps);
  Tensor<T> out(xs);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T m = mean.value()[ci];
      const T s = inv_std[ci] * gamma.value()[ci];
      const T sh = beta.value()[ci];
      const std::size_t base = (bi * c + ci) * hw;
      for (std::size_t p = 0; p < hw; ++p) out[base + p] = (x.value()[base + p] - m) * s + sh;
    }
  return Var<T>::make(std::move(out), {x, mean, var, gamma, beta}, [b, c, hw, inv_std](Node<T>& n) {
    const auto& xv = n.parents[0]->value();
    const auto& mv = n.parents[1]->value();
    const auto& gv = n.parents[3]->value();
    auto* gx = grad_target(n, 0);
    auto* gg = grad_target(n, 3);
    auto* gbeta = grad_target(n, 4);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t ci = 0; ci < c; ++ci) {
        const std::size_t base = (bi * c + ci) * hw;
        T sg{0}, sb{0};
        for (std::size_t p = 0; p < hw; ++p) {
          const T dy = n.grad[base + p];
          if (gx) (*gx)[base + p] += dy * inv_std[ci] * gv[ci];
          sg += dy * (xv[base + p] - mv[ci]) * inv_std[ci];
          sb += dy;
        }
        if (gg) (*gg)[ci] += sg;
        if (gbeta) (*gbeta)[ci] += sb;
      }
  });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int pad) {
  const Shape& xs = x.shape();
  require(xs.size() == 4, "max_pool2d: input must be NCHW");
  const std::int64_t h = xs[2], w = xs[3];
  const std::int64_t ho = (h + 2 * pad - kernel) / stride + 1;
  const std::int64_t wo = (w + 2 * pad - kernel) / stride + 1;
  require(ho > 0 && wo > 0, "max_pool2d: kernel larger than padded input");
  const std::size_t planes = xs[0] * xs[1];
  Tensor<T> out(Shape{xs[0], xs[1], ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.value().ptr() + pl * h * w;
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = 0;
        for (int ky = 0; ky < kernel; ++ky) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const T v = src[iy * w + ix];
            if (v > best) {
              best = v;
              best_i = iy * w + ix;
            }
          }
        }
        const std::size_t o = (pl * ho + oy) * wo + ox;
        out[o] = best;
        argmax[o] = pl * h * w + best_i;
      }
  }
  return Var<T>::make(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& n) {
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t o = 0; o < argmax.size(); ++o) (*g)[argmax[o]] += n.grad[o];
    }
  });
}

template <typename T>
Var<T> avg_pool2d(const Var<T>& x, int window_h, int window_w) {
  const Shape& xs = x.shape();
  require(xs.size() == 4, "avg_pool2d: input must be NCHW");
  require(window_h >= 1 && window_w >= 1 && xs[2] % window_h == 0 && xs[3] % window_w == 0,
          "avg_pool2d: spatial size " + std::to_string(xs[2]) + "x" + std::to_string(xs[3]) +
              " is not a multiple of the window " + std::to_string(window_h) + "x" +
              std::to_string(window_w));
  const std::int64_t h = xs[2], w = xs[3], ho = h / window_h, wo = w / window_w;
  const std::size_t planes = xs[0] * xs[1];
  const T inv = T{1} / static_cast<T>(window_h * window_w);
  Tensor<T> out(Shape{xs[0], xs[1], ho, wo});
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.value().ptr() + pl * h * w;
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        T s{0};
        for (int ky = 0; ky < window_h; ++ky)
          for (int kx = 0; kx < window_w; ++kx) s += src[(oy * window_h + ky) * w + ox * window_w + kx];
        out[(pl * ho + oy) * wo + ox] = s * inv;
      }
  }
  return Var<T>::make(std::move(out), {x}, [=](Node<T>& n) {
    auto* g = grad_target(n, 0);
    if (!g) return;
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          const T d = n.grad[(pl * ho + oy) * wo + ox] * inv;
          for (int ky = 0; ky < window_h; ++ky)
            for (int kx = 0; kx < window_w; ++kx)
              (*g)[pl * h * w + (oy * window_h + ky) * w + ox * window_w + kx] += d;
        }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(!xs.empty() && ws.size() == 2 && ws[1] == xs.back(),
          "linear: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.shape() == Shape{ws[0]}, "linear: bias shape " + shape_str(bias.shape()));
  const std::size_t in = ws[1], outw = ws[0], rows = x.value().numel() / in;
  Shape os = xs;
  os.back() = ws[0];
  Tensor<T> out(os);
  if (has_bias) {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias.value().ptr(), outw, out.ptr() + r * outw);
  }
  gemm_nt<T>(rows, outw, in, x.value().ptr(), weight.value().ptr(), out.ptr());
  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var<T>::make(std::move(out), parents, [rows, in, outw, has_bias](Node<T>& n) {
    const auto& xv = n.parents[0]->value();
    const auto& wv = n.parents[1]->value();
    if (auto* g = grad_target(n, 0)) gemm_nn<T>(rows, in, outw, n.grad.ptr(), wv.ptr(), g->ptr());
    if (auto* g = grad_target(n, 1)) gemm_tn<T>(outw, in, rows, n.grad.ptr(), xv.ptr(), g->ptr());
    if (has_bias) {
      if (auto* g = grad_target(n, 2)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < outw; ++o) (*g)[o] += n.grad[r * outw + o];
      }
    }
  });
}

template <typename T>
Var<T> to_sequence(const Var<T>& x) {
  const Shape& xs = x.shape();
  require(xs.size() == 4, "to_sequence: input must be NCHW");
  const std::size_t b = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor<T> out(Shape{xs[0], xs[2] * xs[3], xs[1]});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t p = 0; p < hw; ++p) out[(bi * hw + p) * c + ci] = x.value()[(bi * c + ci) * hw + p];
  return Var<T>::make(std::move(out), {x}, [b, c, hw](Node<T>& n) {
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t p = 0; p < hw; ++p) (*g)[(bi * c + ci) * hw + p] += n.grad[(bi * hw + p) * c + ci];
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Shape& xs = x.shape();
  require(!xs.empty(), "layer_norm: scalar input");
  const std::size_t d = xs.back();
  require(gamma.shape() == Shape{xs.back()} && beta.shape() == Shape{xs.back()},
          "layer_norm: affine shape mismatch");
  const std::size_t rows = x.value().numel() / d;
  Tensor<T> out(xs);
  std::vector<T> xhat(x.value().numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.value().ptr() + r * d;
    T m{0};
    for (std::size_t i = 0; i < d; ++i) m += src[i];
    m /= static_cast<T>(d);
    T v{0};
    for (std::size_t i = 0; i < d; ++i) v += (src[i] - m) * (src[i] - m);
    v /= static_cast<T>(d);
    inv_std[r] = T{1} / std::sqrt(v + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (src[i] - m) * inv_std[r];
      out[r * d + i] = xhat[r * d + i] * gamma.value()[i] + beta.value()[i];
    }
  }
  return Var<T>::make(std::move(out), {x, gamma, beta},
                      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
                        const auto& gv = n.parents[1]->value();
                        auto* gx = grad_target(n, 0);
                        auto* gg = grad_target(n, 1);
                        auto* gb = grad_target(n, 2);
                        for (std::size_t r = 0; r < rows; ++r) {
                          T s1{0}, s2{0};
                          for (std::size_t i = 0; i < d; ++i) {
                            const T dy = n.grad[r * d + i];
                            const T dxh = dy * gv[i];
                            s1 += dxh;
                            s2 += dxh * xhat[r * d + i];
                            if (gg) (*gg)[i] += dy * xhat[r * d + i];
                            if (gb) (*gb)[i] += dy;
                          }
                          if (!gx) continue;
                          const T invd = T{1} / static_cast<T>(d);
                          for (std::size_t i = 0; i < d; ++i) {
                            const T dxh = n.grad[r * d + i] * gv[i];
                            (*gx)[r * d + i] += inv_std[r] * (dxh - invd * s1 - xhat[r * d + i] * invd * s2);
                          }
                        }
                      });
}

template <typename T>
Var<T> sdp_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int num_heads, Tensor<T>* probs) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  const Shape& vs = v.shape();
  require(qs.size() == 3 && ks.size() == 3 && vs.size() == 3, "sdp_attention: inputs must be (B,L,D)");
  require(ks == vs, "sdp_attention: key " + shape_str(ks) + " and value " + shape_str(vs) + " differ");
  require(qs[0] == ks[0] && qs[2] == ks[2], "sdp_attention: query " + shape_str(qs) +
                                                 " incompatible with key " + shape_str(ks));
  require(num_heads >= 1 && qs[2] % num_heads == 0,
          "sdp_attention: width " + std::to_string(qs[2]) + " not divisible by " +
              std::to_string(num_heads) + " heads");
  const std::size_t b = qs[0], lq = qs[1], lk = ks[1], d = qs[2], hn = num_heads, dk = d / hn;
  const T scale = T{1} / std::sqrt(static_cast<T>(dk));

  Tensor<T> p(Shape{qs[0], num_heads, qs[1], ks[1]});
  Tensor<T> out(qs);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t h = 0; h < hn; ++h)
      for (std::size_t i = 0; i < lq; ++i) {
        T* row = p.ptr() + ((bi * hn + h) * lq + i) * lk;
        const T* qi = qv.ptr() + (bi * lq + i) * d + h * dk;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < lk; ++j) {
          const T* kj = kv.ptr() + (bi * lk + j) * d + h * dk;
          T s{0};
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          row[j] = s * scale;
          mx = std::max(mx, row[j]);
        }
        T z{0};
        for (std::size_t j = 0; j < lk; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::size_t j = 0; j < lk; ++j) row[j] /= z;
        T* oi = out.ptr() + (bi * lq + i) * d + h * dk;
        for (std::size_t j = 0; j < lk; ++j) {
          const T* vj = vv.ptr() + (bi * lk + j) * d + h * dk;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += row[j] * vj[c];
        }
      }
  if (probs) *probs = p;

  return Var<T>::make(std::move(out), {q, k, v}, [=, p = std::move(p)](Node<T>& n) {
    const auto& qv = n.parents[0]->value();
    const auto& kv = n.parents[1]->value();
    const auto& vv = n.parents[2]->value();
    auto* gq = grad_target(n, 0);
    auto* gk = grad_target(n, 1);
    auto* gv = grad_target(n, 2);
    std::vector<T> dp(lk);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t h = 0; h < hn; ++h)
        for (std::size_t i = 0; i < lq; ++i) {
          const T* row = p.ptr() + ((bi * hn + h) * lq + i) * lk;
          const T* doi = n.grad.ptr() + (bi * lq + i) * d + h * dk;
          T dot{0};
          for (std::size_t j = 0; j < lk; ++j) {
            const T* vj = vv.ptr() + (bi * lk + j) * d + h * dk;
            T s{0};
            for (std::size_t c = 0; c < dk; ++c) s += doi[c] * vj[c];
            dp[j] = s;
            dot += s * row[j];
            if (gv) {
              T* gvj = gv->ptr() + (bi * lk + j) * d + h * dk;
              for (std::size_t c = 0; c < dk; ++c) gvj[c] += row[j] * doi[c];
            }
          }
          const T* qi = qv.ptr() + (bi * lq + i) * d + h * dk;
          for (std::size_t j = 0; j < lk; ++j) {
            const T ds = row[j] * (dp[j] - dot) * scale;
            if (ds == T{0}) continue;
            if (gq) {
              const T* kj = kv.ptr() + (bi * lk + j) * d + h * dk;
              T* gqi = gq->ptr() + (bi * lq + i) * d + h * dk;
              for (std::size_t c = 0; c < dk; ++c) gqi[c] += ds * kj[c];
            }
            if (gk) {
              T* gkj = gk->ptr() + (bi * lk + j) * d + h * dk;
              for (std::size_t c = 0; c < dk; ++c) gkj[c] += ds * qi[c];
            }
          }
        }
  });
}

template <typename T>
Var<T> mean_sequence(const Var<T>& x) {
  const Shape& xs = x.shape();
  require(xs.size() == 3 && xs[1] > 0, "mean_sequence: input must be (B,L,D) with L > 0");
  const std::size_t b = xs[0], l = xs[1], d = xs[2];
  const T inv = T{1} / static_cast<T>(l);
  Tensor<T> out(Shape{xs[0], xs[2]});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t li = 0; li < l; ++li)
      for (std::size_t c = 0; c < d; ++c) out[bi * d + c] += x.value()[(bi * l + li) * d + c];
  for (auto& v : out.data()) v *= inv;
  return Var<T>::make(std::move(out), {x}, [b, l, d, inv](Node<T>& n) {
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t li = 0; li < l; ++li)
          for (std::size_t c = 0; c < d; ++c) (*g)[(bi * l + li) * d + c] += n.grad[bi * d + c] * inv;
    }
  });
}

template <typename T>
Var<T> cosine_similarity(const Var<T>& x, const Tensor<T>& bank) {
  const Shape& xs = x.shape();
  require(xs.size() == 2 && bank.rank() == 2 && bank.dim(1) == xs[1],
          "cosine_similarity: input " + shape_str(xs) + " incompatible with bank " + shape_str(bank.shape()));
  const std::size_t b = xs[0], d = xs[1], kn = bank.dim(0);
  std::vector<T> xn(b), yn(kn);
  for (std::size_t bi = 0; bi < b; ++bi) {
    T s{0};
    for (std::size_t c = 0; c < d; ++c) s += x.value()[bi * d + c] * x.value()[bi * d + c];
    xn[bi] = std::sqrt(s);
    if (!(xn[bi] > T{0})) throw NumericError("cosine_similarity: zero-norm feature vector");
  }
  for (std::size_t kk = 0; kk < kn; ++kk) {
    T s{0};
    for (std::size_t c = 0; c < d; ++c) s += bank[kk * d + c] * bank[kk * d + c];
    yn[kk] = std::sqrt(s);
    if (!(yn[kk] > T{0})) throw NumericError("cosine_similarity: zero-norm bank row");
  }
  Tensor<T> out(Shape{xs[0], bank.dim(0)});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t kk = 0; kk < kn; ++kk) {
      T s{0};
      for (std::size_t c = 0; c < d; ++c) s += x.value()[bi * d + c] * bank[kk * d + c];
      out[bi * kn + kk] = s / (xn[bi] * yn[kk]);
    }
  return Var<T>::make(std::move(out), {x}, [=, bank = bank](Node<T>& n) {
    auto* g = grad_target(n, 0);
    if (!g) return;
    const auto& xv = n.parents[0]->value();
    const auto& cv = n.value();
    for (std::size_t bi = 0; bi < b; ++bi) {
      T radial{0};
      for (std::size_t kk = 0; kk < kn; ++kk) {
        const T dc = n.grad[bi * kn + kk];
        const T f = dc / (xn[bi] * yn[kk]);
        for (std::size_t c = 0; c < d; ++c) (*g)[bi * d + c] += f * bank[kk * d + c];
        radial += dc * cv[bi * kn + kk];
      }
      const T r = radial / (xn[bi] * xn[bi]);
      for (std::size_t c = 0; c < d; ++c) (*g)[bi * d + c] -= r * xv[bi * d + c];
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const Shape& xs = x.shape();
  require(!xs.empty() && xs.back() > 0, "softmax: empty last axis");
  const std::size_t d = xs.back(), rows = x.value().numel() / d;
  Tensor<T> out(xs);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.value().ptr() + r * d;
    T* dst = out.ptr() + r * d;
    const T mx = *std::max_element(src, src + d);
    T z{0};
    for (std::size_t i = 0; i < d; ++i) {
      dst[i] = std::exp(src[i] - mx);
      z += dst[i];
    }
    for (std::size_t i = 0; i < d; ++i) dst[i] /= z;
  }
  return Var<T>::make(std::move(out), {x}, [rows, d](Node<T>& n) {
    auto* g = grad_target(n, 0);
    if (!g) return;
    const auto& y = n.value();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t i = 0; i < d; ++i) dot += n.grad[r * d + i] * y[r * d + i];
      for (std::size_t i = 0; i < d; ++i) (*g)[r * d + i] += y[r * d + i] * (n.grad[r * d + i] - dot);
    }
  });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
  require(pred.value().numel() == target.value().numel() && pred.value().numel() >= 1,
          "mse_loss: length mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const std::size_t nn = pred.value().numel();
  T s{0};
  for (std::size_t i = 0; i < nn; ++i) {
    const T e = pred.value()[i] - target.value()[i];
    s += e * e;
  }
  Tensor<T> out(Shape{}, s / static_cast<T>(nn));
  return Var<T>::make(std::move(out), {pred, target}, [nn](Node<T>& n) {
    const auto& pv = n.parents[0]->value();
    const auto& tv = n.parents[1]->value();
    const T k = T{2} * n.grad[0] / static_cast<T>(nn);
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t i = 0; i < nn; ++i) (*g)[i] += k * (pv[i] - tv[i]);
    }
    if (auto* g = grad_target(n, 1)) {
      for (std::size_t i = 0; i < nn; ++i) (*g)[i] -= k * (pv[i] - tv[i]);
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s{0};
  for (auto v : x.value().data()) s += v;
  return Var<T>::make(Tensor<T>(Shape{}, s), {x}, [](Node<T>& n) {
    if (auto* g = grad_target(n, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[0];
    }
  });
}

#define BPCLIP_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
  template Var<T> add_broadcast(const Var<T>&, const Var<T>&);                                      \
  template Var<T> scale(const Var<T>&, T);                                                          \
  template Var<T> scale_by(const Var<T>&, const Var<T>&);                                           \
  template Var<T> abs(const Var<T>&);                                                               \
  template Var<T> sigmoid(const Var<T>&);                                                           \
  template Var<T> relu(const Var<T>&);                                                              \
  template Var<T> gelu(const Var<T>&);                                                              \
  template Var<T> mul_mask(const Var<T>&, const Var<T>&);                                           \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                          \
  template Var<T> reshape(const Var<T>&, Shape);                                                    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                    \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,            \
                             const Var<T>&, T);                                                     \
  template Var<T> max_pool2d(const Var<T>&, int, int, int);                                         \
  template Var<T> avg_pool2d(const Var<T>&, int, int);                                              \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> to_sequence(const Var<T>&);                                                       \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                       \
  template Var<T> sdp_attention(const Var<T>&, const Var<T>&, const Var<T>&, int, Tensor<T>*);      \
  template Var<T> mean_sequence(const Var<T>&);                                                     \
  template Var<T> cosine_similarity(const Var<T>&, const Tensor<T>&);                               \
  template Var<T> softmax(const Var<T>&);                                                           \
  template Var<T> mse_loss(const Var<T>&, const Var<T>&);                                           \
  template Var<T> sum(const Var<T>&);

BPCLIP_INSTANTIATE_OPS(float)
BPCLIP_INSTANTIATE_OPS(double)

}  // namespace bpclip
