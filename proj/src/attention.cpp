#include "bpclip/attention.hpp"

namespace bpclip {
namespace {

constexpr double kLayerNormEps = 1e-5;

std::string msca_prefix(int block) { return "attn.msca" + std::to_string(block); }
std::string sa_prefix(int block) { return "attn.sa" + std::to_string(block); }
std::string info_mlp_prefix(int block) { return "attn.info" + std::to_string(block); }
std::string gate_mlp_prefix(int block) { return "attn.gate" + std::to_string(block); }

void check_block(int block) {
  if (block < 1 || block > kNumFusedLevels) {
    throw ConfigError("attention block index " + std::to_string(block) + " outside 1.." +
                      std::to_string(kNumFusedLevels));
  }
}

template <typename T>
void add_linear(ParameterSet<T>& params, const std::string& p, std::int64_t out, std::int64_t in, bool bias,
                std::mt19937_64& rng) {
  params.add(p + ".weight", xavier_uniform<T>(Shape{out, in}, in, out, rng));
  if (bias) params.add(p + ".bias", Tensor<T>(Shape{out}));
}

template <typename T>
void add_layer_norm(ParameterSet<T>& params, const std::string& p, std::int64_t d) {
  params.add(p + ".weight", Tensor<T>(Shape{d}, T{1}));
  params.add(p + ".bias", Tensor<T>(Shape{d}));
}

template <typename T>
Var<T> maybe_norm(Context<T>& ctx, const Var<T>& x, const std::string& p, const AttentionConfig& cfg) {
  if (!cfg.layer_norm) return x;
  return layer_norm(x, ctx.param(p + ".weight"), ctx.param(p + ".bias"), static_cast<T>(kLayerNormEps));
}

template <typename T>
void check_sequence(const Var<T>& x, const AttentionConfig& cfg, const char* what) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != cfg.dim) {
    throw InputError(std::string(what) + ": expected (B, L, " + std::to_string(cfg.dim) + "), got " + shape_str(s));
  }
}

}  // namespace

std::string to_string(MscaDirection d) { return d == MscaDirection::bottom_up ? "bottom_up" : "top_down"; }

MscaDirection msca_direction_from_string(const std::string& s) {
  if (s == "bottom_up" || s == "bottom-up") return MscaDirection::bottom_up;
  if (s == "top_down" || s == "top-down") return MscaDirection::top_down;
  throw ConfigError("unknown MSCA direction '" + s + "'");
}

void AttentionConfig::validate() const {
  if (dim <= 0) throw ConfigError("attention width must be positive");
  if (num_heads <= 0 || dim % num_heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " + std::to_string(num_heads) +
                      " heads");
  }
}

MscaWiring msca_wiring(int block, MscaDirection direction) {
  check_block(block);
  if (direction == MscaDirection::bottom_up) return {block, block + 1};
  return {block + 1, block};
}

template <typename T>
void init_attention_params(const AttentionConfig& cfg, std::mt19937_64& rng, ParameterSet<T>& params) {
  cfg.validate();
  const std::int64_t d = cfg.dim;
  for (int b = 1; b <= kNumFusedLevels; ++b) {
    const std::string m = msca_prefix(b);
    for (const char* proj : {".q", ".k", ".v"}) add_linear(params, m + proj, d, d, false, rng);
    if (cfg.layer_norm) {
      add_layer_norm(params, m + ".ln_q", d);
      add_layer_norm(params, m + ".ln_kv", d);
    }
    add_linear(params, info_mlp_prefix(b) + ".fc1", d, d, true, rng);
    add_linear(params, info_mlp_prefix(b) + ".fc2", d, d, true, rng);
    if (!cfg.dual_branch) continue;
    const std::string s = sa_prefix(b);
    for (const char* proj : {".q", ".k", ".v"}) add_linear(params, s + proj, d, d, false, rng);
    if (cfg.layer_norm) add_layer_norm(params, s + ".ln", d);
    add_linear(params, gate_mlp_prefix(b) + ".fc1", d, d, true, rng);
    add_linear(params, gate_mlp_prefix(b) + ".fc2", d, d, true, rng);
  }
}

template <typename T>
Var<T> mlp(Context<T>& ctx, const Var<T>& x, const std::string& prefix) {
  auto h = gelu(linear(x, ctx.param(prefix + ".fc1.weight"), ctx.param(prefix + ".fc1.bias")));
  return linear(h, ctx.param(prefix + ".fc2.weight"), ctx.param(prefix + ".fc2.bias"));
}

template <typename T>
Var<T> msca_block(Context<T>& ctx, const Var<T>& shallow, const Var<T>& deep, int block, const AttentionConfig& cfg,
                  Tensor<T>* probs) {
  check_block(block);
  if (!shallow.defined() || !deep.defined()) {
    throw ConfigError("cross-scale block " + std::to_string(block) + " needs both adjacent levels");
  }
  check_sequence(shallow, cfg, "msca_block");
  check_sequence(deep, cfg, "msca_block");
  const bool bottom_up = cfg.direction == MscaDirection::bottom_up;
  const Var<T>& query_src = bottom_up ? shallow : deep;
  const Var<T>& kv_src = bottom_up ? deep : shallow;
  const std::string p = msca_prefix(block);
  auto qn = maybe_norm(ctx, query_src, p + ".ln_q", cfg);
  auto kvn = maybe_norm(ctx, kv_src, p + ".ln_kv", cfg);
  auto q = linear(qn, ctx.param(p + ".q.weight"), Var<T>{});
  auto k = linear(kvn, ctx.param(p + ".k.weight"), Var<T>{});
  auto v = linear(kvn, ctx.param(p + ".v.weight"), Var<T>{});
  return add(sdp_attention(q, k, v, cfg.num_heads, probs), query_src);
}

template <typename T>
Var<T> sa_block(Context<T>& ctx, const Var<T>& g, int block, const AttentionConfig& cfg, Tensor<T>* probs) {
  check_block(block);
  check_sequence(g, cfg, "sa_block");
  const std::string p = sa_prefix(block);
  auto gn = maybe_norm(ctx, g, p + ".ln", cfg);
  auto q = linear(gn, ctx.param(p + ".q.weight"), Var<T>{});
  auto k = linear(gn, ctx.param(p + ".k.weight"), Var<T>{});
  auto v = linear(gn, ctx.param(p + ".v.weight"), Var<T>{});
  return add(sdp_attention(q, k, v, cfg.num_heads, probs), g);
}

template <typename T>
Var<T> fuse_branches(Context<T>& ctx, const Var<T>& info, const Var<T>& weight, int block, Var<T>* gate_out) {
  check_block(block);
  if (info.shape() != weight.shape()) {
    throw InputError("fuse_branches: branch shapes " + shape_str(info.shape()) + " and " +
                     shape_str(weight.shape()) + " differ");
  }
  auto gate = sigmoid(mlp(ctx, weight, gate_mlp_prefix(block)));
  if (gate_out) *gate_out = gate;
  return mul(mlp(ctx, info, info_mlp_prefix(block)), gate);
}

template <typename T>
FusedFeatures<T> attention_forward(Context<T>& ctx, const PooledFeatures<T>& pooled, const AttentionConfig& cfg) {
  cfg.validate();
  FusedFeatures<T> out;
  for (int b = 1; b <= kNumFusedLevels; ++b) {
    const std::size_t i = static_cast<std::size_t>(b - 1);
    auto g_info = msca_block(ctx, pooled.level(b), pooled.level(b + 1), b, cfg, &out.info_probs[i]);
    out.info[i] = g_info;
    if (!cfg.dual_branch) {
      out.levels[i] = mlp(ctx, g_info, info_mlp_prefix(b));
      continue;
    }
    auto g_weight = sa_block(ctx, pooled.level(b), b, cfg, &out.weight_probs[i]);
    out.weight[i] = g_weight;
    out.levels[i] = fuse_branches(ctx, g_info, g_weight, b, &out.gates[i]);
  }
  return out;
}

#define BPCLIP_INSTANTIATE_ATTENTION(T)                                                                        \
  template void init_attention_params(const AttentionConfig&, std::mt19937_64&, ParameterSet<T>&);             \
  template Var<T> mlp(Context<T>&, const Var<T>&, const std::string&);                                         \
  template Var<T> msca_block(Context<T>&, const Var<T>&, const Var<T>&, int, const AttentionConfig&, Tensor<T>*); \
  template Var<T> sa_block(Context<T>&, const Var<T>&, int, const AttentionConfig&, Tensor<T>*);               \
  template Var<T> fuse_branches(Context<T>&, const Var<T>&, const Var<T>&, int, Var<T>*);                      \
  template FusedFeatures<T> attention_forward(Context<T>&, const PooledFeatures<T>&, const AttentionConfig&);

BPCLIP_INSTANTIATE_ATTENTION(float)
BPCLIP_INSTANTIATE_ATTENTION(double)

}  // namespace bpclip
