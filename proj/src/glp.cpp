#include "bpclip/glp.hpp"

#include <algorithm>

namespace bpclip {

std::string to_string(Mode m) { return m == Mode::fr ? "FR" : "NR"; }

Mode mode_from_string(const std::string& s) {
  if (s == "FR" || s == "fr") return Mode::fr;
  if (s == "NR" || s == "nr") return Mode::nr;
  throw ConfigError("unknown mode '" + s + "' (expected FR or NR)");
}

std::string glp_prefix(int level) { return "glp.level" + std::to_string(level); }

std::int64_t glp_concat_channels(const BackboneConfig& bb, const GlpConfig& cfg, int level) {
  return cfg.mode == Mode::fr ? 3 * bb.channels(level) : bb.channels(level);
}

template <typename T>
void init_glp_params(const BackboneConfig& bb, const GlpConfig& cfg, std::mt19937_64& rng, ParameterSet<T>& params) {
  if (cfg.dim <= 0) throw ConfigError("GLP width D must be positive");
  for (int i = 1; i <= kNumLevels; ++i) {
    const std::string p = glp_prefix(i);
    const std::int64_t c = bb.channels(i);
    const std::int64_t mid = std::max<std::int64_t>(1, c / 4);
    params.add(p + ".mask.conv1.weight", he_normal<T>(Shape{mid, c, 3, 3}, c * 9, rng));
    params.add(p + ".mask.conv1.bias", Tensor<T>(Shape{mid}));
    params.add(p + ".mask.conv2.weight", xavier_uniform<T>(Shape{1, mid, 1, 1}, mid, 1, rng));
    params.add(p + ".mask.conv2.bias", Tensor<T>(Shape{1}));
    if (cfg.mode == Mode::nr) params.add(p + ".value.weight", xavier_uniform<T>(Shape{c, c, 1, 1}, c, c, rng));
    const std::int64_t cc = glp_concat_channels(bb, cfg, i);
    params.add(p + ".proj.weight", xavier_uniform<T>(Shape{cfg.dim, cc}, cc, cfg.dim, rng));
    params.add(p + ".proj.bias", Tensor<T>(Shape{cfg.dim}));
  }
  const std::int64_t seq = bb.level_height(kNumLevels) * bb.level_width(kNumLevels);
  params.add(kPositionalEncodingName, normal<T>(Shape{seq, cfg.dim}, 0.02, rng));
}

template <typename T>
Var<T> gate_mask(Context<T>& ctx, const Var<T>& x, int level) {
  const std::string p = glp_prefix(level) + ".mask";
  auto h = relu(conv2d(x, ctx.param(p + ".conv1.weight"), ctx.param(p + ".conv1.bias"), 1, 1));
  return sigmoid(conv2d(h, ctx.param(p + ".conv2.weight"), ctx.param(p + ".conv2.bias"), 1, 0));
}

template <typename T>
Var<T> gated_fuse_fr(Context<T>& ctx, const Var<T>& distorted, const Var<T>& reference, int level, Var<T>* mask_out) {
  if (distorted.shape() != reference.shape()) {
    throw InputError("FR gating: distorted " + shape_str(distorted.shape()) + " and reference " +
                     shape_str(reference.shape()) + " differ");
  }
  if (distorted.shape().size() != 4) throw InputError("FR gating expects NCHW features");
  auto diff = abs(sub(distorted, reference));
  auto mask = gate_mask(ctx, diff, level);
  if (mask_out) *mask_out = mask;
  return mul_mask(mask, concat<T>({distorted, reference, diff}, 1));
}

template <typename T>
Var<T> gated_fuse_nr(Context<T>& ctx, const Var<T>& features, int level, Var<T>* mask_out) {
  if (features.shape().size() != 4) throw InputError("NR gating expects NCHW features");
  const std::string name = glp_prefix(level) + ".value.weight";
  if (!ctx.has(name)) throw ConfigError("NR gating parameters are absent (model configured for FR?)");
  auto mask = gate_mask(ctx, features, level);
  if (mask_out) *mask_out = mask;
  return mul_mask(mask, conv2d(features, ctx.param(name), Var<T>{}, 1, 0));
}

template <typename T>
Var<T> pool_project(Context<T>& ctx, const Var<T>& masked, int level, std::int64_t grid_h, std::int64_t grid_w) {
  const Shape& s = masked.shape();
  if (s.size() != 4) throw InputError("pool_project expects NCHW input");
  if (grid_h <= 0 || grid_w <= 0 || s[2] % grid_h != 0 || s[3] % grid_w != 0) {
    throw InputError("pool_project: level " + std::to_string(level) + " size " + std::to_string(s[2]) + "x" +
                     std::to_string(s[3]) + " is not a multiple of the " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " grid");
  }
  auto pooled = avg_pool2d(masked, static_cast<int>(s[2] / grid_h), static_cast<int>(s[3] / grid_w));
  const std::string p = glp_prefix(level) + ".proj";
  return linear(to_sequence(pooled), ctx.param(p + ".weight"), ctx.param(p + ".bias"));
}

template <typename T>
Var<T> add_positional(const Var<T>& g, const Var<T>& pos) {
  const Shape& gs = g.shape();
  if (gs.size() != 3 || pos.shape() != Shape{gs[1], gs[2]}) {
    throw ConfigError("positional encoding " + shape_str(pos.shape()) + " does not match features " + shape_str(gs));
  }
  return add_broadcast(g, pos);
}

template <typename T>
PooledFeatures<T> glp_forward(Context<T>& ctx, const FeaturePyramid<T>& distorted, const FeaturePyramid<T>* reference,
                              const GlpConfig& cfg) {
  if (cfg.mode == Mode::fr && !reference) throw ConfigError("FR model requires a reference image");
  if (cfg.mode == Mode::nr && reference) throw ConfigError("NR model does not accept a reference image");
  const std::int64_t gh = distorted.level(kNumLevels).dim(2);
  const std::int64_t gw = distorted.level(kNumLevels).dim(3);
  auto pos = ctx.param(kPositionalEncodingName);
  PooledFeatures<T> out;
  for (int i = 1; i <= kNumLevels; ++i) {
    Var<T> mask;
    auto gated = cfg.mode == Mode::fr ? gated_fuse_fr(ctx, distorted.level(i), reference->level(i), i, &mask)
                                      : gated_fuse_nr(ctx, distorted.level(i), i, &mask);
    out.masks[i - 1] = mask;
    out.levels[i - 1] = add_positional(pool_project(ctx, gated, i, gh, gw), pos);
  }
  return out;
}

#define BPCLIP_INSTANTIATE_GLP(T)                                                                             \
  template void init_glp_params(const BackboneConfig&, const GlpConfig&, std::mt19937_64&, ParameterSet<T>&); \
  template Var<T> gate_mask(Context<T>&, const Var<T>&, int);                                                 \
  template Var<T> gated_fuse_fr(Context<T>&, const Var<T>&, const Var<T>&, int, Var<T>*);                     \
  template Var<T> gated_fuse_nr(Context<T>&, const Var<T>&, int, Var<T>*);                                    \
  template Var<T> pool_project(Context<T>&, const Var<T>&, int, std::int64_t, std::int64_t);                  \
  template Var<T> add_positional(const Var<T>&, const Var<T>&);                                               \
  template PooledFeatures<T> glp_forward(Context<T>&, const FeaturePyramid<T>&, const FeaturePyramid<T>*,     \
                                         const GlpConfig&);

BPCLIP_INSTANTIATE_GLP(float)
BPCLIP_INSTANTIATE_GLP(double)

}  // namespace bpclip
