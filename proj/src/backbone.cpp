#include "bpclip/backbone.hpp"

#include <cmath>

namespace bpclip {
namespace {

constexpr double kNormEps = 1e-5;

struct ResNetStage {
  const char* name;
  int blocks;
  std::int64_t mid;
  std::int64_t out;
  int stride;
};

constexpr std::array<ResNetStage, 4> kResNetStages{{
    {"layer1", 3, 64, 256, 1},
    {"layer2", 4, 128, 512, 2},
    {"layer3", 6, 256, 1024, 2},
    {"layer4", 3, 512, 2048, 2},
}};

void add_norm_layout(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::int64_t c) {
  for (const char* s : {"weight", "bias", "running_mean", "running_var"}) out.emplace_back(prefix + "." + s, Shape{c});
}

template <typename T>
Var<T> conv_norm(Context<T>& ctx, const Var<T>& x, const std::string& conv, const std::string& norm, int stride,
                 int pad) {
  auto y = conv2d(x, ctx.param(conv + ".weight"), Var<T>{}, stride, pad);
  return batch_norm(y, ctx.param(norm + ".running_mean"), ctx.param(norm + ".running_var"),
                    ctx.param(norm + ".weight"), ctx.param(norm + ".bias"), static_cast<T>(kNormEps));
}

template <typename T>
Var<T> bottleneck(Context<T>& ctx, const Var<T>& x, const std::string& p, int stride, bool downsample) {
  auto y = relu(conv_norm(ctx, x, p + ".conv1", p + ".bn1", 1, 0));
  y = relu(conv_norm(ctx, y, p + ".conv2", p + ".bn2", stride, 1));
  y = conv_norm(ctx, y, p + ".conv3", p + ".bn3", 1, 0);
  auto identity = downsample ? conv_norm(ctx, x, p + ".downsample.0", p + ".downsample.1", stride, 0) : x;
  return relu(add(y, identity));
}

template <typename T>
void check_layout(const ParameterSet<T>& params, const BackboneConfig& cfg) {
  for (const auto& [name, shape] : backbone_layout(cfg)) {
    if (!params.contains(name)) throw ConfigError("backbone parameter '" + name + "' missing for this configuration");
    if (params.get(name).shape() != shape) {
      throw ConfigError("backbone parameter '" + name + "' has shape " + shape_str(params.get(name).shape()) +
                        " but the configuration requires " + shape_str(shape));
    }
  }
}

}  // namespace

std::string to_string(BackboneVariant v) { return v == BackboneVariant::tiny ? "tiny" : "resnet50-like"; }

BackboneVariant backbone_variant_from_string(const std::string& s) {
  if (s == "tiny") return BackboneVariant::tiny;
  if (s == "resnet50-like" || s == "resnet50_like" || s == "resnet50") return BackboneVariant::resnet50_like;
  throw ConfigError("unknown backbone variant '" + s + "'");
}

void BackboneConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be positive multiples of 32");
  }
  for (auto c : stage_channels) {
    if (c <= 0) throw ConfigError("stage channels must be positive");
  }
  if (variant == BackboneVariant::resnet50_like && stage_channels != kResNet50Channels) {
    throw ConfigError("resnet50-like backbone requires stage channels (64, 256, 512, 1024, 2048)");
  }
  for (double s : stddev) {
    if (!(s > 0.0)) throw ConfigError("normalization std must be positive");
  }
}

std::vector<std::pair<std::string, Shape>> backbone_layout(const BackboneConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  if (cfg.variant == BackboneVariant::tiny) {
    std::int64_t in = 3;
    for (int i = 1; i <= kNumLevels; ++i) {
      const std::string p = "backbone.stage" + std::to_string(i);
      const std::int64_t c = cfg.channels(i);
      out.emplace_back(p + ".conv.weight", Shape{c, in, 3, 3});
      add_norm_layout(out, p + ".norm", c);
      in = c;
    }
    return out;
  }
  out.emplace_back("backbone.conv1.weight", Shape{64, 3, 7, 7});
  add_norm_layout(out, "backbone.bn1", 64);
  std::int64_t in = 64;
  for (const auto& st : kResNetStages) {
    for (int b = 0; b < st.blocks; ++b) {
      const std::string p = std::string("backbone.") + st.name + "." + std::to_string(b);
      out.emplace_back(p + ".conv1.weight", Shape{st.mid, in, 1, 1});
      add_norm_layout(out, p + ".bn1", st.mid);
      out.emplace_back(p + ".conv2.weight", Shape{st.mid, st.mid, 3, 3});
      add_norm_layout(out, p + ".bn2", st.mid);
      out.emplace_back(p + ".conv3.weight", Shape{st.out, st.mid, 1, 1});
      add_norm_layout(out, p + ".bn3", st.out);
      if (b == 0) {
        out.emplace_back(p + ".downsample.0.weight", Shape{st.out, in, 1, 1});
        add_norm_layout(out, p + ".downsample.1", st.out);
      }
      in = st.out;
    }
  }
  return out;
}

template <typename T>
void init_backbone_params(const BackboneConfig& cfg, std::mt19937_64& rng, ParameterSet<T>& params) {
  cfg.validate();
  for (const auto& [name, shape] : backbone_layout(cfg)) {
    if (name.ends_with(".running_var") || (is_norm_parameter(name) && name.ends_with(".weight"))) {
      params.add(name, Tensor<T>(shape, T{1}));
    } else if (is_norm_parameter(name)) {
      params.add(name, Tensor<T>(shape));
    } else {
      params.add(name, he_normal<T>(shape, shape[1] * shape[2] * shape[3], rng));
    }
  }
}

template <typename T>
FeaturePyramid<T> backbone_forward(Context<T>& ctx, const Var<T>& image, const BackboneConfig& cfg) {
  cfg.validate();
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 3) throw InputError("backbone input must be (B,3,H,W), got " + shape_str(s));
  if (s[2] % 32 != 0 || s[3] % 32 != 0 || s[2] == 0 || s[3] == 0) {
    throw InputError("backbone input spatial size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                     " is not a positive multiple of 32");
  }
  if (!image.value().all_finite()) throw InputError("backbone input contains non-finite values");
  check_layout(ctx.params(), cfg);

  Tensor<T> mean(Shape{3}), var(Shape{3}), one(Shape{3}, T{1}), zero(Shape{3});
  for (int c = 0; c < 3; ++c) {
    mean[c] = static_cast<T>(cfg.mean[c]);
    var[c] = static_cast<T>(cfg.stddev[c] * cfg.stddev[c]);
  }
  auto x = batch_norm(image, Var<T>::constant(mean), Var<T>::constant(var), Var<T>::constant(one),
                      Var<T>::constant(zero), T{0});

  FeaturePyramid<T> pyr;
  if (cfg.variant == BackboneVariant::tiny) {
    for (int i = 1; i <= kNumLevels; ++i) {
      const std::string p = "backbone.stage" + std::to_string(i);
      x = relu(conv_norm(ctx, x, p + ".conv", p + ".norm", 2, 1));
      pyr.levels[i - 1] = x;
    }
    return pyr;
  }

  x = relu(conv_norm(ctx, x, "backbone.conv1", "backbone.bn1", 2, 3));
  pyr.levels[0] = x;
  x = max_pool2d(x, 3, 2, 1);
  for (std::size_t si = 0; si < kResNetStages.size(); ++si) {
    const auto& st = kResNetStages[si];
    for (int b = 0; b < st.blocks; ++b) {
      const std::string p = std::string("backbone.") + st.name + "." + std::to_string(b);
      x = bottleneck(ctx, x, p, b == 0 ? st.stride : 1, b == 0);
    }
    pyr.levels[si + 1] = x;
  }
  return pyr;
}

template <typename T>
ParameterSet<T> set_norm_frozen(ParameterSet<T> params) {
  for (const auto& name : params.names()) {
    if (name.starts_with("backbone.") && is_norm_parameter(name)) params.set_trainable(name, false);
  }
  return params;
}

#define BPCLIP_INSTANTIATE_BACKBONE(T)                                                                 \
  template void init_backbone_params(const BackboneConfig&, std::mt19937_64&, ParameterSet<T>&);       \
  template FeaturePyramid<T> backbone_forward(Context<T>&, const Var<T>&, const BackboneConfig&);      \
  template ParameterSet<T> set_norm_frozen(ParameterSet<T>);

BPCLIP_INSTANTIATE_BACKBONE(float)
BPCLIP_INSTANTIATE_BACKBONE(double)

}  // namespace bpclip
