#include "bpclip/clip_head.hpp"

#include <cmath>

namespace bpclip {
namespace {

std::string proj_prefix(int level) { return "head.proj" + std::to_string(level); }
std::string direct_prefix(int level) { return "head.direct" + std::to_string(level); }

template <typename T>
void add_linear(ParameterSet<T>& params, const std::string& p, std::int64_t out, std::int64_t in,
                std::mt19937_64& rng) {
  params.add(p + ".weight", xavier_uniform<T>(Shape{out, in}, in, out, rng));
  params.add(p + ".bias", Tensor<T>(Shape{out}));
}

}  // namespace

void HeadConfig::validate() const {
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("softmax temperature must be finite and non-negative");
  if (dim <= 0 || text_dim <= 0 || hidden <= 0) throw ConfigError("head widths must be positive");
}

template <typename T>
void init_head_params(const HeadConfig& cfg, std::mt19937_64& rng, ParameterSet<T>& params) {
  cfg.validate();
  for (int i = 1; i <= kNumFusedLevels; ++i) {
    if (cfg.text_head) {
      add_linear(params, proj_prefix(i) + ".fc1", cfg.dim, cfg.dim, rng);
      add_linear(params, proj_prefix(i) + ".fc2", cfg.text_dim, cfg.dim, rng);
    } else {
      add_linear(params, direct_prefix(i), kNumAdjectives, cfg.dim, rng);
    }
  }
  add_linear(params, "head.reg.fc1", cfg.hidden, kRegressionWidth, rng);
  add_linear(params, "head.reg.fc2", 1, cfg.hidden, rng);
  if (cfg.text_head && cfg.learn_tau) params.add(kTauName, Tensor<T>(Shape{1}, static_cast<T>(cfg.tau)));
}

template <typename T>
Var<T> project_to_clip(Context<T>& ctx, const Var<T>& fused, int level, const HeadConfig& cfg) {
  const Shape& s = fused.shape();
  if (s.size() != 3 || s[2] != cfg.dim) {
    throw InputError("project_to_clip: expected (B, L, " + std::to_string(cfg.dim) + "), got " + shape_str(s));
  }
  const std::string p = proj_prefix(level);
  auto h = gelu(linear(mean_sequence(fused), ctx.param(p + ".fc1.weight"), ctx.param(p + ".fc1.bias")));
  return linear(h, ctx.param(p + ".fc2.weight"), ctx.param(p + ".fc2.bias"));
}

template <typename T>
Var<T> adjective_similarity(const Var<T>& x, const Tensor<T>& bank, const Var<T>& tau, Tensor<T>* cosines_out) {
  if (tau.value().numel() != 1) throw ConfigError("temperature must be a single value");
  const T t = tau.value()[0];
  if (!(t >= T{0}) || !std::isfinite(static_cast<double>(t))) {
    throw NumericError("softmax temperature must be finite and non-negative");
  }
  auto c = cosine_similarity(x, bank);
  if (cosines_out) *cosines_out = c.value();
  return softmax(scale_by(c, tau));
}

template <typename T>
Var<T> adjective_similarity(const Var<T>& x, const Tensor<T>& bank, T tau, Tensor<T>* cosines_out) {
  return adjective_similarity(x, bank, Var<T>::constant(Tensor<T>(Shape{1}, tau)), cosines_out);
}

template <typename T>
Var<T> regress_score(Context<T>& ctx, const std::vector<Var<T>>& similarities) {
  if (similarities.size() != static_cast<std::size_t>(kNumFusedLevels)) {
    throw ConfigError("score regression needs " + std::to_string(kNumFusedLevels) + " similarity vectors, got " +
                      std::to_string(similarities.size()));
  }
  for (const auto& s : similarities) {
    if (s.shape().size() != 2 || s.shape()[1] != kNumAdjectives) {
      throw InputError("similarity vectors must be (B, " + std::to_string(kNumAdjectives) + "), got " +
                       shape_str(s.shape()));
    }
  }
  auto z = concat(similarities, 1);
  auto h = gelu(linear(z, ctx.param("head.reg.fc1.weight"), ctx.param("head.reg.fc1.bias")));
  auto out = linear(h, ctx.param("head.reg.fc2.weight"), ctx.param("head.reg.fc2.bias"));
  return reshape(out, Shape{out.dim(0)});
}

template <typename T>
HeadOutput<T> head_forward(Context<T>& ctx, const FusedFeatures<T>& fused, const Tensor<T>* bank,
                           const HeadConfig& cfg) {
  cfg.validate();
  HeadOutput<T> out;
  Var<T> tau;
  if (cfg.text_head) {
    if (!bank) throw ConfigError("text head requires a text bank");
    if (bank->rank() != 2 || bank->dim(0) != kNumAdjectives || bank->dim(1) != cfg.text_dim) {
      throw ConfigError("text bank " + shape_str(bank->shape()) + " does not match (" +
                        std::to_string(kNumAdjectives) + ", " + std::to_string(cfg.text_dim) + ")");
    }
    tau = cfg.learn_tau ? ctx.param(kTauName) : Var<T>::constant(Tensor<T>(Shape{1}, static_cast<T>(cfg.tau)));
  }
  std::vector<Var<T>> sims;
  for (int i = 1; i <= kNumFusedLevels; ++i) {
    const std::size_t k = static_cast<std::size_t>(i - 1);
    if (cfg.text_head) {
      out.embeddings[k] = project_to_clip(ctx, fused.levels[k], i, cfg);
      out.similarities[k] = adjective_similarity(out.embeddings[k], *bank, tau, &out.cosines[k]);
    } else {
      const std::string p = direct_prefix(i);
      out.similarities[k] =
          softmax(linear(mean_sequence(fused.levels[k]), ctx.param(p + ".weight"), ctx.param(p + ".bias")));
    }
    sims.push_back(out.similarities[k]);
  }
  out.score = regress_score(ctx, sims);
  return out;
}

#define BPCLIP_INSTANTIATE_HEAD(T)                                                                         \
  template void init_head_params(const HeadConfig&, std::mt19937_64&, ParameterSet<T>&);                   \
  template Var<T> project_to_clip(Context<T>&, const Var<T>&, int, const HeadConfig&);                     \
  template Var<T> adjective_similarity(const Var<T>&, const Tensor<T>&, const Var<T>&, Tensor<T>*);        \
  template Var<T> adjective_similarity(const Var<T>&, const Tensor<T>&, T, Tensor<T>*);                    \
  template Var<T> regress_score(Context<T>&, const std::vector<Var<T>>&);                                  \
  template HeadOutput<T> head_forward(Context<T>&, const FusedFeatures<T>&, const Tensor<T>*, const HeadConfig&);

BPCLIP_INSTANTIATE_HEAD(float)
BPCLIP_INSTANTIATE_HEAD(double)

}  // namespace bpclip
