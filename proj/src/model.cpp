#include "bpclip/model.hpp"

#include <algorithm>

namespace bpclip {

void ModelConfig::validate() const {
  backbone.validate();
  attention.validate();
  head.validate();
  if (glp.dim != attention.dim || glp.dim != head.dim) {
    throw ConfigError("feature width D differs between GLP (" + std::to_string(glp.dim) + "), attention (" +
                      std::to_string(attention.dim) + ") and head (" + std::to_string(head.dim) + ")");
  }
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["backbone"] = {{"variant", to_string(cfg.backbone.variant)},
                   {"channels", cfg.backbone.stage_channels},
                   {"height", cfg.backbone.height},
                   {"width", cfg.backbone.width},
                   {"mean", cfg.backbone.mean},
                   {"std", cfg.backbone.stddev}};
  j["mode"] = to_string(cfg.glp.mode);
  j["dim"] = cfg.glp.dim;
  j["attention"] = {{"heads", cfg.attention.num_heads},
                    {"layer_norm", cfg.attention.layer_norm},
                    {"dual_branch", cfg.attention.dual_branch},
                    {"direction", to_string(cfg.attention.direction)}};
  j["head"] = {{"text_dim", cfg.head.text_dim},
               {"hidden", cfg.head.hidden},
               {"tau", cfg.head.tau},
               {"learn_tau", cfg.head.learn_tau},
               {"text_head", cfg.head.text_head}};
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    if (j.contains("backbone")) {
      const auto& b = j.at("backbone");
      if (b.contains("variant")) cfg.backbone.variant = backbone_variant_from_string(b.at("variant").get<std::string>());
      if (cfg.backbone.variant == BackboneVariant::resnet50_like) cfg.backbone.stage_channels = kResNet50Channels;
      if (b.contains("channels")) {
        const auto c = b.at("channels").get<std::vector<std::int64_t>>();
        if (c.size() != static_cast<std::size_t>(kNumLevels)) throw ConfigError("backbone needs 5 stage widths");
        std::copy(c.begin(), c.end(), cfg.backbone.stage_channels.begin());
      }
      cfg.backbone.height = b.value("height", cfg.backbone.height);
      cfg.backbone.width = b.value("width", cfg.backbone.width);
      if (b.contains("mean")) cfg.backbone.mean = b.at("mean").get<std::array<double, 3>>();
      if (b.contains("std")) cfg.backbone.stddev = b.at("std").get<std::array<double, 3>>();
    }
    if (j.contains("mode")) cfg.glp.mode = mode_from_string(j.at("mode").get<std::string>());
    cfg.glp.dim = j.value("dim", cfg.glp.dim);
    cfg.attention.dim = cfg.glp.dim;
    cfg.head.dim = cfg.glp.dim;
    if (j.contains("attention")) {
      const auto& a = j.at("attention");
      cfg.attention.num_heads = a.value("heads", cfg.attention.num_heads);
      cfg.attention.layer_norm = a.value("layer_norm", cfg.attention.layer_norm);
      cfg.attention.dual_branch = a.value("dual_branch", cfg.attention.dual_branch);
      if (a.contains("direction")) cfg.attention.direction = msca_direction_from_string(a.at("direction"));
    }
    if (j.contains("head")) {
      const auto& h = j.at("head");
      cfg.head.text_dim = h.value("text_dim", cfg.head.text_dim);
      cfg.head.hidden = h.value("hidden", cfg.head.hidden);
      cfg.head.tau = h.value("tau", cfg.head.tau);
      cfg.head.learn_tau = h.value("learn_tau", cfg.head.learn_tau);
      cfg.head.text_head = h.value("text_head", cfg.head.text_head);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model configuration: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

template <typename T>
ParameterSet<T> init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParameterSet<T> params;
  init_backbone_params(cfg.backbone, rng, params);
  init_glp_params(cfg.backbone, cfg.glp, rng, params);
  init_attention_params(cfg.attention, rng, params);
  init_head_params(cfg.head, rng, params);
  return set_norm_frozen(std::move(params));
}

template <typename T>
ModelOutput<T> model_forward(Context<T>& ctx, const Var<T>& distorted, const Var<T>* reference,
                             const ModelConfig& cfg, const Tensor<T>* bank) {
  if (cfg.mode() == Mode::fr && !reference) throw InputError("FR model requires a reference image");
  if (cfg.mode() == Mode::nr && reference) throw InputError("NR model does not take a reference image");
  ModelOutput<T> out;
  out.distorted = backbone_forward(ctx, distorted, cfg.backbone);
  if (reference) {
    if (reference->shape() != distorted.shape()) {
      throw InputError("reference " + shape_str(reference->shape()) + " and distorted " +
                       shape_str(distorted.shape()) + " differ in shape");
    }
    out.reference = backbone_forward(ctx, *reference, cfg.backbone);
  }
  out.pooled = glp_forward(ctx, out.distorted, reference ? &out.reference : nullptr, cfg.glp);
  out.fused = attention_forward(ctx, out.pooled, cfg.attention);
  out.head = head_forward(ctx, out.fused, bank, cfg.head);
  out.score = out.head.score;
  return out;
}

template <typename T>
std::size_t load_backbone_weights(const std::filesystem::path& path, ParameterSet<T>& params) {
  const auto archive = TensorArchive::load(path);
  std::size_t copied = 0;
  for (const auto& name : params.names()) {
    if (!name.starts_with("backbone.")) continue;
    std::string src = name;
    if (!archive.contains(src)) src = name.substr(std::string("backbone.").size());
    if (!archive.contains(src)) throw LoadError(LoadError::Kind::missing_tensor, "backbone weights lack '" + name + "'");
    auto t = archive.get<T>(src);
    if (t.shape() != params.get(name).shape()) {
      throw LoadError(LoadError::Kind::shape_mismatch, "'" + src + "' is " + shape_str(t.shape()) + ", expected " +
                                                           shape_str(params.get(name).shape()));
    }
    params.mutable_value(name) = std::move(t);
    ++copied;
  }
  return copied;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParameterSet<float>& params,
                     const nlohmann::json& extra) {
  auto ar = to_archive(params);
  ar.metadata()["model_config"] = model_config_to_json(cfg);
  ar.metadata()["extra"] = extra;
  ar.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto archive = TensorArchive::load(path);
  if (!archive.metadata().contains("model_config")) {
    throw LoadError(LoadError::Kind::validation, "'" + path.string() + "' is not a model checkpoint");
  }
  Checkpoint ck;
  ck.config = model_config_from_json(archive.metadata().at("model_config"));
  ck.extra = archive.metadata().value("extra", nlohmann::json::object());
  const auto expected = init_model_params<float>(ck.config, 0);
  const auto stored = parameters_from_archive<float>(archive);
  for (const auto& [name, e] : expected.entries()) {
    if (!stored.contains(name)) throw LoadError(LoadError::Kind::missing_tensor, "checkpoint lacks '" + name + "'");
    const auto& v = stored.get(name);
    if (v.shape() != e.value.shape()) {
      throw LoadError(LoadError::Kind::shape_mismatch, "'" + name + "' is " + shape_str(v.shape()) + ", expected " +
                                                           shape_str(e.value.shape()));
    }
    ck.params.add(name, v, stored.is_trainable(name) && e.trainable);
  }
  return ck;
}

#define BPCLIP_INSTANTIATE_MODEL(T)                                                                        \
  template ParameterSet<T> init_model_params(const ModelConfig&, std::uint64_t);                           \
  template ModelOutput<T> model_forward(Context<T>&, const Var<T>&, const Var<T>*, const ModelConfig&,     \
                                        const Tensor<T>*);                                                 \
  template std::size_t load_backbone_weights(const std::filesystem::path&, ParameterSet<T>&);

BPCLIP_INSTANTIATE_MODEL(float)
BPCLIP_INSTANTIATE_MODEL(double)

}  // namespace bpclip
