#include "bpclip/config.hpp"

#include <fstream>

#include "toml.hpp"

namespace bpclip {
namespace {

nlohmann::json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = node.as_array()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) return f->get();
  if (const auto* b = node.as_boolean()) return b->get();
  throw ConfigError("unsupported TOML value type (dates and times are not configuration values)");
}

template <typename V>
V typed(const nlohmann::json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("configuration key '") + section + "." + key + "' has the wrong type");
  }
}

}  // namespace

nlohmann::json default_config() {
  nlohmann::json j;
  ModelConfig m;
  j["model"] = model_config_to_json(m);
  const TrainConfig t;
  j["train"] = {{"lr", nullptr},  // by mode: FR 1e-4, NR 3e-5
                {"weight_decay", t.weight_decay},
                {"t_max", t.t_max},
                {"eta_min", t.eta_min},
                {"schedule_unit", "epoch"},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"max_steps", t.max_steps},
                {"seed", t.seed},
                {"patch_size", t.patch_size},
                {"resize", t.resize},
                {"eval_crops", t.eval_crops}};
  j["data"] = {{"manifest", ""},     {"text_bank", ""},       {"split_ratios", nullptr}, {"repeats", 1},
               {"repeat_index", 0},  {"mos_polarity", nullptr}, {"mos_min", nullptr},    {"mos_max", nullptr},
               {"check_files", true}};
  return j;
}

nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open configuration '" + path.string() + "'");
  if (path.extension() == ".toml") {
    try {
      return toml_to_json(toml::parse(f, path.string()));
    } catch (const toml::parse_error& e) {
      throw ConfigError("invalid TOML in '" + path.string() + "': " + std::string(e.description()));
    }
  }
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& where) {
  if (!overlay.is_object()) throw ConfigError("configuration section '" + where + "' must be a table");
  for (const auto& [k, v] : overlay.items()) {
    const std::string key = where.empty() ? k : where + "." + k;
    if (!base.contains(k)) throw ConfigError("unknown configuration key '" + key + "'");
    auto& slot = base[k];
    if (slot.is_object()) {
      merge_config(slot, v, key);
    } else if (slot.is_null() || (slot.is_number() && v.is_number()) || slot.type() == v.type()) {
      slot = v;
    } else {
      throw ConfigError("configuration key '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                        std::string(v.type_name()));
    }
  }
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  // Build a nested overlay and reuse merge validation.
  nlohmann::json overlay = value;
  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const auto dot = path.find('.', start);
    parts.push_back(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = nlohmann::json{{*it, overlay}};
  merge_config(config, overlay);
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig rc;
  rc.resolved = j;
  rc.model = model_config_from_json(j.at("model"));
  const Mode mode = rc.model.mode();
  rc.train = TrainConfig::defaults_for(mode);
  if (!j["train"]["lr"].is_null()) rc.train.lr = typed<double>(j, "train", "lr");
  rc.train.weight_decay = typed<double>(j, "train", "weight_decay");
  rc.train.t_max = typed<double>(j, "train", "t_max");
  rc.train.eta_min = typed<double>(j, "train", "eta_min");
  const auto unit = typed<std::string>(j, "train", "schedule_unit");
  if (unit != "epoch" && unit != "step") throw ConfigError("train.schedule_unit must be 'epoch' or 'step'");
  rc.train.schedule_unit = unit == "epoch" ? ScheduleUnit::epoch : ScheduleUnit::step;
  rc.train.epochs = typed<int>(j, "train", "epochs");
  rc.train.batch_size = typed<int>(j, "train", "batch_size");
  rc.train.max_steps = typed<std::int64_t>(j, "train", "max_steps");
  rc.train.seed = typed<std::uint64_t>(j, "train", "seed");
  rc.train.patch_size = typed<std::int64_t>(j, "train", "patch_size");
  rc.train.resize = typed<std::int64_t>(j, "train", "resize");
  rc.train.eval_crops = typed<int>(j, "train", "eval_crops");
  rc.train.validate();

  rc.manifest = typed<std::string>(j, "data", "manifest");
  rc.text_bank = typed<std::string>(j, "data", "text_bank");
  if (!j["data"]["split_ratios"].is_null()) rc.split_ratios = typed<std::vector<double>>(j, "data", "split_ratios");
  rc.repeats = typed<int>(j, "data", "repeats");
  rc.repeat_index = typed<int>(j, "data", "repeat_index");
  if (rc.repeats < 1) throw ConfigError("data.repeats must be at least 1");
  rc.manifest_options.mode = mode;
  if (!j["data"]["mos_polarity"].is_null()) {
    rc.manifest_options.polarity = mos_polarity_from_string(typed<std::string>(j, "data", "mos_polarity"));
  }
  if (!j["data"]["mos_min"].is_null()) rc.manifest_options.mos_min = typed<double>(j, "data", "mos_min");
  if (!j["data"]["mos_max"].is_null()) rc.manifest_options.mos_max = typed<double>(j, "data", "mos_max");
  rc.manifest_options.check_files = typed<bool>(j, "data", "check_files");
  return rc;
}

RunConfig resolve_config(const std::filesystem::path* file, const std::vector<std::string>& overrides) {
  auto j = default_config();
  if (file) {
    auto overlay = read_config_file(*file);
    // A variant switch changes the default stage widths; apply it before merging the rest.
    if (overlay.contains("model") && overlay["model"].contains("backbone") &&
        overlay["model"]["backbone"].value("variant", "") == "resnet50_like" &&
        !overlay["model"]["backbone"].contains("channels")) {
      j["model"]["backbone"]["channels"] = kResNet50Channels;
    }
    merge_config(j, overlay);
    // Relative data paths in a config file are relative to that file.
    for (const char* key : {"manifest", "text_bank"}) {
      const std::string v = j["data"][key].get<std::string>();
      if (!v.empty() && overlay.contains("data") && overlay["data"].contains(key) &&
          std::filesystem::path(v).is_relative()) {
        j["data"][key] = (file->parent_path() / v).lexically_normal().string();
      }
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

}  // namespace bpclip
