#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bpclip/archive.hpp"
#include "bpclip/config.hpp"
#include "bpclip/data.hpp"
#include "bpclip/heatmap.hpp"
#include "bpclip/image.hpp"
#include "bpclip/model.hpp"
#include "bpclip/synthetic.hpp"
#include "bpclip/text_bank.hpp"
#include "bpclip/train.hpp"
#include "bpclip/verify.hpp"

namespace fs = std::filesystem;
using namespace bpclip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --a.b=value flags left over after CLI11 parsing become config overrides;
// anything else is an unknown flag.
std::vector<std::string> collect_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (const auto& e : extras) {
    const auto eq = e.find('=');
    if (!e.starts_with("--") || eq == std::string::npos || e.substr(0, eq).find('.') == std::string::npos) {
      throw UsageError("unrecognized argument '" + e + "'");
    }
    out.push_back(e.substr(2));
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw LoadError(LoadError::Kind::io, "cannot write '" + path.string() + "'");
  f << text;
}

// Resolved run configuration for commands that start from a checkpoint:
// config.json next to the checkpoint (written by train), then --config, then overrides.
RunConfig checkpoint_run_config(const fs::path& checkpoint, const std::string& config_file,
                                const std::vector<std::string>& overrides) {
  auto j = default_config();
  const fs::path sibling = checkpoint.parent_path() / "config.json";
  if (fs::exists(sibling)) merge_config(j, read_config_file(sibling));
  if (!config_file.empty()) merge_config(j, read_config_file(config_file));
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

std::optional<TextBank> load_bank_for(const ModelConfig& model, const std::string& path, bool required) {
  if (path.empty()) {
    if (required && model.head.text_head) throw ConfigError("this model needs a text bank (--text-bank)");
    return std::nullopt;
  }
  auto bank = load_text_bank(path);
  for (const auto& w : bank.warnings) std::cerr << "warning: " << w << "\n";
  if (model.head.text_head && bank.text_dim() != model.head.text_dim) {
    throw ConfigError("text bank width " + std::to_string(bank.text_dim()) + " does not match the model's " +
                      std::to_string(model.head.text_dim));
  }
  return bank;
}

// Decoded, resized and center-cropped input pair, batch of one.
struct Prepared {
  Tensor<float> distorted;
  Tensor<float> reference;
};

Prepared prepare_pair(const std::string& image, const std::string& reference, const RunConfig& rc) {
  const bool fr = rc.model.mode() == Mode::fr;
  if (fr && reference.empty()) throw UsageError("full-reference checkpoint: --reference is required");
  if (!fr && !reference.empty()) throw UsageError("no-reference checkpoint: --reference is not accepted");
  std::vector<std::string> warnings;
  auto load = [&](const std::string& p) {
    auto img = load_image(p, &warnings);
    return rc.train.resize > 0 ? resize_shorter_side(img, rc.train.resize) : img;
  };
  const Image dist = load(image);
  Image ref;
  if (fr) {
    ref = load(reference);
    if (ref.shape() != dist.shape()) {
      throw InputError("image " + shape_str(dist.shape()) + " and reference " + shape_str(ref.shape()) + " differ in size");
    }
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::mt19937_64 rng(rc.train.seed);
  const auto patch = augment_patch(dist, fr ? &ref : nullptr, rc.train.patch_size, rng, false, image);
  Prepared p;
  p.distorted = stack_images({&patch.distorted});
  if (fr) p.reference = stack_images({&patch.reference});
  return p;
}

ModelOutput<float> run_model(const Checkpoint& ck, const Prepared& in, const Tensor<float>* bank) {
  Context<float> ctx(ck.params, false);
  auto d = Var<float>::constant(in.distorted);
  if (ck.config.mode() == Mode::fr) {
    auto r = Var<float>::constant(in.reference);
    return model_forward(ctx, d, &r, ck.config, bank);
  }
  return model_forward(ctx, d, static_cast<const Var<float>*>(nullptr), ck.config, bank);
}

SplitSpec split_spec(const RunConfig& rc, int repeat) {
  auto spec = rc.model.mode() == Mode::fr ? SplitSpec::fr_default(rc.train.seed, repeat)
                                          : SplitSpec::nr_default(rc.train.seed, repeat);
  if (!rc.split_ratios.empty()) spec.ratios = rc.split_ratios;
  return spec;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, out_dir, manifest, text_bank;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> extras;
};

nlohmann::json train_one(const RunConfig& rc, const SampleManifest& manifest, const Tensor<float>* bank,
                         int repeat, const fs::path& dir) {
  fs::create_directories(dir);
  const auto split = split_dataset(manifest, split_spec(rc, repeat));
  std::vector<std::string> warnings;
  const auto train_set = load_samples(manifest, split.train, rc.train.resize, &warnings);
  const auto val_set = load_samples(manifest, split.val, rc.train.resize, &warnings);
  const auto test_set = load_samples(manifest, split.test, rc.train.resize, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  auto params = init_model_params<float>(rc.model, rc.train.seed);
  std::cerr << "repeat " << repeat << ": " << train_set.size() << " train / " << val_set.size() << " val / "
            << test_set.size() << " test, " << params.parameter_count() << " parameters\n";
  const auto result = train(rc.train, rc.model, params, bank, train_set, val_set, dir);

  nlohmann::json report = {{"repeat", repeat},
                           {"best_epoch", result.best_epoch},
                           {"final_loss", result.epochs.empty() ? 0.0 : result.epochs.back().loss},
                           {"train_size", train_set.size()},
                           {"val_size", val_set.size()},
                           {"test_size", test_set.size()}};
  const auto scores = predict(rc.model, result.best_params, bank, test_set, rc.train.patch_size, rc.train.batch_size,
                              rc.train.eval_crops, rc.train.seed);
  try {
    report["test"] = to_json(evaluate_scores(scores, test_set));
  } catch (const MetricUndefinedError& e) {
    report["test"] = nullptr;
    report["test_note"] = e.what();
  }
  write_text(dir / "report.json", report.dump(2) + "\n");
  return report;
}

int cmd_train(const TrainArgs& a) {
  auto overrides = collect_overrides(a.extras);
  if (!a.manifest.empty()) overrides.push_back("data.manifest=" + nlohmann::json(a.manifest).dump());
  if (!a.text_bank.empty()) overrides.push_back("data.text_bank=" + nlohmann::json(a.text_bank).dump());
  if (a.seed) overrides.push_back("train.seed=" + std::to_string(*a.seed));
  const fs::path cfg_path(a.config);
  const auto rc = resolve_config(a.config.empty() ? nullptr : &cfg_path, overrides);
  if (rc.manifest.empty()) throw ConfigError("no manifest given (data.manifest or --manifest)");

  const auto bank = load_bank_for(rc.model, rc.text_bank, true);
  Tensor<float> bank_f;
  if (bank && rc.model.head.text_head) bank_f = bank->embeddings.cast<float>();
  const Tensor<float>* bank_ptr = rc.model.head.text_head ? &bank_f : nullptr;

  const auto manifest = normalize_mos(load_manifest(rc.manifest, rc.manifest_options));
  const fs::path out(a.out_dir);
  fs::create_directories(out);
  write_text(out / "config.json", rc.resolved.dump(2) + "\n");

  if (rc.repeats == 1) {
    const auto report = train_one(rc, manifest, bank_ptr, rc.repeat_index, out);
    std::cout << report.dump(2) << "\n";
    return kExitOk;
  }
  std::vector<MetricsReport> runs;
  for (int r = 0; r < rc.repeats; ++r) {
    const fs::path dir = out / ("repeat_" + std::to_string(r));
    write_text(out / "config.json", rc.resolved.dump(2) + "\n");
    const auto report = train_one(rc, manifest, bank_ptr, r, dir);
    fs::copy_file(out / "config.json", dir / "config.json", fs::copy_options::overwrite_existing);
    if (!report["test"].is_null()) {
      runs.push_back({report["test"]["srcc"], report["test"]["plcc"], report["test"]["count"]});
    }
  }
  nlohmann::json summary = nlohmann::json::object();
  if (!runs.empty()) summary = to_json(summarize(runs));
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, config, manifest, text_bank, split = "all", predictions;
  std::optional<std::uint64_t> seed;
  bool json = false;
  std::vector<std::string> extras;
};

int cmd_eval(const EvalArgs& a) {
  auto overrides = collect_overrides(a.extras);
  if (a.seed) overrides.push_back("train.seed=" + std::to_string(*a.seed));
  const auto ck = load_checkpoint(a.checkpoint);
  auto rc = checkpoint_run_config(a.checkpoint, a.config, overrides);
  rc.model = ck.config;
  rc.manifest_options.mode = ck.config.mode();
  const std::string manifest_path = a.manifest.empty() ? rc.manifest : a.manifest;
  if (manifest_path.empty()) throw ConfigError("no manifest given (--manifest)");
  const auto bank = load_bank_for(ck.config, a.text_bank.empty() ? rc.text_bank : a.text_bank, true);
  Tensor<float> bank_f;
  if (bank && ck.config.head.text_head) bank_f = bank->embeddings.cast<float>();

  const auto manifest = normalize_mos(load_manifest(manifest_path, rc.manifest_options));
  std::vector<std::size_t> idx;
  if (a.split == "all") {
    idx.resize(manifest.entries.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  } else {
    const auto split = split_dataset(manifest, split_spec(rc, rc.repeat_index));
    idx = a.split == "train" ? split.train : a.split == "val" ? split.val : split.test;
  }
  const auto samples = load_samples(manifest, idx, rc.train.resize);
  const auto scores = predict(ck.config, ck.params, ck.config.head.text_head ? &bank_f : nullptr, samples,
                              rc.train.patch_size, rc.train.batch_size, rc.train.eval_crops, rc.train.seed);
  if (!a.predictions.empty()) {
    std::ostringstream s;
    s << "id,mos,score\n" << std::setprecision(9);
    for (std::size_t i = 0; i < samples.size(); ++i) s << samples[i].id << "," << samples[i].mos << "," << scores[i] << "\n";
    write_text(a.predictions, s.str());
  }
  const auto report = evaluate_scores(scores, samples);
  if (a.json) {
    std::cout << to_json(report).dump(2) << "\n";
  } else {
    std::cout << std::fixed << std::setprecision(4) << "SRCC " << report.srcc << "  PLCC " << report.plcc << "  N "
              << report.count << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
  std::string image, reference, checkpoint, text_bank, config;
  std::optional<std::uint64_t> seed;
  int top = 3;
  bool json = false;
  std::vector<std::string> extras;
};

int cmd_score(const ScoreArgs& a) {
  auto overrides = collect_overrides(a.extras);
  if (a.seed) overrides.push_back("train.seed=" + std::to_string(*a.seed));
  const auto ck = load_checkpoint(a.checkpoint);
  auto rc = checkpoint_run_config(a.checkpoint, a.config, overrides);
  rc.model = ck.config;
  const auto bank = load_bank_for(ck.config, a.text_bank.empty() ? rc.text_bank : a.text_bank, true);
  Tensor<float> bank_f;
  if (bank && ck.config.head.text_head) bank_f = bank->embeddings.cast<float>();

  const auto in = prepare_pair(a.image, a.reference, rc);
  const auto out = run_model(ck, in, ck.config.head.text_head ? &bank_f : nullptr);
  const double score = out.score.value()[0];
  if (!std::isfinite(score)) throw NumericError("non-finite score");

  // Per level, then averaged over levels.
  std::vector<double> flat;
  std::vector<double> mean(kNumAdjectives, 0.0);
  for (const auto& s : out.head.similarities) {
    for (int k = 0; k < kNumAdjectives; ++k) {
      const double v = s.value().at(0, k);
      flat.push_back(v);
      mean[static_cast<std::size_t>(k)] += v / kNumFusedLevels;
    }
  }
  std::vector<std::string> names(kNumAdjectives);
  std::vector<QualityDimension> dims;
  if (bank) {
    names = bank->adjectives;
    dims = bank->dimensions;
  } else {
    for (int k = 0; k < kNumAdjectives; ++k) names[static_cast<std::size_t>(k)] = "adjective_" + std::to_string(k);
  }

  nlohmann::json dj = nlohmann::json::array();
  for (const auto& dim : dims) {
    std::vector<std::pair<double, std::string>> members;
    for (const auto& adj : dim.adjectives) {
      const auto it = std::find(names.begin(), names.end(), adj);
      members.emplace_back(mean[static_cast<std::size_t>(it - names.begin())], adj);
    }
    std::sort(members.begin(), members.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    double mass = 0.0;
    for (const auto& m : members) mass += m.first;
    nlohmann::json top = nlohmann::json::array();
    for (std::size_t i = 0; i < members.size() && static_cast<int>(i) < a.top; ++i) {
      top.push_back({{"adjective", members[i].second}, {"similarity", members[i].first}});
    }
    dj.push_back({{"name", dim.name}, {"mass", mass}, {"top", top}});
  }

  if (a.json) {
    nlohmann::json per_level = nlohmann::json::array();
    for (const auto& s : out.head.similarities) {
      per_level.push_back(std::vector<double>(s.value().data().begin(), s.value().data().end()));
    }
    nlohmann::json j = {{"score", score},
                        {"mode", to_string(ck.config.mode())},
                        {"levels", kNumFusedLevels},
                        {"adjectives", names},
                        {"similarities", flat},
                        {"level_similarities", per_level},
                        {"dimensions", dj}};
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }
  std::cout << std::fixed << std::setprecision(4) << "score " << score << "\n";
  for (const auto& d : dj) {
    std::cout << "  " << std::left << std::setw(16) << d["name"].get<std::string>() << " " << d["mass"].get<double>();
    for (const auto& t : d["top"]) std::cout << "  " << t["adjective"].get<std::string>() << " " << t["similarity"].get<double>();
    std::cout << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- export-attn

struct ExportArgs {
  std::string image, reference, checkpoint, text_bank, config, out_dir, branch;
  std::optional<std::uint64_t> seed;
  int level = 0;
  bool raw = false;
  std::vector<std::string> extras;
};

int cmd_export(const ExportArgs& a) {
  if (!a.branch.empty() && a.branch != "info" && a.branch != "weight") {
    throw UsageError("--branch must be 'info' or 'weight'");
  }
  auto overrides = collect_overrides(a.extras);
  if (a.seed) overrides.push_back("train.seed=" + std::to_string(*a.seed));
  const auto ck = load_checkpoint(a.checkpoint);
  if (!ck.config.attention.dual_branch) throw ConfigError("attention maps need the dual-branch model");
  auto rc = checkpoint_run_config(a.checkpoint, a.config, overrides);
  rc.model = ck.config;
  const auto bank = load_bank_for(ck.config, a.text_bank.empty() ? rc.text_bank : a.text_bank, true);
  Tensor<float> bank_f;
  if (bank && ck.config.head.text_head) bank_f = bank->embeddings.cast<float>();

  const auto in = prepare_pair(a.image, a.reference, rc);
  const auto out = run_model(ck, in, ck.config.head.text_head ? &bank_f : nullptr);
  const std::int64_t h = in.distorted.dim(2), w = in.distorted.dim(3);
  const std::int64_t gh = h >> kNumLevels, gw = w >> kNumLevels;
  auto maps = attention_maps(out.fused, gh, gw);
  std::erase_if(maps, [&](const AttentionMap& m) {
    return (a.level != 0 && m.level != a.level) || (!a.branch.empty() && m.branch != a.branch);
  });
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  for (const auto& p : write_attention_maps(maps, dir, h, w)) std::cout << p.string() << "\n";
  if (a.raw) {
    TensorArchive ar;
    for (const auto& m : maps) ar.put("level" + std::to_string(m.level) + "." + m.branch, m.values);
    ar.metadata()["score"] = out.score.value()[0];
    ar.save(dir / "attention_maps.bpta");
    std::cout << (dir / "attention_maps.bpta").string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- verify / synth

struct VerifyArgs {
  std::string text_bank;
  bool quick = false, json = false;
};

int cmd_verify(const VerifyArgs& a) {
  verify::Options opt;
  opt.text_bank = a.text_bank;
  opt.include_slow = !a.quick;
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : verify::run_all(opt)) {
    ok = ok && r.passed;
    if (a.json) {
      j.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}});
    } else {
      std::cout << verify::format_line(r) << std::endl;
    }
  }
  if (a.json) std::cout << j.dump(2) << "\n";
  return ok ? kExitOk : kExitRuntime;
}

struct SynthArgs {
  std::string out_dir, mode = "fr";
  int references = 4, per_reference = 4;
  std::int64_t size = 64;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  spec.num_references = a.references;
  spec.per_reference = a.per_reference;
  spec.size = a.size;
  spec.seed = a.seed;
  spec.mode = mode_from_string(a.mode);
  std::cout << write_synthetic(spec, a.out_dir).string() << "\n";
  return kExitOk;
}

fs::path default_text_bank() {
  if (const char* env = std::getenv("BPCLIP_TEXT_BANK")) return env;
#ifdef BPCLIP_DEFAULT_TEXT_BANK
  return BPCLIP_DEFAULT_TEXT_BANK;
#else
  return "data/text_bank/default.bpta";
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BPCLIP image quality assessment"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "bpclip 0.1.0");

  auto add_seed = [](CLI::App* sub, std::optional<std::uint64_t>& seed) {
    sub->add_option("--seed", seed, "Seed for every random choice (init, split, crops)");
  };
  auto allow_overrides = [](CLI::App* sub) {
    sub->allow_extras();
    sub->footer("Any configuration key can be overridden with --section.key=value, e.g. --train.epochs=5.");
  };

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoints, logs and reports to --out-dir");
  train_cmd->add_option("--config", ta.config, "TOML or JSON configuration")->check(CLI::ExistingFile);
  train_cmd->add_option("--out-dir", ta.out_dir, "Output directory")->required();
  train_cmd->add_option("--manifest", ta.manifest, "Dataset manifest (overrides data.manifest)");
  train_cmd->add_option("--text-bank", ta.text_bank, "Adjective embedding bank (overrides data.text_bank)");
  add_seed(train_cmd, ta.seed);
  allow_overrides(train_cmd);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Compute SRCC/PLCC of a checkpoint on a manifest");
  eval_cmd->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", ea.manifest, "Defaults to data.manifest of the run configuration");
  eval_cmd->add_option("--text-bank", ea.text_bank);
  eval_cmd->add_option("--config", ea.config)->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", ea.split, "Which part of the seeded split to score")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  eval_cmd->add_option("--predictions", ea.predictions, "Write per-sample scores as CSV");
  eval_cmd->add_flag("--json", ea.json);
  add_seed(eval_cmd, ea.seed);
  allow_overrides(eval_cmd);

  ScoreArgs sa;
  auto* score_cmd = app.add_subcommand("score", "Score one image (and its reference in FR mode)");
  score_cmd->add_option("--image", sa.image)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--reference", sa.reference)->check(CLI::ExistingFile);
  score_cmd->add_option("--checkpoint", sa.checkpoint)->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--text-bank", sa.text_bank);
  score_cmd->add_option("--config", sa.config)->check(CLI::ExistingFile);
  score_cmd->add_option("--top", sa.top, "Adjectives listed per dimension")->check(CLI::Range(1, kNumAdjectives));
  score_cmd->add_flag("--json", sa.json);
  add_seed(score_cmd, sa.seed);
  allow_overrides(score_cmd);

  ExportArgs xa;
  auto* export_cmd = app.add_subcommand("export-attn", "Write the eight attention heatmaps as PNGs");
  export_cmd->add_option("--image", xa.image)->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--reference", xa.reference)->check(CLI::ExistingFile);
  export_cmd->add_option("--checkpoint", xa.checkpoint)->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--text-bank", xa.text_bank);
  export_cmd->add_option("--config", xa.config)->check(CLI::ExistingFile);
  export_cmd->add_option("--out-dir", xa.out_dir)->required();
  export_cmd->add_option("--level", xa.level, "Only this level (1-4)")->check(CLI::Range(1, kNumFusedLevels));
  export_cmd->add_option("--branch", xa.branch, "Only this branch: info or weight");
  export_cmd->add_flag("--raw", xa.raw, "Also write the unrendered maps to attention_maps.bpta");
  add_seed(export_cmd, xa.seed);
  allow_overrides(export_cmd);

  VerifyArgs va;
  va.text_bank = default_text_bank().string();
  auto* verify_cmd = app.add_subcommand("verify", "Run the invariant and oracle checks");
  verify_cmd->add_option("--text-bank", va.text_bank, "Bank used by the similarity and overfit checks");
  verify_cmd->add_flag("--quick", va.quick, "Skip the overfit run");
  verify_cmd->add_flag("--json", va.json);

  SynthArgs ya;
  auto* synth_cmd = app.add_subcommand("synth", "Write a small synthetic blur/noise dataset with manifests");
  synth_cmd->add_option("--out-dir", ya.out_dir)->required();
  synth_cmd->add_option("--mode", ya.mode)->check(CLI::IsMember({"fr", "nr"}));
  synth_cmd->add_option("--references", ya.references)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--per-reference", ya.per_reference)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", ya.size)->check(CLI::Range(32, 4096));
  synth_cmd->add_option("--seed", ya.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto extras = [](CLI::App* sub) { return sub->remaining(); };
  try {
    if (*train_cmd) return ta.extras = extras(train_cmd), cmd_train(ta);
    if (*eval_cmd) return ea.extras = extras(eval_cmd), cmd_eval(ea);
    if (*score_cmd) return sa.extras = extras(score_cmd), cmd_score(sa);
    if (*export_cmd) return xa.extras = extras(export_cmd), cmd_export(xa);
    if (*verify_cmd) return cmd_verify(va);
    if (*synth_cmd) return cmd_synth(ya);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SplitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const MetricUndefinedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
