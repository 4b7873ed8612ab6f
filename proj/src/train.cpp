#include "bpclip/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace bpclip {
namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw LoadError(LoadError::Kind::io, "cannot write '" + path.string() + "'");
  f << text;
}

std::map<std::string, Tensor<float>> frozen_snapshot(const ParameterSet<float>& params) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, e] : params.entries()) {
    if (!e.trainable) out.emplace(name, e.value);
  }
  return out;
}

void assert_frozen_unchanged(const ParameterSet<float>& params, const std::map<std::string, Tensor<float>>& snap) {
  for (const auto& [name, t] : snap) {
    if (!(params.get(name) == t)) throw std::logic_error("internal error: frozen parameter '" + name + "' was modified");
  }
}

struct Batch {
  Tensor<float> distorted, reference, target;
};

Batch make_batch(const std::vector<const LoadedSample*>& items, std::int64_t patch, bool train, std::uint64_t seed,
                 std::uint64_t epoch, bool fr) {
  std::vector<Patch> patches;
  patches.reserve(items.size());
  for (const auto* s : items) {
    auto rng = sample_rng(seed, s->id, epoch);
    patches.push_back(augment_patch(s->image, fr ? &s->reference : nullptr, patch, rng, train, s->id));
  }
  std::vector<const Image*> d, r;
  Batch b;
  b.target = Tensor<float>(Shape{static_cast<std::int64_t>(items.size())});
  for (std::size_t i = 0; i < items.size(); ++i) {
    d.push_back(&patches[i].distorted);
    if (fr) r.push_back(&patches[i].reference);
    b.target[i] = static_cast<float>(items[i]->mos);
  }
  b.distorted = stack_images(d);
  if (fr) b.reference = stack_images(r);
  return b;
}

std::vector<float> forward_scores(const ModelConfig& model, const ParameterSet<float>& params,
                                  const Tensor<float>* bank, const Batch& b) {
  Context<float> ctx(params, false);
  auto d = Var<float>::constant(b.distorted);
  Var<float> r;
  if (model.mode() == Mode::fr) r = Var<float>::constant(b.reference);
  auto out = model_forward(ctx, d, model.mode() == Mode::fr ? &r : nullptr, model, bank);
  const auto& v = out.score.value();
  return {v.data().begin(), v.data().end()};
}

}  // namespace

TrainConfig TrainConfig::defaults_for(Mode mode) {
  TrainConfig c;
  c.lr = mode == Mode::fr ? 1e-4 : 3e-5;
  return c;
}

void TrainConfig::validate() const {
  schedule().validate();
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (patch_size < 32 || patch_size % 32 != 0) throw ConfigError("patch size must be a positive multiple of 32");
  if (resize != 0 && resize < patch_size) throw ConfigError("resize target is smaller than the patch size");
  if (eval_crops < 1) throw ConfigError("eval_crops must be at least 1");
}

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch}, {"step", r.step}, {"loss", r.loss}, {"lr", r.lr}};
  j["step_losses"] = r.step_losses;
  if (r.val) {
    j["val_srcc"] = r.val->srcc;
    j["val_plcc"] = r.val->plcc;
  } else {
    j["val_srcc"] = nullptr;
    j["val_plcc"] = nullptr;
  }
  return j;
}

Tensor<float> stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw InputError("cannot stack an empty batch");
  const Shape s = images.front()->shape();
  Shape out_shape{static_cast<std::int64_t>(images.size())};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor<float> out(out_shape);
  const std::size_t n = static_cast<std::size_t>(shape_numel(s));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) throw InputError("batch images differ in shape");
    std::copy(images[i]->ptr(), images[i]->ptr() + n, out.ptr() + i * n);
  }
  return out;
}

TrainResult train(const TrainConfig& cfg, const ModelConfig& model, ParameterSet<float>& params,
                  const Tensor<float>* bank, const std::vector<LoadedSample>& train_set,
                  const std::vector<LoadedSample>& val_set, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  model.validate();
  if (train_set.empty()) throw InputError("training set is empty");
  const bool fr = model.mode() == Mode::fr;
  for (const auto& s : train_set) {
    if (fr == s.reference.data().empty()) {
      throw ConfigError("sample '" + s.id + "' does not match the model's " + to_string(model.mode()) + " mode");
    }
  }
  if (out_dir) std::filesystem::create_directories(*out_dir);

  const auto frozen = frozen_snapshot(params);
  const auto schedule = cfg.schedule();
  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 order_rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.best_params = params;
  std::ostringstream log;
  std::int64_t step = 0;
  bool capped = false;

  auto save_state = [&](int epoch) {
    if (!out_dir) return;
    std::ostringstream rng_state;
    rng_state << order_rng;
    nlohmann::json st = {{"step", step},
                         {"epoch", epoch},
                         {"rng_state", rng_state.str()},
                         {"schedule", {{"unit", cfg.schedule_unit == ScheduleUnit::epoch ? "epoch" : "step"},
                                       {"t", cfg.schedule_unit == ScheduleUnit::epoch ? epoch + 1 : step},
                                       {"t_max", cfg.t_max},
                                       {"eta_max", cfg.lr},
                                       {"eta_min", cfg.eta_min}}},
                         {"best_epoch", result.best_epoch},
                         {"best_val_srcc", result.best_val_srcc}};
    write_text(*out_dir / "state.json", st.dump(2) + "\n");
  };

  for (int epoch = 0; epoch < cfg.epochs && !capped; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = schedule(static_cast<double>(cfg.schedule_unit == ScheduleUnit::epoch ? epoch : step));
    fisher_yates(order, order_rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        capped = true;
        break;
      }
      const double lr =
          cfg.schedule_unit == ScheduleUnit::epoch ? rec.lr : schedule(static_cast<double>(step));
      std::vector<const LoadedSample*> items;
      for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++k) {
        items.push_back(&train_set[order[k]]);
      }
      const Batch b = make_batch(items, cfg.patch_size, true, cfg.seed, static_cast<std::uint64_t>(epoch), fr);

      Context<float> ctx(params, true);
      auto d = Var<float>::constant(b.distorted);
      Var<float> r;
      if (fr) r = Var<float>::constant(b.reference);
      auto out = model_forward(ctx, d, fr ? &r : nullptr, model, bank);
      auto loss = mse_loss(out.score, Var<float>::constant(b.target));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        if (out_dir) save_checkpoint(*out_dir / "last.bpta", model, params, {{"epoch", epoch}, {"step", step}});
        throw DivergenceError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                              "); last finite parameters kept");
      }
      backward(loss);
      const auto grads = ctx.gradients();
      for (const auto& [name, g] : grads) {
        if (!g.all_finite()) {
          if (out_dir) save_checkpoint(*out_dir / "last.bpta", model, params, {{"epoch", epoch}, {"step", step}});
          throw DivergenceError("non-finite gradient for '" + name + "' at step " + std::to_string(step));
        }
      }
      opt.step(params, grads, lr);
      ++step;
      rec.step_losses.push_back(lv);
      result.step_losses.push_back(lv);
      result.step_lrs.push_back(lr);
    }
    if (rec.step_losses.empty()) break;
    assert_frozen_unchanged(params, frozen);
    rec.step = step;
    rec.loss = std::accumulate(rec.step_losses.begin(), rec.step_losses.end(), 0.0) /
               static_cast<double>(rec.step_losses.size());

    bool improved = false;
    if (val_set.size() >= 3) {
      const auto scores = predict(model, params, bank, val_set, cfg.patch_size, cfg.batch_size, cfg.eval_crops, cfg.seed);
      try {
        rec.val = evaluate_scores(scores, val_set);
        if (result.best_epoch < 0 || rec.val->srcc > result.best_val_srcc) improved = true;
      } catch (const MetricUndefinedError&) {
        // constant predictions early in training; not a selection candidate
      }
    }
    const bool last_epoch = epoch + 1 == cfg.epochs || (cfg.max_steps > 0 && step >= cfg.max_steps);
    if (improved) {
      result.best_epoch = epoch;
      result.best_val_srcc = rec.val->srcc;
      result.best_params = params;
      if (out_dir) save_checkpoint(*out_dir / "best.bpta", model, params, {{"epoch", epoch}, {"val_srcc", rec.val->srcc}});
    }
    log << to_json(rec).dump() << "\n";
    if (out_dir) {
      write_text(*out_dir / "train_log.jsonl", log.str());
      save_checkpoint(*out_dir / "last.bpta", model, params, {{"epoch", epoch}, {"step", step}});
      save_state(epoch);
    }
    result.epochs.push_back(std::move(rec));
    if (last_epoch && result.best_epoch < 0) {
      result.best_epoch = epoch;
      result.best_params = params;
      if (out_dir) save_checkpoint(*out_dir / "best.bpta", model, params, {{"epoch", epoch}});
    }
  }
  if (result.best_epoch < 0) {
    result.best_epoch = static_cast<int>(result.epochs.size()) - 1;
    result.best_params = params;
    if (out_dir) save_checkpoint(*out_dir / "best.bpta", model, params, {{"epoch", result.best_epoch}});
  }
  return result;
}

std::vector<double> predict(const ModelConfig& model, const ParameterSet<float>& params, const Tensor<float>* bank,
                            const std::vector<LoadedSample>& samples, std::int64_t patch_size, int batch_size,
                            int eval_crops, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  const bool fr = model.mode() == Mode::fr;
  std::vector<double> scores(samples.size(), 0.0);
  for (int crop = 0; crop < eval_crops; ++crop) {
    const bool random_crop = eval_crops > 1;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
      std::vector<const LoadedSample*> items;
      for (std::size_t k = start; k < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++k) {
        items.push_back(&samples[k]);
      }
      // epoch slot offset keeps evaluation crops apart from training streams
      const Batch b = make_batch(items, patch_size, random_crop, seed ^ 0xE7A1ULL, static_cast<std::uint64_t>(crop), fr);
      const auto s = forward_scores(model, params, bank, b);
      for (std::size_t k = 0; k < s.size(); ++k) scores[start + k] += s[k] / eval_crops;
    }
  }
  return scores;
}

MetricsReport evaluate_scores(const std::vector<double>& scores, const std::vector<LoadedSample>& samples) {
  if (samples.size() < 3) {
    throw MetricUndefinedError("evaluation needs at least 3 samples, got " + std::to_string(samples.size()));
  }
  std::vector<double> gt;
  std::set<double> distinct;
  for (const auto& s : samples) {
    gt.push_back(s.mos);
    distinct.insert(s.mos);
  }
  if (distinct.size() < 3) throw MetricUndefinedError("evaluation needs at least 3 distinct MOS values");
  return compute_metrics(scores, gt);
}

MetricsReport evaluate(const Predictor& predictor, const std::vector<LoadedSample>& samples) {
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (const auto& s : samples) scores.push_back(predictor(s));
  return evaluate_scores(scores, samples);
}

}  // namespace bpclip
