#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bpclip/data.hpp"
#include "bpclip/metrics.hpp"
#include "bpclip/model.hpp"
#include "bpclip/optim.hpp"

namespace bpclip {

enum class ScheduleUnit { epoch, step };

struct TrainConfig {
  double lr = 1e-4;  // eta_max
  double weight_decay = 1e-5;
  double t_max = 50.0;
  double eta_min = 0.0;
  ScheduleUnit schedule_unit = ScheduleUnit::epoch;
  int epochs = 200;
  int batch_size = 16;
  std::int64_t max_steps = 0;  // 0: no cap
  std::uint64_t seed = 0;
  std::int64_t patch_size = 384;
  std::int64_t resize = 448;  // shorter side before cropping; 0 keeps the decoded size
  int eval_crops = 1;         // 1: center crop; >1 averages seeded random crops

  static TrainConfig defaults_for(Mode mode);
  CosineSchedule schedule() const { return {lr, eta_min, t_max}; }
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;  // mean over the epoch's steps
  double lr = 0.0;
  std::vector<double> step_losses;
  std::optional<MetricsReport> val;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::vector<double> step_lrs;
  int best_epoch = -1;
  double best_val_srcc = 0.0;
  ParameterSet<float> best_params;
};

/// Stacks equally sized (3,H,W) images into (B,3,H,W).
Tensor<float> stack_images(const std::vector<const Image*>& images);

/// AdamW + cosine schedule on normalized MOS with MSE. With `out_dir`, writes
/// train_log.jsonl (one line per epoch), last.bpta, best.bpta (best validation
/// SRCC; the final epoch without validation data) and state.json. A non-finite
/// loss saves the last finite parameters to last.bpta and throws DivergenceError.
TrainResult train(const TrainConfig& cfg, const ModelConfig& model, ParameterSet<float>& params,
                  const Tensor<float>* bank, const std::vector<LoadedSample>& train_set,
                  const std::vector<LoadedSample>& val_set, const std::optional<std::filesystem::path>& out_dir = {});

/// Deterministic scores with evaluation cropping.
std::vector<double> predict(const ModelConfig& model, const ParameterSet<float>& params, const Tensor<float>* bank,
                            const std::vector<LoadedSample>& samples, std::int64_t patch_size, int batch_size,
                            int eval_crops = 1, std::uint64_t seed = 0);

using Predictor = std::function<double(const LoadedSample&)>;

/// Throws MetricUndefinedError below 3 samples or with fewer than 3 distinct MOS values.
MetricsReport evaluate(const Predictor& predictor, const std::vector<LoadedSample>& samples);
MetricsReport evaluate_scores(const std::vector<double>& scores, const std::vector<LoadedSample>& samples);

}  // namespace bpclip
