#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

namespace bpclip {

/// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> mid_ranks(std::span<const double> v);

/// Pearson correlation. Throws MetricUndefinedError for N < 3, a length
/// mismatch or zero variance.
double plcc(std::span<const double> pred, std::span<const double> gt);

/// Pearson correlation of mid-ranks.
double srcc(std::span<const double> pred, std::span<const double> gt);

struct MetricsReport {
  double srcc = 0.0;
  double plcc = 0.0;
  std::size_t count = 0;
};

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> gt);

/// Mean and sample standard deviation over repeated splits.
struct RepeatedReport {
  std::vector<MetricsReport> runs;
  double srcc_mean = 0.0, srcc_std = 0.0;
  double plcc_mean = 0.0, plcc_std = 0.0;
};

RepeatedReport summarize(const std::vector<MetricsReport>& runs);

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const RepeatedReport& r);

}  // namespace bpclip
