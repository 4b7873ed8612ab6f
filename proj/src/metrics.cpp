#include "bpclip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bpclip/error.hpp"

namespace bpclip {
namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw MetricUndefinedError("correlation inputs differ in length (" + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()) + ")");
  }
  if (a.size() < 3) throw MetricUndefinedError("correlation needs at least 3 samples, got " + std::to_string(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw MetricUndefinedError("correlation input is not finite");
  }
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

std::vector<double> mid_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double plcc(std::span<const double> pred, std::span<const double> gt) {
  check_pair(pred, gt);
  const double mp = mean(pred), mg = mean(gt);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i] - mp, dy = gt[i] - mg;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricUndefinedError("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double srcc(std::span<const double> pred, std::span<const double> gt) {
  check_pair(pred, gt);
  const auto rp = mid_ranks(pred), rg = mid_ranks(gt);
  return plcc(rp, rg);
}

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> gt) {
  return {srcc(pred, gt), plcc(pred, gt), pred.size()};
}

RepeatedReport summarize(const std::vector<MetricsReport>& runs) {
  RepeatedReport r;
  r.runs = runs;
  if (runs.empty()) return r;
  auto stats = [&](auto field, double& m, double& s) {
    double sum = 0.0;
    for (const auto& x : runs) sum += x.*field;
    m = sum / static_cast<double>(runs.size());
    double ss = 0.0;
    for (const auto& x : runs) ss += (x.*field - m) * (x.*field - m);
    s = runs.size() > 1 ? std::sqrt(ss / static_cast<double>(runs.size() - 1)) : 0.0;
  };
  stats(&MetricsReport::srcc, r.srcc_mean, r.srcc_std);
  stats(&MetricsReport::plcc, r.plcc_mean, r.plcc_std);
  return r;
}

nlohmann::json to_json(const MetricsReport& r) { return {{"srcc", r.srcc}, {"plcc", r.plcc}, {"count", r.count}}; }

nlohmann::json to_json(const RepeatedReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& x : r.runs) runs.push_back(to_json(x));
  return {{"srcc_mean", r.srcc_mean}, {"srcc_std", r.srcc_std}, {"plcc_mean", r.plcc_mean},
          {"plcc_std", r.plcc_std},   {"repeats", r.runs.size()}, {"runs", runs}};
}

}  // namespace bpclip
