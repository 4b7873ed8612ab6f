#include "bpclip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bpclip/data.hpp"
#include "bpclip/ops.hpp"

namespace bpclip {
namespace {

double eval_loss(const ScalarFn& loss, const ParameterSet<double>& leaves) {
  Context<double> ctx(leaves, false);
  const auto v = loss(ctx);
  if (v.value().numel() != 1) throw ConfigError("gradient check loss must be a scalar");
  return v.value()[0];
}

}  // namespace

GradCheckResult gradient_check(const ScalarFn& loss, ParameterSet<double>& leaves, const GradCheckOptions& opt) {
  std::map<std::string, Tensor<double>> analytic;
  {
    Context<double> ctx(leaves, true);
    auto v = loss(ctx);
    if (v.value().numel() != 1) throw ConfigError("gradient check loss must be a scalar");
    backward(v);
    analytic = ctx.gradients();
  }
  GradCheckResult r;
  std::mt19937_64 rng(opt.seed);
  for (const auto& name : leaves.names()) {
    if (!leaves.is_trainable(name)) continue;
    Tensor<double>& value = leaves.mutable_value(name);
    const auto it = analytic.find(name);
    const std::size_t n = static_cast<std::size_t>(value.numel());
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    fisher_yates(coords, rng);
    coords.resize(std::min(n, opt.samples_per_tensor));
    for (std::size_t idx : coords) {
      const double a = (it == analytic.end() ? 0.0 : it->second[idx]) * opt.gradient_scale;
      const double orig = value[idx];
      value[idx] = orig + opt.h;
      const double fp = eval_loss(loss, leaves);
      value[idx] = orig - opt.h;
      const double fm = eval_loss(loss, leaves);
      value[idx] = orig;
      const double num = (fp - fm) / (2.0 * opt.h);
      ++r.checked;
      if (!std::isfinite(a) || !std::isfinite(num)) {
        r.finite = false;
        r.worst = name + "[" + std::to_string(idx) + "]";
        continue;
      }
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), opt.denominator_floor});
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = name + "[" + std::to_string(idx) + "]";
      }
    }
  }
  return r;
}

Var<double> random_projection(const Var<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<double> w(out.shape());
  for (auto& x : w.data()) x = static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
  return sum(mul(out, Var<double>::constant(std::move(w))));
}

}  // namespace bpclip
