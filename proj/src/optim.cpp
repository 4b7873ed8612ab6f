#include "bpclip/optim.hpp"

#include <cmath>
#include <numbers>

namespace bpclip {

double CosineSchedule::operator()(double t) const {
  return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * t / t_max));
}

void CosineSchedule::validate() const {
  if (!(eta_max > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(eta_min >= 0.0) || eta_min > eta_max) throw ConfigError("eta_min must lie in [0, eta_max]");
  if (!(t_max > 0.0)) throw ConfigError("scheduler period must be positive");
}

void AdamW::step(ParameterSet<float>& params, const std::map<std::string, Tensor<float>>& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    if (!params.is_trainable(name)) continue;
    Tensor<float>& p = params.mutable_value(name);
    if (g.shape() != p.shape()) throw NumericError("gradient shape mismatch for '" + name + "'");
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(static_cast<std::size_t>(p.numel()), 0.0);
      st.v.assign(static_cast<std::size_t>(p.numel()), 0.0);
    }
    float* pv = p.ptr();
    const float* gv = g.ptr();
    for (std::size_t i = 0; i < st.m.size(); ++i) {
      const double gi = gv[i];
      double w = pv[i];
      w -= lr * cfg_.weight_decay * w;
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      w -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + cfg_.eps);
      pv[i] = static_cast<float>(w);
    }
  }
}

}  // namespace bpclip
