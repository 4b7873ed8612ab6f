#pragma once

#include <map>
#include <string>

#include "bpclip/parameters.hpp"

namespace bpclip {

/// eta(t) = eta_min + (eta_max - eta_min) (1 + cos(pi t / t_max)) / 2, evaluated
/// for every t (periodic beyond t_max).
struct CosineSchedule {
  double eta_max = 1e-4;
  double eta_min = 0.0;
  double t_max = 50.0;

  double operator()(double t) const;
  void validate() const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// Decoupled weight decay Adam. Entries marked non-trainable are never read
/// for update and never written.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterSet<float>& params, const std::map<std::string, Tensor<float>>& grads, double lr);
  std::int64_t steps() const noexcept { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace bpclip
