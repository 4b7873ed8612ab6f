#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bpclip/parameters.hpp"

namespace bpclip {

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t samples_per_tensor = 6;  // coordinates checked per tensor (all when smaller)
  std::uint64_t seed = 0;
  double gradient_scale = 1.0;  // != 1 corrupts the analytic gradient (control case)
  double denominator_floor = 1e-8;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[flat index]"
  std::size_t checked = 0;
  bool finite = true;

  bool passed(double tol) const { return finite && checked > 0 && max_rel_error <= tol; }
};

using ScalarFn = std::function<Var<double>(Context<double>&)>;

/// Central differences against reverse-mode gradients for every trainable
/// entry in `leaves` (inputs can be included as ordinary entries). `loss`
/// must return a single-element Var. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(const ScalarFn& loss, ParameterSet<double>& leaves, const GradCheckOptions& opt = {});

/// Sum of out * R for a fixed random tensor R: a generic scalar probe.
Var<double> random_projection(const Var<double>& out, std::uint64_t seed);

}  // namespace bpclip
