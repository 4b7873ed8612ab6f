#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bpclip/gradcheck.hpp"
#include "bpclip/model.hpp"

namespace bpclip::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  std::filesystem::path text_bank;  // committed fixture
  bool include_slow = true;         // the overfit smoke run
  std::filesystem::path scratch_dir = std::filesystem::temp_directory_path() / "bpclip_verify";
};

/// A differentiable piece of the network with its leaves (parameters and
/// inputs) and a scalar probe loss, in double precision.
struct GradFragment {
  std::string name;
  ParameterSet<double> leaves;
  ScalarFn loss;
};

/// glp gating (FR and NR), msca_block (plain and layer-normed), sa_block,
/// fuse_branches, clip_head, mse_loss.
std::vector<GradFragment> gradient_fragments();
/// attention_forward (probed on every fused level) and head_forward, built
/// under the switches of `cfg`.
std::vector<GradFragment> variant_fragments(const ModelConfig& cfg, std::uint64_t seed);

/// Small model settings used by the checks; `dim` is the shared width D.
ModelConfig small_model(Mode mode, std::int64_t dim, std::int64_t text_dim, std::int64_t image_size);

CheckResult attention_oracle();
CheckResult gradient_suite();
CheckResult shape_law();
CheckResult glp_invariants();
CheckResult similarity_invariants(const Options& opt);
CheckResult metric_correctness();
CheckResult overfit_smoke(const Options& opt);
CheckResult protocol_checks(const Options& opt);
CheckResult format_roundtrip(const Options& opt);
CheckResult ablation_switches();

std::vector<CheckResult> run_all(const Options& opt);

/// "PASS  name  (1.23 s)  detail"
std::string format_line(const CheckResult& r);

}  // namespace bpclip::verify
