#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bpclip/data.hpp"

namespace bpclip {

struct SyntheticSpec {
  int num_references = 4;
  int per_reference = 4;    // distorted versions per reference
  std::int64_t size = 64;   // square side
  std::uint64_t seed = 0;
  Mode mode = Mode::fr;
};

/// Smooth random reference patterns, each degraded by Gaussian blur plus
/// additive noise at strictly increasing severities. Normalized MOS is
/// 1 - severity, so quality falls monotonically with distortion strength and
/// every MOS value is distinct. NR samples drop the reference.
std::vector<LoadedSample> make_synthetic(const SyntheticSpec& spec);

/// Writes PNGs plus manifest.csv/manifest.json under `dir`; returns the JSON manifest path.
std::filesystem::path write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace bpclip
