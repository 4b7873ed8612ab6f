#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bpclip/glp.hpp"
#include "bpclip/image.hpp"

namespace bpclip {

enum class MosPolarity { higher_better, lower_better };
std::string to_string(MosPolarity p);
MosPolarity mos_polarity_from_string(const std::string& s);

struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::string reference_path;  // empty in NR mode
  double mos = 0.0;
  std::string group_key;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetMeta {
  double mos_min = 0.0;
  double mos_max = 1.0;
  MosPolarity polarity = MosPolarity::higher_better;
  Mode mode = Mode::nr;

  bool operator==(const DatasetMeta&) const = default;
};

struct SampleManifest {
  std::vector<ManifestEntry> entries;
  DatasetMeta meta;
  std::filesystem::path base_dir;  // prefix for relative paths when BPCLIP_DATA_ROOT is unset

  /// BPCLIP_DATA_ROOT / relative, else base_dir / relative. Absolute paths pass through.
  std::filesystem::path resolve(const std::string& relative) const;
  std::vector<std::string> group_keys() const;  // sorted, unique
};

/// CSV files carry no dataset metadata; these fill the gaps. Unset MOS bounds
/// default to the observed range, an unset mode is FR iff any row names a
/// reference. JSON files may carry a "meta" object, which options override.
struct ManifestOptions {
  std::optional<Mode> mode;
  std::optional<MosPolarity> polarity;
  std::optional<double> mos_min;
  std::optional<double> mos_max;
  bool check_files = true;
};

/// CSV (header id,image_path,reference_path,mos,group_key) or JSON
/// ({"meta": {...}, "entries": [...]}), chosen by extension.
SampleManifest load_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});
SampleManifest parse_manifest_csv(const std::string& text, const ManifestOptions& options = {});
SampleManifest parse_manifest_json(const std::string& text, const ManifestOptions& options = {});
void validate_manifest(SampleManifest& manifest, bool check_files);
void save_manifest_json(const std::filesystem::path& path, const SampleManifest& manifest);

/// Min-max normalization into [0,1], flipped for lower-is-better scales.
SampleManifest normalize_mos(const SampleManifest& manifest);

struct SplitSpec {
  std::vector<double> ratios;  // 2 parts: train/test; 3 parts: train/val/test
  std::uint64_t seed = 0;
  int repeat_index = 0;

  static SplitSpec fr_default(std::uint64_t seed, int repeat) { return {{6, 2, 2}, seed, repeat}; }
  static SplitSpec nr_default(std::uint64_t seed, int repeat) { return {{8, 2}, seed, repeat}; }
};

/// Indices into manifest.entries.
struct DatasetSplit {
  std::vector<std::size_t> train, val, test;
};

/// Part sizes by the largest-remainder rule; every part with a positive
/// ratio gets at least one item or SplitError is thrown.
std::vector<std::size_t> split_counts(std::size_t n, const std::vector<double>& ratios);

/// FR: shuffles sorted group keys and partitions groups. NR: partitions entries.
/// A pure function of (manifest, seed, repeat_index).
DatasetSplit split_dataset(const SampleManifest& manifest, const SplitSpec& spec);

/// Uniform integer in [0, n) by rejection from the raw 64-bit stream, so the
/// result does not depend on the standard library's distributions.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);
bool coin_flip(std::mt19937_64& rng);

template <typename V>
void fisher_yates(std::vector<V>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

/// Independent stream per (seed, sample id, epoch); order-independent.
std::mt19937_64 sample_rng(std::uint64_t seed, const std::string& id, std::uint64_t epoch);

struct CropMeta {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t size = 0;
  bool hflip = false;
  bool vflip = false;

  bool operator==(const CropMeta&) const = default;
};

struct Patch {
  Image distorted;
  Image reference;  // empty in NR mode
  CropMeta crop;
};

/// Training: random square crop plus independent horizontal/vertical flips
/// (p = 0.5 each); evaluation: center crop, no flips. The reference, when
/// given, receives exactly the same window and flips.
Patch augment_patch(const Image& distorted, const Image* reference, std::int64_t patch_size, std::mt19937_64& rng,
                    bool train, const std::string& source = "");

/// Applies a crop/flip description to one image.
Image apply_crop(const Image& image, const CropMeta& crop);

struct LoadedSample {
  std::string id;
  Image image;
  Image reference;
  double mos = 0.0;  // normalized
};

/// Decodes and optionally resizes (shorter side = resize_to, 0 keeps size).
/// Decoded references are shared between entries with the same path.
std::vector<LoadedSample> load_samples(const SampleManifest& manifest, const std::vector<std::size_t>& indices,
                                       std::int64_t resize_to, std::vector<std::string>* warnings = nullptr);

}  // namespace bpclip
