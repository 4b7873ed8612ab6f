#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bpclip/tensor.hpp"

namespace bpclip {

inline constexpr int kNumAdjectives = 40;
inline constexpr int kNumQualityDimensions = 6;
inline const std::string kTextEmbeddingsName = "text.embeddings";

struct QualityDimension {
  std::string name;
  std::vector<std::string> adjectives;
};

/// Frozen adjective embeddings. Row r belongs to adjectives[r]; rows follow the
/// order of `dimensions` flattened.
struct TextBank {
  Tensor<double> embeddings;  // (40, d_text), unit rows
  std::vector<std::string> adjectives;
  std::vector<QualityDimension> dimensions;
  std::vector<int> dimension_of;
  std::string prompt_template;
  std::string source_model_id;
  std::vector<std::string> warnings;  // filled by load_text_bank

  std::int64_t text_dim() const { return embeddings.rank() == 2 ? embeddings.dim(1) : 0; }
};

/// Sidecar path convention: same stem, ".json" extension.
std::filesystem::path text_bank_sidecar_path(const std::filesystem::path& archive_path);

/// Loads "text.embeddings" from a tensor archive plus its JSON sidecar
/// {template, model_id, dimensions: [{name, adjectives}]}.
/// Rows within 1e-3 of unit norm are re-normalized (recorded in `warnings`);
/// anything further off, a row count other than 40, a dimension count other
/// than 6, or duplicate adjectives throw LoadError(validation).
TextBank load_text_bank(const std::filesystem::path& archive_path);
TextBank load_text_bank(const std::filesystem::path& archive_path, const std::filesystem::path& sidecar_path);

void save_text_bank(const TextBank& bank, const std::filesystem::path& archive_path);

}  // namespace bpclip
