#include "bpclip/text_bank.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "bpclip/archive.hpp"
#include "json.hpp"

namespace bpclip {
namespace {

LoadError invalid(const std::string& what) { return LoadError(LoadError::Kind::validation, "text bank: " + what); }

// Shape and sidecar consistency; fills the flat adjective index.
void index_adjectives(TextBank& bank) {
  bank.adjectives.clear();
  bank.dimension_of.clear();
  if (bank.embeddings.rank() != 2) throw invalid("embeddings must be a matrix");
  if (bank.embeddings.dim(0) != kNumAdjectives) {
    throw invalid("expected " + std::to_string(kNumAdjectives) + " embedding rows, found " +
                  std::to_string(bank.embeddings.dim(0)));
  }
  if (static_cast<int>(bank.dimensions.size()) != kNumQualityDimensions) {
    throw invalid("expected " + std::to_string(kNumQualityDimensions) + " quality dimensions, found " +
                  std::to_string(bank.dimensions.size()));
  }
  std::set<std::string> seen;
  for (std::size_t di = 0; di < bank.dimensions.size(); ++di) {
    for (const auto& adj : bank.dimensions[di].adjectives) {
      if (!seen.insert(adj).second) throw invalid("duplicate adjective '" + adj + "'");
      bank.adjectives.push_back(adj);
      bank.dimension_of.push_back(static_cast<int>(di));
    }
  }
  if (static_cast<int>(bank.adjectives.size()) != kNumAdjectives) {
    throw invalid("sidecar lists " + std::to_string(bank.adjectives.size()) + " adjectives, expected " +
                  std::to_string(kNumAdjectives));
  }
}

}  // namespace

std::filesystem::path text_bank_sidecar_path(const std::filesystem::path& archive_path) {
  auto p = archive_path;
  p.replace_extension(".json");
  return p;
}

TextBank load_text_bank(const std::filesystem::path& archive_path) {
  return load_text_bank(archive_path, text_bank_sidecar_path(archive_path));
}

TextBank load_text_bank(const std::filesystem::path& archive_path, const std::filesystem::path& sidecar_path) {
  TextBank bank;
  const auto archive = TensorArchive::load(archive_path);
  bank.embeddings = archive.get<double>(kTextEmbeddingsName);

  std::ifstream f(sidecar_path);
  if (!f) throw LoadError(LoadError::Kind::io, "cannot open text bank sidecar '" + sidecar_path.string() + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(f);
    bank.prompt_template = meta.value("template", "");
    bank.source_model_id = meta.value("model_id", "");
    for (const auto& d : meta.at("dimensions")) {
      bank.dimensions.push_back({d.at("name").get<std::string>(), d.at("adjectives").get<std::vector<std::string>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Kind::format, "malformed text bank sidecar: " + std::string(e.what()));
  }

  index_adjectives(bank);

  const std::size_t d = bank.embeddings.dim(1);
  for (std::size_t r = 0; r < static_cast<std::size_t>(kNumAdjectives); ++r) {
    double* row = bank.embeddings.ptr() + r * d;
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += row[c] * row[c];
    const double norm = std::sqrt(s);
    if (!std::isfinite(norm) || std::abs(norm - 1.0) > 1e-3) {
      throw invalid("row " + std::to_string(r) + " has norm " + std::to_string(norm) + ", not unit length");
    }
    if (std::abs(norm - 1.0) > 1e-5) {
      bank.warnings.push_back("row " + std::to_string(r) + " re-normalized from norm " + std::to_string(norm));
    }
    for (std::size_t c = 0; c < d; ++c) row[c] /= norm;
  }
  return bank;
}

void save_text_bank(const TextBank& bank, const std::filesystem::path& archive_path) {
  TextBank checked = bank;
  index_adjectives(checked);
  TensorArchive ar;
  ar.put(kTextEmbeddingsName, bank.embeddings.cast<float>());
  ar.save(archive_path);
  nlohmann::json meta;
  meta["template"] = bank.prompt_template;
  meta["model_id"] = bank.source_model_id;
  meta["dimensions"] = nlohmann::json::array();
  for (const auto& d : bank.dimensions) meta["dimensions"].push_back({{"name", d.name}, {"adjectives", d.adjectives}});
  std::ofstream f(text_bank_sidecar_path(archive_path));
  if (!f) throw LoadError(LoadError::Kind::io, "cannot write text bank sidecar");
  f << meta.dump(2) << "\n";
}

}  // namespace bpclip
