#include "bpclip/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "bpclip/error.hpp"
#include "json.hpp"

namespace bpclip {
namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError(LoadError::Kind::io, "cannot open manifest '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// RFC 4180 style: quoted fields may contain commas, doubled quotes and newlines.
std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = any = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += ch;
      any = true;
    }
  }
  if (quoted) throw LoadError(LoadError::Kind::format, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_mos(const std::string& s, const std::string& id) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw LoadError(LoadError::Kind::validation, "entry '" + id + "': MOS '" + s + "' is not a finite number");
  }
}

void apply_options(SampleManifest& m, const ManifestOptions& o, bool has_mode, bool has_bounds_min,
                   bool has_bounds_max) {
  if (o.mode) {
    m.meta.mode = *o.mode;
  } else if (!has_mode) {
    const bool any_ref =
        std::any_of(m.entries.begin(), m.entries.end(), [](const ManifestEntry& e) { return !e.reference_path.empty(); });
    m.meta.mode = any_ref ? Mode::fr : Mode::nr;
  }
  if (o.polarity) m.meta.polarity = *o.polarity;
  if (!m.entries.empty()) {
    auto [lo, hi] = std::minmax_element(m.entries.begin(), m.entries.end(),
                                        [](const ManifestEntry& a, const ManifestEntry& b) { return a.mos < b.mos; });
    if (!has_bounds_min) m.meta.mos_min = lo->mos;
    if (!has_bounds_max) m.meta.mos_max = hi->mos;
  }
  if (o.mos_min) m.meta.mos_min = *o.mos_min;
  if (o.mos_max) m.meta.mos_max = *o.mos_max;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string to_string(MosPolarity p) { return p == MosPolarity::higher_better ? "higher_better" : "lower_better"; }

MosPolarity mos_polarity_from_string(const std::string& s) {
  if (s == "higher_better") return MosPolarity::higher_better;
  if (s == "lower_better") return MosPolarity::lower_better;
  throw ConfigError("unknown MOS polarity '" + s + "' (expected higher_better or lower_better)");
}

std::filesystem::path SampleManifest::resolve(const std::string& relative) const {
  const std::filesystem::path p(relative);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("BPCLIP_DATA_ROOT"); root && *root) return std::filesystem::path(root) / p;
  return base_dir / p;
}

std::vector<std::string> SampleManifest::group_keys() const {
  std::set<std::string> keys;
  for (const auto& e : entries) keys.insert(e.group_key);
  return {keys.begin(), keys.end()};
}

SampleManifest parse_manifest_csv(const std::string& text, const ManifestOptions& options) {
  const auto rows = parse_csv_rows(text);
  if (rows.empty()) throw LoadError(LoadError::Kind::format, "manifest CSV is empty");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col[trim(rows[0][i])] = i;
  for (const char* required : {"id", "image_path", "mos"}) {
    if (!col.count(required)) throw LoadError(LoadError::Kind::format, std::string("manifest lacks column '") + required + "'");
  }
  auto cell = [&](const std::vector<std::string>& r, const std::string& name) -> std::string {
    auto it = col.find(name);
    if (it == col.end() || it->second >= r.size()) return "";
    return trim(r[it->second]);
  };
  SampleManifest m;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != rows[0].size()) {
      throw LoadError(LoadError::Kind::format, "manifest row " + std::to_string(i) + " has " + std::to_string(r.size()) +
                                                   " fields, header has " + std::to_string(rows[0].size()));
    }
    ManifestEntry e;
    e.id = cell(r, "id");
    e.image_path = cell(r, "image_path");
    e.reference_path = cell(r, "reference_path");
    e.mos = parse_mos(cell(r, "mos"), e.id);
    e.group_key = cell(r, "group_key");
    m.entries.push_back(std::move(e));
  }
  apply_options(m, options, false, false, false);
  return m;
}

SampleManifest parse_manifest_json(const std::string& text, const ManifestOptions& options) {
  SampleManifest m;
  bool has_mode = false, has_min = false, has_max = false;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("meta")) {
      const auto& meta = j.at("meta");
      if (meta.contains("mode")) {
        m.meta.mode = mode_from_string(meta.at("mode").get<std::string>());
        has_mode = true;
      }
      if (meta.contains("mos_polarity")) m.meta.polarity = mos_polarity_from_string(meta.at("mos_polarity"));
      if (meta.contains("mos_min")) {
        m.meta.mos_min = meta.at("mos_min").get<double>();
        has_min = true;
      }
      if (meta.contains("mos_max")) {
        m.meta.mos_max = meta.at("mos_max").get<double>();
        has_max = true;
      }
    }
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.id = e.at("id").get<std::string>();
      me.image_path = e.at("image_path").get<std::string>();
      me.reference_path = e.value("reference_path", "");
      me.mos = e.at("mos").get<double>();
      me.group_key = e.value("group_key", "");
      m.entries.push_back(std::move(me));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw LoadError(LoadError::Kind::format, std::string("malformed JSON manifest: ") + ex.what());
  }
  apply_options(m, options, has_mode, has_min, has_max);
  return m;
}

void validate_manifest(SampleManifest& m, bool check_files) {
  if (m.entries.empty()) throw LoadError(LoadError::Kind::validation, "manifest has no entries");
  if (!(m.meta.mos_min < m.meta.mos_max)) {
    throw LoadError(LoadError::Kind::validation, "manifest MOS range is degenerate (min " +
                                                     std::to_string(m.meta.mos_min) + ", max " +
                                                     std::to_string(m.meta.mos_max) + ")");
  }
  std::set<std::string> ids;
  for (auto& e : m.entries) {
    if (e.id.empty()) throw LoadError(LoadError::Kind::validation, "manifest entry with empty id");
    if (!ids.insert(e.id).second) throw LoadError(LoadError::Kind::validation, "duplicate id '" + e.id + "'");
    if (e.image_path.empty()) throw LoadError(LoadError::Kind::validation, "entry '" + e.id + "' has no image_path");
    if (m.meta.mode == Mode::fr) {
      if (e.reference_path.empty()) {
        throw LoadError(LoadError::Kind::validation, "FR entry '" + e.id + "' lacks reference_path");
      }
      if (e.group_key.empty()) e.group_key = std::filesystem::path(e.reference_path).stem().string();
    } else {
      if (!e.reference_path.empty()) {
        throw LoadError(LoadError::Kind::validation, "NR manifest entry '" + e.id + "' names a reference_path");
      }
      if (e.group_key.empty()) e.group_key = e.id;
    }
    if (check_files) {
      for (const auto* rel : {&e.image_path, &e.reference_path}) {
        if (rel->empty()) continue;
        const auto p = m.resolve(*rel);
        if (!std::filesystem::exists(p)) {
          throw LoadError(LoadError::Kind::io, "entry '" + e.id + "': file '" + p.string() + "' does not exist");
        }
      }
    }
  }
}

SampleManifest load_manifest(const std::filesystem::path& path, const ManifestOptions& options) {
  const std::string text = read_text(path);
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  SampleManifest m;
  if (ext == ".json") {
    m = parse_manifest_json(text, options);
  } else if (ext == ".csv") {
    m = parse_manifest_csv(text, options);
  } else {
    throw LoadError(LoadError::Kind::format, "manifest '" + path.string() + "' must be .csv or .json");
  }
  m.base_dir = path.parent_path();
  validate_manifest(m, options.check_files);
  return m;
}

void save_manifest_json(const std::filesystem::path& path, const SampleManifest& m) {
  nlohmann::json j;
  j["meta"] = {{"mode", to_string(m.meta.mode)},
               {"mos_polarity", to_string(m.meta.polarity)},
               {"mos_min", m.meta.mos_min},
               {"mos_max", m.meta.mos_max}};
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je = {{"id", e.id}, {"image_path", e.image_path}, {"mos", e.mos}, {"group_key", e.group_key}};
    if (!e.reference_path.empty()) je["reference_path"] = e.reference_path;
    j["entries"].push_back(je);
  }
  std::ofstream f(path);
  if (!f) throw LoadError(LoadError::Kind::io, "cannot write manifest '" + path.string() + "'");
  f << j.dump(2) << "\n";
}

SampleManifest normalize_mos(const SampleManifest& manifest) {
  const double lo = manifest.meta.mos_min, hi = manifest.meta.mos_max;
  if (!(hi > lo)) throw InputError("MOS range is degenerate; cannot normalize");
  if (manifest.entries.size() > 1 &&
      std::all_of(manifest.entries.begin(), manifest.entries.end(),
                  [&](const ManifestEntry& e) { return e.mos == manifest.entries.front().mos; })) {
    throw InputError("MOS column is constant; cannot normalize");
  }
  SampleManifest out = manifest;
  for (auto& e : out.entries) {
    if (e.mos < lo || e.mos > hi) {
      throw InputError("entry '" + e.id + "': MOS " + std::to_string(e.mos) + " outside [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "]");
    }
    double v = (e.mos - lo) / (hi - lo);
    if (manifest.meta.polarity == MosPolarity::lower_better) v = 1.0 - v;
    e.mos = v;
  }
  out.meta.mos_min = 0.0;
  out.meta.mos_max = 1.0;
  out.meta.polarity = MosPolarity::higher_better;
  return out;
}

std::vector<std::size_t> split_counts(std::size_t n, const std::vector<double>& ratios) {
  if (ratios.size() < 2 || ratios.size() > 3) throw SplitError("split needs 2 or 3 ratios");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw SplitError("split ratios must be finite and non-negative");
    total += r;
  }
  if (!(total > 0.0)) throw SplitError("split ratios sum to zero");
  std::vector<std::size_t> counts(ratios.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double exact = static_cast<double>(n) * ratios[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    rem.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[rem[k % rem.size()].second];
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (ratios[i] > 0.0 && counts[i] == 0) {
      throw SplitError("too few items (" + std::to_string(n) + ") for the requested split ratios");
    }
  }
  return counts;
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw ConfigError("uniform_index over an empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do x = rng(); while (x >= limit);
  return x % n;
}

bool coin_flip(std::mt19937_64& rng) { return (rng() >> 63) != 0; }

DatasetSplit split_dataset(const SampleManifest& manifest, const SplitSpec& spec) {
  if (spec.repeat_index < 0) throw SplitError("repeat index must be non-negative");
  std::mt19937_64 rng(splitmix(spec.seed ^ splitmix(static_cast<std::uint64_t>(spec.repeat_index) + 1)));
  DatasetSplit out;
  std::vector<std::vector<std::size_t>*> parts =
      spec.ratios.size() == 3 ? std::vector{&out.train, &out.val, &out.test} : std::vector{&out.train, &out.test};
  if (manifest.meta.mode == Mode::fr) {
    auto keys = manifest.group_keys();
    if (keys.size() < spec.ratios.size()) {
      throw SplitError("FR split needs at least " + std::to_string(spec.ratios.size()) + " reference groups, found " +
                       std::to_string(keys.size()));
    }
    const auto counts = split_counts(keys.size(), spec.ratios);
    fisher_yates(keys, rng);
    std::map<std::string, std::size_t> part_of;
    std::size_t k = 0;
    for (std::size_t p = 0; p < counts.size(); ++p) {
      for (std::size_t c = 0; c < counts[p]; ++c) part_of[keys[k++]] = p;
    }
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) parts[part_of.at(manifest.entries[i].group_key)]->push_back(i);
  } else {
    std::vector<std::size_t> idx(manifest.entries.size());
    std::iota(idx.begin(), idx.end(), 0);
    const auto counts = split_counts(idx.size(), spec.ratios);
    fisher_yates(idx, rng);
    std::size_t k = 0;
    for (std::size_t p = 0; p < counts.size(); ++p) {
      for (std::size_t c = 0; c < counts[p]; ++c) parts[p]->push_back(idx[k++]);
      std::sort(parts[p]->begin(), parts[p]->end());
    }
  }
  return out;
}

std::mt19937_64 sample_rng(std::uint64_t seed, const std::string& id, std::uint64_t epoch) {
  return std::mt19937_64(splitmix(splitmix(seed) ^ fnv1a(id) ^ splitmix(epoch + 0x51ED)));
}

Image apply_crop(const Image& image, const CropMeta& crop) {
  const std::int64_t s = crop.size;
  if (crop.top < 0 || crop.left < 0 || crop.top + s > image.dim(1) || crop.left + s > image.dim(2)) {
    throw InputError("crop window outside the image");
  }
  const std::int64_t c = image.dim(0);
  Image out(Shape{c, s, s});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < s; ++y) {
      const std::int64_t sy = crop.top + (crop.vflip ? s - 1 - y : y);
      for (std::int64_t x = 0; x < s; ++x) {
        const std::int64_t sx = crop.left + (crop.hflip ? s - 1 - x : x);
        out.at(ch, y, x) = image.at(ch, sy, sx);
      }
    }
  }
  return out;
}

Patch augment_patch(const Image& distorted, const Image* reference, std::int64_t patch_size, std::mt19937_64& rng,
                    bool train, const std::string& source) {
  const std::string where = source.empty() ? std::string("image") : "'" + source + "'";
  if (distorted.rank() != 3) throw InputError(where + ": expected (3,H,W), got " + shape_str(distorted.shape()));
  if (reference && reference->shape() != distorted.shape()) {
    throw InputError(where + ": reference " + shape_str(reference->shape()) + " and distorted " +
                     shape_str(distorted.shape()) + " differ in size");
  }
  const std::int64_t h = distorted.dim(1), w = distorted.dim(2);
  if (h < patch_size || w < patch_size) {
    throw InputError(where + " is " + std::to_string(h) + "x" + std::to_string(w) + ", smaller than the " +
                     std::to_string(patch_size) + " patch");
  }
  Patch p;
  p.crop.size = patch_size;
  if (train) {
    p.crop.top = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(h - patch_size + 1)));
    p.crop.left = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(w - patch_size + 1)));
    p.crop.hflip = coin_flip(rng);
    p.crop.vflip = coin_flip(rng);
  } else {
    p.crop.top = (h - patch_size) / 2;
    p.crop.left = (w - patch_size) / 2;
  }
  p.distorted = apply_crop(distorted, p.crop);
  if (reference) p.reference = apply_crop(*reference, p.crop);
  return p;
}

std::vector<LoadedSample> load_samples(const SampleManifest& manifest, const std::vector<std::size_t>& indices,
                                       std::int64_t resize_to, std::vector<std::string>* warnings) {
  std::map<std::string, Image> ref_cache;
  auto prepare = [&](const std::string& rel) {
    Image img = load_image(manifest.resolve(rel), warnings);
    return resize_to > 0 ? resize_shorter_side(img, resize_to) : img;
  };
  std::vector<LoadedSample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto& e = manifest.entries.at(i);
    LoadedSample s;
    s.id = e.id;
    s.mos = e.mos;
    s.image = prepare(e.image_path);
    if (!e.reference_path.empty()) {
      auto it = ref_cache.find(e.reference_path);
      if (it == ref_cache.end()) it = ref_cache.emplace(e.reference_path, prepare(e.reference_path)).first;
      s.reference = it->second;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bpclip
