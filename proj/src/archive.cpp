#include "bpclip/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

static_assert(std::endian::native == std::endian::little, "tensor archives assume a little-endian host");

namespace bpclip {
namespace {

constexpr char kMagic[4] = {'B', 'P', 'T', 'A'};
constexpr std::size_t kPrefixSize = 4 + 4 + 8;

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return DType::f32;
  } else {
    static_assert(std::is_same_v<T, double>);
    return DType::f64;
  }
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw LoadError(LoadError::Kind::format, "unsupported dtype '" + s + "'");
}

template <typename Int>
void append_le(std::vector<std::uint8_t>& out, Int v) {
  for (std::size_t i = 0; i < sizeof(Int); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename Int>
Int read_le(const std::uint8_t* p) {
  Int v = 0;
  for (std::size_t i = 0; i < sizeof(Int); ++i) v |= static_cast<Int>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::string dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
void TensorArchive::put(const std::string& name, const Tensor<T>& tensor) {
  if (name.empty() || name == "__metadata__") throw ConfigError("invalid archive tensor name '" + name + "'");
  Item it{dtype_of<T>(), tensor.shape(), {}};
  it.bytes.resize(tensor.numel() * sizeof(T));
  if (!it.bytes.empty()) std::memcpy(it.bytes.data(), tensor.ptr(), it.bytes.size());
  items_[name] = std::move(it);
}

const TensorArchive::Item& TensorArchive::item(const std::string& name) const {
  auto it = items_.find(name);
  if (it == items_.end()) throw LoadError(LoadError::Kind::missing_tensor, "archive has no tensor '" + name + "'");
  return it->second;
}

template <typename T>
Tensor<T> TensorArchive::get(const std::string& name) const {
  const Item& it = item(name);
  const std::size_t n = shape_numel(it.shape);
  if (it.dtype == DType::f32) {
    std::vector<float> v(n);
    if (n) std::memcpy(v.data(), it.bytes.data(), n * sizeof(float));
    return Tensor<float>(it.shape, std::move(v)).template cast<T>();
  }
  std::vector<double> v(n);
  if (n) std::memcpy(v.data(), it.bytes.data(), n * sizeof(double));
  return Tensor<double>(it.shape, std::move(v)).template cast<T>();
}

DType TensorArchive::dtype(const std::string& name) const { return item(name).dtype; }
Shape TensorArchive::shape(const std::string& name) const { return item(name).shape; }

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : items_) out.push_back(k);
  return out;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, it] : items_) {
    header[name] = {{"dtype", dtype_name(it.dtype)},
                    {"shape", it.shape},
                    {"offset", offset},
                    {"byte_len", it.bytes.size()}};
    offset += it.bytes.size();
  }
  if (!metadata_.empty()) header["__metadata__"] = metadata_;
  const std::string hs = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPrefixSize + hs.size() + offset + 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  append_le<std::uint32_t>(out, kArchiveVersion);
  append_le<std::uint64_t>(out, hs.size());
  out.insert(out.end(), hs.begin(), hs.end());
  const std::size_t payload_start = out.size();
  for (const auto& [name, it] : items_) out.insert(out.end(), it.bytes.begin(), it.bytes.end());
  const std::uint32_t crc = crc32(std::span(out).subspan(payload_start));
  append_le<std::uint32_t>(out, crc);
  return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  using K = LoadError::Kind;
  if (bytes.size() < kPrefixSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw LoadError(K::format, "not a tensor archive (bad magic)");
  }
  const auto version = read_le<std::uint32_t>(bytes.data() + 4);
  if (version != kArchiveVersion) {
    throw LoadError(K::format, "unsupported tensor archive version " + std::to_string(version));
  }
  const auto hlen = read_le<std::uint64_t>(bytes.data() + 8);
  if (hlen > bytes.size() || kPrefixSize + hlen + 4 > bytes.size()) {
    throw LoadError(K::checksum, "tensor archive truncated: checksum region missing");
  }
  const std::size_t payload_start = kPrefixSize + hlen;
  const std::size_t payload_end = bytes.size() - 4;
  const auto stored_crc = read_le<std::uint32_t>(bytes.data() + payload_end);
  const auto payload = bytes.subspan(payload_start, payload_end - payload_start);
  if (crc32(payload) != stored_crc) {
    throw LoadError(K::checksum, "tensor archive checksum mismatch (corrupted or truncated payload)");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPrefixSize, bytes.begin() + payload_start);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(K::format, std::string("tensor archive header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw LoadError(K::format, "tensor archive header must be a JSON object");

  TensorArchive ar;
  for (const auto& [name, desc] : header.items()) {
    if (name == "__metadata__") {
      ar.metadata_ = desc;
      continue;
    }
    try {
      Item it{parse_dtype(desc.at("dtype").get<std::string>()), desc.at("shape").get<Shape>(), {}};
      const auto off = desc.at("offset").get<std::uint64_t>();
      const auto len = desc.at("byte_len").get<std::uint64_t>();
      if (len != shape_numel(it.shape) * dtype_size(it.dtype)) {
        throw LoadError(K::format, "tensor '" + name + "' byte_len does not match dtype and shape");
      }
      if (off > payload.size() || len > payload.size() - off) {
        throw LoadError(K::format, "tensor '" + name + "' extends past the payload region");
      }
      it.bytes.assign(payload.begin() + off, payload.begin() + off + len);
      ar.items_.emplace(name, std::move(it));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(K::format, "malformed header entry '" + name + "': " + e.what());
    }
  }
  return ar;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError(LoadError::Kind::io, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw LoadError(LoadError::Kind::io, "failed writing '" + path.string() + "'");
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError(LoadError::Kind::io, "cannot open tensor archive '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

template <typename T>
TensorArchive to_archive(const ParameterSet<T>& params) {
  TensorArchive ar;
  nlohmann::json frozen = nlohmann::json::array();
  for (const auto& [name, e] : params.entries()) {
    ar.put(name, e.value);
    if (!e.trainable) frozen.push_back(name);
  }
  ar.metadata()["frozen"] = frozen;
  return ar;
}

template <typename T>
ParameterSet<T> parameters_from_archive(const TensorArchive& archive) {
  std::vector<std::string> frozen;
  if (archive.metadata().contains("frozen")) frozen = archive.metadata()["frozen"].get<std::vector<std::string>>();
  ParameterSet<T> out;
  for (const auto& name : archive.names()) {
    const bool is_frozen = std::find(frozen.begin(), frozen.end(), name) != frozen.end();
    out.add(name, archive.get<T>(name), !is_frozen);
  }
  return out;
}

template <typename T>
void save_parameter_archive(const std::filesystem::path& path, const ParameterSet<T>& params) {
  to_archive(params).save(path);
}

template <typename T>
ParameterSet<T> load_parameter_archive(const std::filesystem::path& path) {
  return parameters_from_archive<T>(TensorArchive::load(path));
}

template <typename T>
ParameterSet<T> load_parameter_archive(const std::filesystem::path& path, const ParameterSet<T>& expected) {
  const auto archive = TensorArchive::load(path);
  std::vector<std::string> frozen;
  if (archive.metadata().contains("frozen")) frozen = archive.metadata()["frozen"].get<std::vector<std::string>>();
  ParameterSet<T> out;
  for (const auto& [name, e] : expected.entries()) {
    if (!archive.contains(name)) {
      throw LoadError(LoadError::Kind::missing_tensor, "archive '" + path.string() + "' lacks tensor '" + name + "'");
    }
    if (archive.shape(name) != e.value.shape()) {
      throw LoadError(LoadError::Kind::shape_mismatch, "tensor '" + name + "' has shape " +
                                                           shape_str(archive.shape(name)) + ", expected " +
                                                           shape_str(e.value.shape()));
    }
    const bool is_frozen = std::find(frozen.begin(), frozen.end(), name) != frozen.end();
    out.add(name, archive.get<T>(name), e.trainable && !is_frozen);
  }
  return out;
}

#define BPCLIP_INSTANTIATE_ARCHIVE(T)                                                          \
  template void TensorArchive::put(const std::string&, const Tensor<T>&);                      \
  template Tensor<T> TensorArchive::get(const std::string&) const;                             \
  template TensorArchive to_archive(const ParameterSet<T>&);                                   \
  template ParameterSet<T> parameters_from_archive(const TensorArchive&);                      \
  template void save_parameter_archive(const std::filesystem::path&, const ParameterSet<T>&);  \
  template ParameterSet<T> load_parameter_archive(const std::filesystem::path&);               \
  template ParameterSet<T> load_parameter_archive(const std::filesystem::path&, const ParameterSet<T>&);

BPCLIP_INSTANTIATE_ARCHIVE(float)
BPCLIP_INSTANTIATE_ARCHIVE(double)

}  // namespace bpclip
