#pragma once

// Tensor archive ("BPTA") container.
//
// Layout, all integers little-endian:
//   "BPTA" | u32 version | u64 header length | JSON header | payloads | u32 CRC32(payloads)
// The header maps each tensor name to {dtype, shape, offset, byte_len}, with
// offsets relative to the start of the payload region. An optional
// "__metadata__" object carries free-form JSON (frozen flags, configs).

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bpclip/parameters.hpp"
#include "bpclip/tensor.hpp"

namespace bpclip {

enum class DType { f32, f64 };

std::string dtype_name(DType d);

inline constexpr std::uint32_t kArchiveVersion = 1;

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

class TensorArchive {
 public:
  template <typename T>
  void put(const std::string& name, const Tensor<T>& tensor);

  /// Reads `name`, converting to T if stored in the other precision.
  /// Throws LoadError(missing_tensor) when absent.
  template <typename T>
  Tensor<T> get(const std::string& name) const;

  bool contains(const std::string& name) const { return items_.count(name) != 0; }
  DType dtype(const std::string& name) const;
  Shape shape(const std::string& name) const;
  std::vector<std::string> names() const;

  nlohmann::json& metadata() noexcept { return metadata_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  struct Item {
    DType dtype;
    Shape shape;
    std::vector<std::uint8_t> bytes;
  };
  const Item& item(const std::string& name) const;

  std::map<std::string, Item> items_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

/// Stores every entry plus the list of frozen names under metadata "frozen".
template <typename T>
TensorArchive to_archive(const ParameterSet<T>& params);

template <typename T>
ParameterSet<T> parameters_from_archive(const TensorArchive& archive);

template <typename T>
void save_parameter_archive(const std::filesystem::path& path, const ParameterSet<T>& params);

/// Loads every tensor in the archive (CRC verified).
template <typename T>
ParameterSet<T> load_parameter_archive(const std::filesystem::path& path);

/// Loads and validates against an expected layout: every expected name must be
/// present (LoadError missing_tensor) with the expected shape (LoadError
/// shape_mismatch). Trainable flags follow `expected` unless the archive marks
/// an entry frozen. Extra archive entries are ignored.
template <typename T>
ParameterSet<T> load_parameter_archive(const std::filesystem::path& path, const ParameterSet<T>& expected);

}  // namespace bpclip
