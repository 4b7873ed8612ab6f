#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bpclip/error.hpp"

namespace bpclip {

using Shape = std::vector<std::int64_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense row-major array with an explicit shape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    for (auto d : shape_) {
      if (d < 0) throw InputError("negative tensor dimension in " + shape_str(shape_));
    }
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw InputError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty() && shape_.empty(); }

  /// Size of dimension `axis`; negative axes count from the back.
  std::int64_t dim(int axis) const {
    const int r = static_cast<int>(shape_.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw InputError("axis out of range for shape " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(a)];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... Idx>
  T& at(Idx... idx) {
    return data_[offset({static_cast<std::int64_t>(idx)...})];
  }
  template <typename... Idx>
  const T& at(Idx... idx) const {
    return data_[offset({static_cast<std::int64_t>(idx)...})];
  }

  std::size_t offset(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape_.size()) throw InputError("index rank mismatch for " + shape_str(shape_));
    std::size_t off = 0;
    std::size_t i = 0;
    for (auto v : idx) {
      if (v < 0 || v >= shape_[i]) throw InputError("index out of range for " + shape_str(shape_));
      off = off * static_cast<std::size_t>(shape_[i]) + static_cast<std::size_t>(v);
      ++i;
    }
    return off;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw InputError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw InputError("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T m{0};
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace bpclip
