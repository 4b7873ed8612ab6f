#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bpclip/tensor.hpp"

namespace testing {

inline std::filesystem::path source_dir() { return BPCLIP_SOURCE_DIR; }
inline std::filesystem::path fixture_bank() { return source_dir() / "data" / "text_bank" / "default.bpta"; }

template <typename T = double>
bpclip::Tensor<T> uniform(const bpclip::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  bpclip::Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T = double>
bpclip::Tensor<T> unit_rows(std::int64_t rows, std::int64_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  bpclip::Tensor<T> t(bpclip::Shape{rows, d});
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    std::vector<double> row(static_cast<std::size_t>(d));
    for (auto& v : row) {
      v = n(rng);
      s += v * v;
    }
    for (std::int64_t c = 0; c < d; ++c) t.at(r, c) = static_cast<T>(row[static_cast<std::size_t>(c)] / std::sqrt(s));
  }
  return t;
}

template <typename T>
std::vector<double> as_doubles(const bpclip::Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename T>
double max_abs_diff(const bpclip::Tensor<T>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bpclip_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
