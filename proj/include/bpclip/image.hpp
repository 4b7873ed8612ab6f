#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bpclip/tensor.hpp"

namespace bpclip {

/// Images are (3, H, W) float tensors, RGB, values in [0, 1].
using Image = Tensor<float>;

/// Decodes PNG/BMP/JPEG via OpenCV. JPEG input appends a warning about decoder
/// variance to `warnings` when given. Throws LoadError(io) on failure.
Image load_image(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

/// Writes an 8-bit PNG (values clamped to [0, 1]).
void save_png(const std::filesystem::path& path, const Image& image);

/// Target (height, width) so that the shorter side equals `target`; the longer
/// side is rounded half away from zero.
std::pair<std::int64_t, std::int64_t> shorter_side_dims(std::int64_t height, std::int64_t width, std::int64_t target);

/// Separable bilinear (triangle) resampling with an antialiasing footprint
/// when downscaling.
Image resize_bilinear(const Image& image, std::int64_t out_height, std::int64_t out_width);

Image resize_shorter_side(const Image& image, std::int64_t target = 448);

}  // namespace bpclip
