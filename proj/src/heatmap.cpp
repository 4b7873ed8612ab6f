#include "bpclip/heatmap.hpp"

#include <algorithm>

#include <opencv2/imgproc.hpp>

namespace bpclip {

std::vector<AttentionMap> attention_maps(const FusedFeatures<float>& fused, std::int64_t grid_h, std::int64_t grid_w,
                                         std::int64_t item) {
  std::vector<AttentionMap> info, weight;
  const std::int64_t L = grid_h * grid_w;
  for (int b = 1; b <= kNumFusedLevels; ++b) {
    const std::size_t i = static_cast<std::size_t>(b - 1);
    const Tensor<float>& probs = fused.info_probs[i];
    if (probs.rank() != 4 || probs.dim(2) != L || probs.dim(3) != L) {
      throw InputError("attention probabilities do not match the " + std::to_string(grid_h) + "x" +
                       std::to_string(grid_w) + " grid");
    }
    if (!fused.gates[i].defined()) throw ConfigError("weight-branch maps need the dual-branch configuration");
    if (item < 0 || item >= probs.dim(0)) throw InputError("batch item out of range");

    AttentionMap mi{b, "info", Tensor<float>(Shape{grid_h, grid_w})};
    const std::int64_t heads = probs.dim(1);
    std::vector<double> acc(static_cast<std::size_t>(L), 0.0);
    for (std::int64_t h = 0; h < heads; ++h) {
      for (std::int64_t q = 0; q < L; ++q) {
        for (std::int64_t k = 0; k < L; ++k) acc[static_cast<std::size_t>(k)] += probs.at(item, h, q, k);
      }
    }
    for (std::int64_t k = 0; k < L; ++k) mi.values[k] = static_cast<float>(acc[static_cast<std::size_t>(k)] / (heads * L));
    info.push_back(std::move(mi));

    const Tensor<float>& gate = fused.gates[i].value();  // (B, L, D)
    AttentionMap mw{b, "weight", Tensor<float>(Shape{grid_h, grid_w})};
    const std::int64_t d = gate.dim(2);
    for (std::int64_t p = 0; p < L; ++p) {
      double s = 0.0;
      for (std::int64_t c = 0; c < d; ++c) s += gate.at(item, p, c);
      mw.values[p] = static_cast<float>(s / d);
    }
    weight.push_back(std::move(mw));
  }
  info.insert(info.end(), weight.begin(), weight.end());
  return info;
}

Image render_heatmap(const Tensor<float>& map, std::int64_t height, std::int64_t width) {
  if (map.rank() != 2) throw InputError("heatmap must be 2-D");
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const float range = *hi - *lo;
  const int gh = static_cast<int>(map.dim(0)), gw = static_cast<int>(map.dim(1));
  cv::Mat gray(gh, gw, CV_32FC1);
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) gray.at<float>(y, x) = range > 0 ? (map.at(y, x) - *lo) / range : 0.0f;
  }
  cv::Mat up;
  cv::resize(gray, up, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_LINEAR);
  cv::Mat u8, color;
  up.convertTo(u8, CV_8UC1, 255.0);
  cv::applyColorMap(u8, color, cv::COLORMAP_JET);
  Image out(Shape{3, height, width});
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      const auto px = color.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = px[2 - c] / 255.0f;
    }
  }
  return out;
}

std::vector<std::filesystem::path> write_attention_maps(const std::vector<AttentionMap>& maps,
                                                        const std::filesystem::path& dir, std::int64_t height,
                                                        std::int64_t width) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  for (const auto& m : maps) {
    const auto p = dir / m.file_name();
    save_png(p, render_heatmap(m.values, height, width));
    out.push_back(p);
  }
  return out;
}

}  // namespace bpclip
