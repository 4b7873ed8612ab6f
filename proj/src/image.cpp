#include "bpclip/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bpclip/error.hpp"

namespace bpclip {
namespace {

// Weight table for one axis: each output index gets a contiguous input range.
struct AxisWeights {
  std::vector<std::int64_t> first;
  std::vector<std::vector<double>> w;
};

AxisWeights axis_weights(std::int64_t in, std::int64_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double fscale = std::max(scale, 1.0);
  const double support = fscale;  // triangle kernel radius 1, stretched when shrinking
  AxisWeights a;
  a.first.resize(static_cast<std::size_t>(out));
  a.w.resize(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * scale;
    std::int64_t lo = static_cast<std::int64_t>(std::floor(center - support + 0.5));
    std::int64_t hi = static_cast<std::int64_t>(std::floor(center + support + 0.5));
    lo = std::max<std::int64_t>(lo, 0);
    hi = std::min<std::int64_t>(hi, in);
    std::vector<double> ws;
    double total = 0.0;
    for (std::int64_t j = lo; j < hi; ++j) {
      const double x = (static_cast<double>(j) + 0.5 - center) / fscale;
      const double v = std::max(0.0, 1.0 - std::abs(x));
      ws.push_back(v);
      total += v;
    }
    if (total <= 0.0) {  // degenerate footprint: nearest sample
      lo = std::clamp<std::int64_t>(static_cast<std::int64_t>(center), 0, in - 1);
      ws.assign(1, 1.0);
      total = 1.0;
    }
    for (double& v : ws) v /= total;
    a.first[static_cast<std::size_t>(o)] = lo;
    a.w[static_cast<std::size_t>(o)] = std::move(ws);
  }
  return a;
}

}  // namespace

Image load_image(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw LoadError(LoadError::Kind::io, "cannot decode image '" + path.string() + "'");
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (warnings && (ext == ".jpg" || ext == ".jpeg")) {
    warnings->push_back("JPEG input '" + path.string() +
                        "': decoder differences can shift scores at the 1e-3 level; prefer PNG/BMP for exact results");
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  const std::int64_t h = rgb.rows, w = rgb.cols;
  Image img(Shape{3, h, w});
  for (std::int64_t y = 0; y < h; ++y) {
    const auto* row = rgb.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(row[x][c]) / 255.0f;
    }
  }
  return img;
}

void save_png(const std::filesystem::path& path, const Image& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1)) {
    throw InputError("save_png expects (3,H,W) or (1,H,W), got " + shape_str(image.shape()));
  }
  const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
  const bool color = image.dim(0) == 3;
  cv::Mat m(h, w, color ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto q = [&](int c) {
        return static_cast<unsigned char>(std::lround(std::clamp(image.at(c, y, x), 0.0f, 1.0f) * 255.0f));
      };
      if (color) {
        m.at<cv::Vec3b>(y, x) = cv::Vec3b(q(2), q(1), q(0));
      } else {
        m.at<unsigned char>(y, x) = q(0);
      }
    }
  }
  if (!cv::imwrite(path.string(), m)) throw LoadError(LoadError::Kind::io, "cannot write '" + path.string() + "'");
}

std::pair<std::int64_t, std::int64_t> shorter_side_dims(std::int64_t height, std::int64_t width, std::int64_t target) {
  if (target < 1) throw InputError("resize target must be at least 1");
  if (height <= 0 || width <= 0) throw InputError("cannot resize a degenerate image");
  const std::int64_t shorter = std::min(height, width);
  const std::int64_t longer = std::max(height, width);
  // round(longer * target / shorter), halves away from zero, in integers
  const std::int64_t scaled = (2 * longer * target + shorter) / (2 * shorter);
  return height <= width ? std::pair{target, scaled} : std::pair{scaled, target};
}

Image resize_bilinear(const Image& image, std::int64_t out_height, std::int64_t out_width) {
  if (image.rank() != 3 || image.dim(1) <= 0 || image.dim(2) <= 0) {
    throw InputError("cannot resize a degenerate image " + shape_str(image.shape()));
  }
  if (out_height <= 0 || out_width <= 0) throw InputError("resize target must be positive");
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_height && w == out_width) return image;
  const auto ax = axis_weights(w, out_width);
  const auto ay = axis_weights(h, out_height);
  std::vector<double> tmp(static_cast<std::size_t>(c * h * out_width));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t ox = 0; ox < out_width; ++ox) {
        const auto& ws = ax.w[static_cast<std::size_t>(ox)];
        const std::int64_t x0 = ax.first[static_cast<std::size_t>(ox)];
        double acc = 0.0;
        for (std::size_t k = 0; k < ws.size(); ++k) acc += ws[k] * image.at(ch, y, x0 + static_cast<std::int64_t>(k));
        tmp[static_cast<std::size_t>((ch * h + y) * out_width + ox)] = acc;
      }
    }
  }
  Image out(Shape{c, out_height, out_width});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t oy = 0; oy < out_height; ++oy) {
      const auto& ws = ay.w[static_cast<std::size_t>(oy)];
      const std::int64_t y0 = ay.first[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < out_width; ++ox) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ws.size(); ++k) {
          acc += ws[k] * tmp[static_cast<std::size_t>((ch * h + y0 + static_cast<std::int64_t>(k)) * out_width + ox)];
        }
        out.at(ch, oy, ox) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Image resize_shorter_side(const Image& image, std::int64_t target) {
  if (image.rank() != 3) throw InputError("expected a (3,H,W) image, got " + shape_str(image.shape()));
  const auto [oh, ow] = shorter_side_dims(image.dim(1), image.dim(2), target);
  return resize_bilinear(image, oh, ow);
}

}  // namespace bpclip
