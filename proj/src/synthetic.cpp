#include "bpclip/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <opencv2/imgproc.hpp>

namespace bpclip {
namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double gaussian(std::mt19937_64& rng) {
  // Box-Muller on the raw stream keeps the output library-independent.
  const double u1 = std::max(unit(rng), 1e-300), u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Image reference_pattern(std::int64_t size, std::mt19937_64& rng) {
  Image img(Shape{3, size, size});
  struct Wave {
    double fx, fy, phase, amp[3];
  };
  std::vector<Wave> waves(4);
  for (auto& w : waves) {
    w.fx = 1.0 + 5.0 * unit(rng);
    w.fy = 1.0 + 5.0 * unit(rng);
    w.phase = 2.0 * std::numbers::pi * unit(rng);
    for (double& a : w.amp) a = 0.1 + 0.15 * unit(rng);
  }
  const double cx = size * (0.3 + 0.4 * unit(rng)), cy = size * (0.3 + 0.4 * unit(rng));
  const double radius = size * (0.15 + 0.15 * unit(rng));
  double base[3];
  for (double& b : base) b = 0.3 + 0.4 * unit(rng);
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) / size, v = static_cast<double>(y) / size;
      const bool disk = std::hypot(x - cx, y - cy) < radius;
      for (int c = 0; c < 3; ++c) {
        double val = base[c];
        for (const auto& w : waves) val += w.amp[c] * std::sin(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
        if (disk) val = 1.0 - val;
        img.at(c, y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return img;
}

Image degrade(const Image& ref, double severity, std::mt19937_64& rng) {
  const int h = static_cast<int>(ref.dim(1)), w = static_cast<int>(ref.dim(2));
  cv::Mat m(h, w, CV_32FC3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) m.at<cv::Vec3f>(y, x)[c] = ref.at(c, y, x);
    }
  }
  const double sigma = 0.3 + 2.5 * severity;
  cv::GaussianBlur(m, m, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  const double noise = 0.12 * severity;
  Image out(ref.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = m.at<cv::Vec3f>(y, x)[c] + noise * gaussian(rng);
        out.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace

std::vector<LoadedSample> make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_references < 1 || spec.per_reference < 1 || spec.size < 1) {
    throw ConfigError("synthetic dataset needs positive counts and size");
  }
  std::mt19937_64 rng(spec.seed);
  const int n = spec.num_references * spec.per_reference;
  // Severities spread evenly over (0, 1]; interleaved so each reference spans the range.
  std::vector<LoadedSample> out;
  for (int r = 0; r < spec.num_references; ++r) {
    const Image ref = reference_pattern(spec.size, rng);
    for (int k = 0; k < spec.per_reference; ++k) {
      const int rank = k * spec.num_references + r;
      const double severity = static_cast<double>(rank + 1) / n;
      LoadedSample s;
      s.id = "ref" + std::to_string(r) + "_d" + std::to_string(k);
      s.image = degrade(ref, severity, rng);
      if (spec.mode == Mode::fr) s.reference = ref;
      s.mos = 1.0 - severity;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::filesystem::path write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  const auto samples = make_synthetic(spec);
  SampleManifest m;
  m.meta.mode = spec.mode;
  m.meta.mos_min = 0.0;
  m.meta.mos_max = 1.0;
  std::ofstream csv(dir / "manifest.csv");
  csv << "id,image_path,reference_path,mos,group_key\n";
  for (const auto& s : samples) {
    ManifestEntry e;
    e.id = s.id;
    e.image_path = "images/" + s.id + ".png";
    save_png(dir / e.image_path, s.image);
    const std::string group = s.id.substr(0, s.id.find('_'));
    if (spec.mode == Mode::fr) {
      e.reference_path = "images/" + group + ".png";
      if (!std::filesystem::exists(dir / e.reference_path)) save_png(dir / e.reference_path, s.reference);
      e.group_key = group;
    } else {
      e.group_key = e.id;
    }
    e.mos = s.mos;
    csv << e.id << "," << e.image_path << "," << e.reference_path << "," << e.mos << "," << e.group_key << "\n";
    m.entries.push_back(e);
  }
  const auto path = dir / "manifest.json";
  save_manifest_json(path, m);
  return path;
}

}  // namespace bpclip
