#include "crcfp/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace crcfp {
namespace {

enum class Texture { kStripes, kDots, kBright };

Texture texture_of(int cls) {
  switch ((cls - 1) % 3) {
    case 0:
      return Texture::kStripes;
    case 1:
      return Texture::kDots;
    default:
      return Texture::kBright;
  }
}

// Smooth random field in roughly [-1, 1] from a few random cosines.
class SmoothField {
 public:
  SmoothField(Rng& rng, int waves, double max_freq) {
    for (int i = 0; i < waves; ++i) {
      const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double freq = uniform(rng, 0.2, 1.0) * max_freq;
      waves_.push_back({freq * std::cos(angle), freq * std::sin(angle),
                        uniform(rng, 0.0, 2.0 * std::numbers::pi)});
    }
  }
  double operator()(double y, double x) const {
    double s = 0.0;
    for (const Wave& w : waves_) s += std::cos(w.fy * y + w.fx * x + w.phase);
    return waves_.empty() ? 0.0 : s / std::sqrt(static_cast<double>(waves_.size()));
  }

 private:
  struct Wave {
    double fy, fx, phase;
  };
  std::vector<Wave> waves_;
};

struct Blob {
  double cy, cx, radius;
  std::vector<double> harmonics;  // amplitude, phase pairs
  int cls;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double theta = std::atan2(dy, dx);
    double r = radius;
    for (std::size_t k = 0; k + 1 < harmonics.size(); k += 2) {
      r += harmonics[k] * radius * std::cos((k / 2 + 2) * theta + harmonics[k + 1]);
    }
    return dy * dy + dx * dx <= r * r;
  }
};

}  // namespace

std::vector<std::string> toy_class_names(int classes) {
  std::vector<std::string> names{"background"};
  for (int c = 1; c < classes; ++c) {
    const char* base = texture_of(c) == Texture::kStripes ? "striped"
                       : texture_of(c) == Texture::kDots  ? "dotted"
                                                          : "bright";
    names.push_back(std::string(base) + (c > 3 ? std::to_string((c - 1) / 3 + 1) : ""));
  }
  return names;
}

std::vector<double> toy_center_shift(const ToyCorpusOptions& options, int center) {
  const double theta = 2.0 * std::numbers::pi * center / std::max(1, options.centers);
  const double a = options.color_shift * std::cos(theta);
  const double b = options.color_shift * std::sin(theta);
  // Orthonormal basis of the plane orthogonal to grey.
  const double u1[3] = {1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0), 0.0};
  const double u2[3] = {1.0 / std::sqrt(6.0), 1.0 / std::sqrt(6.0), -2.0 / std::sqrt(6.0)};
  return {a * u1[0] + b * u2[0], a * u1[1] + b * u2[1], a * u1[2] + b * u2[2]};
}

Sample generate_toy_sample(const ToyCorpusOptions& options, int center, std::uint64_t index) {
  if (options.classes < 2) throw Error("toy corpus needs at least two classes");
  if (options.size < 16) throw Error("toy corpus images must be at least 16 pixels wide");
  Rng rng = derive_rng(options.seed, {0x70, index});
  const int s = options.size;
  const double scale = s / 96.0;

  const SmoothField background(rng, 6, 0.08 / scale);
  const double bg_level = uniform(rng, 0.62, 0.72);

  std::vector<Blob> blobs;
  const int count = std::uniform_int_distribution<int>(3, 6)(rng);
  for (int i = 0; i < count; ++i) {
    Blob b;
    b.cy = uniform(rng, 0.0, s);
    b.cx = uniform(rng, 0.0, s);
    b.radius = uniform(rng, 9.0, 22.0) * scale;
    for (int k = 0; k < 3; ++k) {
      b.harmonics.push_back(uniform(rng, 0.0, 0.18));
      b.harmonics.push_back(uniform(rng, 0.0, 2.0 * std::numbers::pi));
    }
    b.cls = std::uniform_int_distribution<int>(1, options.classes - 1)(rng);
    blobs.push_back(std::move(b));
  }
  // Per-blob texture parameters.
  struct Style {
    double angle, period, phase, contrast;
    std::vector<std::pair<double, double>> dots;
  };
  std::vector<Style> styles;
  for (const Blob& b : blobs) {
    Style st;
    const int variant = (b.cls - 1) / 3;
    st.angle = uniform(rng, 0.0, std::numbers::pi);
    st.period = (4.0 + 2.0 * variant) * scale * uniform(rng, 0.9, 1.1);
    st.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    st.contrast = uniform(rng, 0.8, 1.0);
    if (texture_of(b.cls) == Texture::kDots) {
      const int dots = static_cast<int>(b.radius * b.radius / (3.0 * scale * scale));
      for (int d = 0; d < dots; ++d) {
        st.dots.emplace_back(b.cy + uniform(rng, -1.3, 1.3) * b.radius,
                             b.cx + uniform(rng, -1.3, 1.3) * b.radius);
      }
    }
    styles.push_back(std::move(st));
  }

  const std::vector<double> shift = toy_center_shift(options, center);
  // Tissue-like tint shared by all classes; luminance carries the texture.
  const double tint[3] = {1.0, 0.82, 0.95};
  const double dark_tint[3] = {0.55, 0.35, 0.7};
  std::normal_distribution<double> noise(0.0, options.pixel_noise);

  Tensor image(Shape{1, s, s, 3});
  LabelMap mask(1, s, s);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      const double bg = bg_level + 0.08 * background(py, px);
      double level = bg;
      double darkness = 0.0;
      int cls = 0;
      for (std::size_t i = 0; i < blobs.size(); ++i) {
        if (!blobs[i].contains(py, px)) continue;
        const Blob& b = blobs[i];
        const Style& st = styles[i];
        cls = b.cls;
        switch (texture_of(b.cls)) {
          case Texture::kStripes: {
            const double u = std::cos(st.angle) * py + std::sin(st.angle) * px;
            const double wave = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * u / st.period + st.phase);
            level = bg - 0.05;
            darkness = st.contrast * 0.55 * wave;
            break;
          }
          case Texture::kDots: {
            double near = 0.0;
            const double rad = 1.6 * scale * (1.0 + 0.4 * ((b.cls - 1) / 3));
            for (const auto& [dy, dx] : st.dots) {
              const double d2 = (py - dy) * (py - dy) + (px - dx) * (px - dx);
              near = std::max(near, std::exp(-d2 / (2.0 * rad * rad)));
            }
            level = bg - 0.08;
            darkness = st.contrast * 0.6 * near;
            break;
          }
          case Texture::kBright:
            level = bg + 0.13 * st.contrast;
            darkness = 0.0;
            break;
        }
      }
      mask.labels[static_cast<std::size_t>(y) * s + x] = cls;
      for (int c = 0; c < 3; ++c) {
        const double base = level * tint[c];
        const double v = base * (1.0 - darkness) + darkness * dark_tint[c] * level + shift[c] + noise(rng);
        image.at(0, y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  Sample sample;
  sample.image = std::move(image);
  sample.mask = std::move(mask);
  sample.center_id = "center_" + std::to_string(center);
  return sample;
}

ToyCorpus generate_toy_corpus(const std::filesystem::path& out_dir, const ToyCorpusOptions& options) {
  if (options.images < 1 || options.centers < 1) throw Error("toy corpus: nothing to generate");
  ToyCorpus corpus;
  corpus.class_names = toy_class_names(options.classes);
  auto write_split = [&](const std::filesystem::path& dir, const char* prefix, int count,
                         std::uint64_t offset) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    Manifest manifest;
    manifest.classes = options.classes;
    for (int i = 0; i < count; ++i) {
      const int center = i % options.centers;
      const Sample s = generate_toy_sample(options, center, offset + static_cast<std::uint64_t>(i));
      char name[32];
      std::snprintf(name, sizeof(name), "%s_%04d.png", prefix, i);
      write_image(dir / "images" / name, s.image);
      write_mask(dir / "masks" / name, *s.mask);
      manifest.entries.push_back({std::string("images/") + name, std::string("masks/") + name,
                                  s.center_id});
    }
    manifest.save(dir / "manifest.yaml");
    return dir / "manifest.yaml";
  };
  corpus.manifest = write_split(out_dir, "toy", options.images, 0);
  corpus.test_manifest = write_split(out_dir / "test", "test", options.test_images, 1'000'000);
  return corpus;
}

}  // namespace crcfp
