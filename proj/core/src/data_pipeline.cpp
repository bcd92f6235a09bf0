#include "crcfp/data_pipeline.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <opencv2/imgcodecs.hpp>
#include <set>

#include "crcfp/ops.hpp"

namespace crcfp {
namespace fs = std::filesystem;

Fraction Fraction::parse(const std::string& text) {
  Fraction f;
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) {
      f.num = std::stoi(text);
      f.den = 1;
    } else {
      f.num = std::stoi(text.substr(0, slash));
      f.den = std::stoi(text.substr(slash + 1));
    }
  } catch (const std::exception&) {
    throw Error("invalid label fraction '" + text + "'");
  }
  static const std::set<int> kDenominators{1, 2, 4, 8, 16, 32};
  if (f.num != 1 || !kDenominators.contains(f.den)) {
    throw Error("unsupported label fraction '" + text +
                "' (expected 1, 1/2, 1/4, 1/8, 1/16 or 1/32)");
  }
  return f;
}

std::string Fraction::str() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

// --- manifest ---------------------------------------------------------------

Manifest Manifest::load(const fs::path& file) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(file.string());
  } catch (const YAML::Exception& e) {
    throw Error("cannot read manifest " + file.string() + ": " + e.what());
  }
  Manifest m;
  if (!root["classes"]) throw Error("manifest " + file.string() + " lacks 'classes'");
  m.classes = root["classes"].as<int>();
  if (m.classes < 1) throw Error("manifest: classes must be positive");
  if (root["ignore_index"]) m.ignore_index = root["ignore_index"].as<int>();
  if (root["ignored_classes"]) m.ignored_classes = root["ignored_classes"].as<std::vector<int>>();
  if (const YAML::Node entries = root["entries"]) {
    for (const YAML::Node& e : entries) {
      Entry entry;
      if (!e["path"]) throw Error("manifest entry without 'path' in " + file.string());
      entry.path = e["path"].as<std::string>();
      if (e["mask_path"]) entry.mask_path = e["mask_path"].as<std::string>();
      if (e["center_id"]) entry.center_id = e["center_id"].as<std::string>();
      m.entries.push_back(std::move(entry));
    }
  }
  return m;
}

void Manifest::save(const fs::path& file) const {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "classes" << YAML::Value << classes;
  out << YAML::Key << "ignore_index" << YAML::Value << ignore_index;
  if (!ignored_classes.empty()) {
    out << YAML::Key << "ignored_classes" << YAML::Value << YAML::Flow << ignored_classes;
  }
  out << YAML::Key << "entries" << YAML::Value << YAML::BeginSeq;
  for (const Entry& e : entries) {
    out << YAML::BeginMap;
    out << YAML::Key << "path" << YAML::Value << e.path;
    if (e.mask_path) out << YAML::Key << "mask_path" << YAML::Value << *e.mask_path;
    if (e.center_id) out << YAML::Key << "center_id" << YAML::Value << *e.center_id;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  std::ofstream f(file);
  if (!f) throw Error("cannot write manifest " + file.string());
  f << out.c_str() << "\n";
}

// --- raster I/O -------------------------------------------------------------

Tensor read_image(const fs::path& file) {
  cv::Mat m = cv::imread(file.string(), cv::IMREAD_COLOR | cv::IMREAD_ANYDEPTH);
  if (m.empty()) throw Error("cannot read image " + file.string());
  const double scale = m.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  cv::Mat f;
  m.convertTo(f, CV_64FC3, scale);
  Tensor t(Shape{1, f.rows, f.cols, 3});
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3d>(y);
    for (int x = 0; x < f.cols; ++x) {
      // OpenCV stores BGR.
      t.at(0, y, x, 0) = row[x][2];
      t.at(0, y, x, 1) = row[x][1];
      t.at(0, y, x, 2) = row[x][0];
    }
  }
  return t;
}

LabelMap read_mask(const fs::path& file) {
  cv::Mat m = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw Error("cannot read mask " + file.string());
  if (m.channels() != 1) throw Error("mask " + file.string() + " is not single-channel");
  cv::Mat i;
  m.convertTo(i, CV_32S);
  LabelMap out(1, i.rows, i.cols);
  for (int y = 0; y < i.rows; ++y) {
    const int* row = i.ptr<int>(y);
    std::copy(row, row + i.cols, out.labels.begin() + out.index(0, y, 0));
  }
  return out;
}

void write_image(const fs::path& file, const Tensor& image) {
  if (image.n() != 1 || (image.c() != 3 && image.c() != 1)) {
    throw Error("write_image expects {1,H,W,3} or {1,H,W,1}, got " + image.shape().str());
  }
  cv::Mat m(image.h(), image.w(), image.c() == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < image.h(); ++y) {
    for (int x = 0; x < image.w(); ++x) {
      auto to8 = [](double v) {
        return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      };
      if (image.c() == 3) {
        m.at<cv::Vec3b>(y, x) = cv::Vec3b(to8(image.at(0, y, x, 2)), to8(image.at(0, y, x, 1)),
                                          to8(image.at(0, y, x, 0)));
      } else {
        m.at<unsigned char>(y, x) = to8(image.at(0, y, x, 0));
      }
    }
  }
  if (!cv::imwrite(file.string(), m)) throw Error("cannot write image " + file.string());
}

void write_mask(const fs::path& file, const LabelMap& mask) {
  if (mask.n != 1) throw Error("write_mask expects a single mask");
  const int max_label = mask.labels.empty()
                            ? 0
                            : *std::max_element(mask.labels.begin(), mask.labels.end());
  const bool wide = max_label > 255;
  cv::Mat m(mask.h, mask.w, wide ? CV_16UC1 : CV_8UC1);
  for (int y = 0; y < mask.h; ++y) {
    for (int x = 0; x < mask.w; ++x) {
      const int v = mask.at(0, y, x);
      if (v < 0) throw Error("write_mask: negative label");
      if (wide) {
        m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
      } else {
        m.at<unsigned char>(y, x) = static_cast<unsigned char>(v);
      }
    }
  }
  if (!cv::imwrite(file.string(), m)) throw Error("cannot write mask " + file.string());
}

// --- corpus -----------------------------------------------------------------

std::vector<Sample> load_corpus(const fs::path& root, const Manifest& manifest) {
  std::vector<Sample> samples;
  samples.reserve(manifest.entries.size());
  const std::set<int> ignored(manifest.ignored_classes.begin(), manifest.ignored_classes.end());
  for (const Manifest::Entry& e : manifest.entries) {
    const fs::path image_path = root / e.path;
    Sample s;
    s.image = read_image(image_path);
    s.source_id = fs::path(e.path).stem().string();
    s.center_id = e.center_id;
    if (e.mask_path) {
      const fs::path mask_path = root / *e.mask_path;
      if (!fs::exists(mask_path)) {
        throw Error("missing mask " + mask_path.string() + " for labelled entry " + e.path);
      }
      LabelMap mask = read_mask(mask_path);
      if (mask.h != s.image.h() || mask.w != s.image.w()) {
        throw Error("mask " + mask_path.string() + " does not match image size");
      }
      for (int& v : mask.labels) {
        if (v == manifest.ignore_index) continue;
        if (v < 0 || v >= manifest.classes) {
          throw Error("mask " + mask_path.string() + " contains label " + std::to_string(v) +
                      " outside [0, " + std::to_string(manifest.classes) + ")");
        }
        if (ignored.contains(v)) v = manifest.ignore_index;
      }
      s.mask = std::move(mask);
    }
    samples.push_back(std::move(s));
  }
  std::stable_sort(samples.begin(), samples.end(),
                   [](const Sample& a, const Sample& b) { return a.source_id < b.source_id; });
  return samples;
}

std::vector<Sample> load_corpus(const fs::path& manifest_file) {
  return load_corpus(manifest_file.parent_path(), Manifest::load(manifest_file));
}

SplitResult split_labeled(std::vector<Sample> samples, const SplitSpec& spec) {
  std::sort(samples.begin(), samples.end(),
            [](const Sample& a, const Sample& b) { return a.source_id < b.source_id; });
  Rng rng = derive_rng(spec.seed, Stream::kSplit);
  std::vector<bool> chosen(samples.size(), false);

  if (spec.mode == SplitMode::kByCenter) {
    std::set<std::string> center_set;
    for (const Sample& s : samples) {
      if (!s.center_id) throw Error("by_center split requires center_id on " + s.source_id);
      if (s.labeled()) center_set.insert(*s.center_id);
    }
    std::vector<std::string> centers(center_set.begin(), center_set.end());
    std::shuffle(centers.begin(), centers.end(), rng);
    // 1/8 of 14 centres selects a single centre, so round down (at least one).
    const std::size_t take = std::max<std::size_t>(
        centers.empty() ? 0 : 1,
        centers.size() * static_cast<std::size_t>(spec.fraction.num) / spec.fraction.den);
    const std::set<std::string> picked(centers.begin(),
                                       centers.begin() + static_cast<std::ptrdiff_t>(take));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      chosen[i] = samples[i].labeled() && picked.contains(*samples[i].center_id);
    }
  } else {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].labeled()) candidates.push_back(i);
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    const std::size_t n = candidates.size();
    const std::size_t take =
        (n * static_cast<std::size_t>(spec.fraction.num) + spec.fraction.den - 1) / spec.fraction.den;
    for (std::size_t k = 0; k < take; ++k) chosen[candidates[k]] = true;
  }

  SplitResult result;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (chosen[i]) {
      result.labeled.push_back(std::move(samples[i]));
    } else {
      samples[i].mask.reset();
      result.unlabeled.push_back(std::move(samples[i]));
    }
  }
  if (result.labeled.empty()) {
    throw Error("label fraction " + spec.fraction.str() + " selects no labelled samples");
  }
  return result;
}

// --- crops ------------------------------------------------------------------

Tensor crop(const Tensor& image, int x, int y, int width, int height) {
  if (x < 0 || y < 0 || width <= 0 || height <= 0 || x + width > image.w() ||
      y + height > image.h()) {
    throw Error("crop window outside image");
  }
  Tensor out(Shape{image.n(), height, width, image.c()});
  for (int b = 0; b < image.n(); ++b) {
    for (int r = 0; r < height; ++r) {
      std::copy_n(image.pixel(b, y + r, x), static_cast<std::size_t>(width) * image.c(),
                  out.pixel(b, r, 0));
    }
  }
  return out;
}

LabelMap crop(const LabelMap& mask, int x, int y, int width, int height) {
  if (x < 0 || y < 0 || width <= 0 || height <= 0 || x + width > mask.w || y + height > mask.h) {
    throw Error("crop window outside mask");
  }
  LabelMap out(mask.n, height, width);
  for (int b = 0; b < mask.n; ++b) {
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) out.at(b, r, c) = mask.at(b, y + r, x + c);
    }
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& mask, int out_h, int out_w) {
  LabelMap out(mask.n, out_h, out_w);
  for (int b = 0; b < mask.n; ++b) {
    for (int y = 0; y < out_h; ++y) {
      const int sy = std::min(mask.h - 1, static_cast<int>((y + 0.5) * mask.h / out_h));
      for (int x = 0; x < out_w; ++x) {
        const int sx = std::min(mask.w - 1, static_cast<int>((x + 0.5) * mask.w / out_w));
        out.at(b, y, x) = mask.at(b, sy, sx);
      }
    }
  }
  return out;
}

CropPair sample_crop_pair(const Tensor& image, OverlapRange range, int out_h, int out_w,
                          Rng& rng, const CropOptions& options) {
  if (!(range.lo > 0.0 && range.lo <= range.hi && range.hi <= 1.0)) {
    throw Error("overlap range must satisfy 0 < lo <= hi <= 1");
  }
  const int height = image.h();
  const int width = image.w();
  const int shorter = std::min(height, width);
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    const int side = std::clamp(
        static_cast<int>(std::lround(uniform(rng, options.scale_lo, options.scale_hi) * shorter)),
        1, shorter);
    const double target = uniform(rng, range.lo, range.hi);
    // Split the target area ratio into horizontal and vertical overlap.
    const double ox = uniform(rng, target, 1.0);
    const double oy = target / ox;
    int dx = static_cast<int>(std::lround(side * (1.0 - ox)));
    int dy = static_cast<int>(std::lround(side * (1.0 - oy)));
    if (std::bernoulli_distribution(0.5)(rng)) dx = -dx;
    if (std::bernoulli_distribution(0.5)(rng)) dy = -dy;
    const int x_lo = std::max(0, -dx);
    const int x_hi = width - side - std::max(0, dx);
    const int y_lo = std::max(0, -dy);
    const int y_hi = height - side - std::max(0, dy);
    if (x_lo > x_hi || y_lo > y_hi) continue;
    const double overlap =
        static_cast<double>(side - std::abs(dx)) * (side - std::abs(dy)) / (double(side) * side);
    if (overlap < range.lo || overlap > range.hi || overlap <= 0.0) continue;

    const int x1 = std::uniform_int_distribution<int>(x_lo, x_hi)(rng);
    const int y1 = std::uniform_int_distribution<int>(y_lo, y_hi)(rng);
    const int x2 = x1 + dx;
    const int y2 = y1 + dy;

    CropPair pair;
    pair.overlap_fraction = overlap;
    pair.window1 = {double(x1), double(y1), double(x1 + side), double(y1 + side)};
    pair.window2 = {double(x2), double(y2), double(x2 + side), double(y2 + side)};
    pair.crop1 = ops::resize_bilinear(crop(image, x1, y1, side, side), out_h, out_w);
    pair.crop2 = ops::resize_bilinear(crop(image, x2, y2, side, side), out_h, out_w);
    const Rect shared{double(std::max(x1, x2)), double(std::max(y1, y2)),
                      double(std::min(x1, x2) + side), double(std::min(y1, y2) + side)};
    const double sx = static_cast<double>(out_w) / side;
    const double sy = static_cast<double>(out_h) / side;
    auto to_crop = [&](const Rect& window) {
      return Rect{(shared.x0 - window.x0) * sx, (shared.y0 - window.y0) * sy,
                  (shared.x1 - window.x0) * sx, (shared.y1 - window.y0) * sy};
    };
    pair.rect1 = to_crop(pair.window1);
    pair.rect2 = to_crop(pair.window2);
    return pair;
  }
  throw Error("could not sample a crop pair with overlap in [" + std::to_string(range.lo) +
              ", " + std::to_string(range.hi) + "] after " +
              std::to_string(options.max_attempts) + " attempts");
}

// --- augmentation -----------------------------------------------------------

Tensor flip_horizontal(const Tensor& image) {
  Tensor out(image.shape());
  for (int b = 0; b < image.n(); ++b) {
    for (int y = 0; y < image.h(); ++y) {
      for (int x = 0; x < image.w(); ++x) {
        std::copy_n(image.pixel(b, y, image.w() - 1 - x), image.c(), out.pixel(b, y, x));
      }
    }
  }
  return out;
}

Tensor flip_vertical(const Tensor& image) {
  Tensor out(image.shape());
  for (int b = 0; b < image.n(); ++b) {
    for (int y = 0; y < image.h(); ++y) {
      std::copy_n(image.pixel(b, image.h() - 1 - y, 0),
                  static_cast<std::size_t>(image.w()) * image.c(), out.pixel(b, y, 0));
    }
  }
  return out;
}

LabelMap flip_horizontal(const LabelMap& mask) {
  LabelMap out(mask.n, mask.h, mask.w);
  for (int b = 0; b < mask.n; ++b)
    for (int y = 0; y < mask.h; ++y)
      for (int x = 0; x < mask.w; ++x) out.at(b, y, x) = mask.at(b, y, mask.w - 1 - x);
  return out;
}

LabelMap flip_vertical(const LabelMap& mask) {
  LabelMap out(mask.n, mask.h, mask.w);
  for (int b = 0; b < mask.n; ++b)
    for (int y = 0; y < mask.h; ++y)
      for (int x = 0; x < mask.w; ++x) out.at(b, y, x) = mask.at(b, mask.h - 1 - y, x);
  return out;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;

  // Separable pass with replicated borders.
  auto pass = [&](const Tensor& in, bool horizontal) {
    Tensor out(in.shape());
    const int c = in.c();
    for (int b = 0; b < in.n(); ++b) {
      for (int y = 0; y < in.h(); ++y) {
        for (int x = 0; x < in.w(); ++x) {
          double* o = out.pixel(b, y, x);
          for (int i = -radius; i <= radius; ++i) {
            const int yy = horizontal ? y : std::clamp(y + i, 0, in.h() - 1);
            const int xx = horizontal ? std::clamp(x + i, 0, in.w() - 1) : x;
            const double* p = in.pixel(b, yy, xx);
            for (int k = 0; k < c; ++k) o[k] += kernel[i + radius] * p[k];
          }
        }
      }
    }
    return out;
  };
  return pass(pass(image, true), false);
}

Tensor to_grey(const Tensor& image) {
  if (image.c() != 3) throw Error("to_grey expects three channels");
  Tensor out(image.shape());
  for (std::size_t p = 0; p < image.shape().pixels(); ++p) {
    const double* s = image.data() + 3 * p;
    const double g = 0.299 * s[0] + 0.587 * s[1] + 0.114 * s[2];
    double* d = out.data() + 3 * p;
    d[0] = d[1] = d[2] = g;
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentPolicy& policy, Rng& rng) {
  Sample out = sample;
  auto coin = [&rng](double p) { return std::bernoulli_distribution(p)(rng); };
  if (coin(policy.hflip)) {
    out.image = flip_horizontal(out.image);
    if (out.mask) out.mask = flip_horizontal(*out.mask);
  }
  if (coin(policy.vflip)) {
    out.image = flip_vertical(out.image);
    if (out.mask) out.mask = flip_vertical(*out.mask);
  }
  if (coin(policy.blur)) {
    out.image = gaussian_blur(out.image, uniform(rng, policy.blur_sigma_lo, policy.blur_sigma_hi));
  }
  if (coin(policy.color)) {
    const int c = out.image.c();
    std::vector<double> gain(c);
    for (double& g : gain) {
      g = uniform(rng, 1.0 - policy.color_strength, 1.0 + policy.color_strength);
    }
    for (std::size_t i = 0; i < out.image.size(); ++i) {
      out.image[i] = std::clamp(out.image[i] * gain[i % c], 0.0, 1.0);
    }
  }
  if (coin(policy.grey) && out.image.c() == 3) out.image = to_grey(out.image);
  return out;
}

}  // namespace crcfp
