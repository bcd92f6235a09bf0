#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "crcfp/random.hpp"
#include "crcfp/tensor.hpp"

namespace crcfp {

/// Default label for pixels excluded from losses and metrics.
inline constexpr int kDefaultIgnoreIndex = 255;

/// One image of the corpus: RGB values in [0,1] as a {1,H,W,3} tensor and,
/// for labelled images, a mask of the same spatial size.
struct Sample {
  Tensor image;
  std::optional<LabelMap> mask;
  std::string source_id;
  std::optional<std::string> center_id;

  bool labeled() const { return mask.has_value(); }
};

/// Axis-aligned rectangle in continuous pixel coordinates, [x0,x1) x [y0,y1).
struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  bool empty() const { return width() <= 0.0 || height() <= 0.0; }
  bool operator==(const Rect&) const = default;
};

/// Two overlapping views of one unlabelled image, both resized to the
/// network input size. `rect1`/`rect2` locate the shared source region in
/// each crop's (resized) pixel coordinates; `window1`/`window2` are the crop
/// windows in source-image coordinates.
struct CropPair {
  Tensor crop1;
  Tensor crop2;
  Rect rect1;
  Rect rect2;
  Rect window1;
  Rect window2;
  double overlap_fraction = 0.0;
};

struct OverlapRange {
  double lo = 0.1;
  double hi = 1.0;
};

struct CropOptions {
  /// Crop side as a fraction of the source's shorter side.
  double scale_lo = 0.5;
  double scale_hi = 1.0;
  int max_attempts = 1000;
};

enum class SplitMode { kByCenter, kByImage };

/// Labelled fraction num/den.
struct Fraction {
  int num = 1;
  int den = 1;

  double value() const { return static_cast<double>(num) / den; }
  /// Parses "1" or "1/N" with N in {1, 2, 4, 8, 16, 32}.
  static Fraction parse(const std::string& text);
  std::string str() const;
};

struct SplitSpec {
  SplitMode mode = SplitMode::kByCenter;
  Fraction fraction{};
  std::uint64_t seed = 0;
};

struct SplitResult {
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
};

/// Corpus manifest: class count, ignore label and the list of images.
/// Entries with a mask path are labelled. Stored as YAML.
struct Manifest {
  struct Entry {
    std::string path;
    std::optional<std::string> mask_path;
    std::optional<std::string> center_id;
  };

  int classes = 0;
  int ignore_index = kDefaultIgnoreIndex;
  /// Classes mapped to the ignore label at load time (e.g. an "others" class).
  std::vector<int> ignored_classes;
  std::vector<Entry> entries;

  static Manifest load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;
};

/// Loads every manifest entry, resolving relative paths against `root`.
/// Samples are ordered by source id (the image file stem).
std::vector<Sample> load_corpus(const std::filesystem::path& root, const Manifest& manifest);
/// Convenience overload reading `manifest_file`; relative paths resolve
/// against its directory.
std::vector<Sample> load_corpus(const std::filesystem::path& manifest_file);

/// Partitions samples into labelled and unlabelled sets. Unlabelled samples
/// have their masks removed.
SplitResult split_labeled(std::vector<Sample> samples, const SplitSpec& spec);

/// Samples two equally sized square crops whose shared area divided by the
/// crop area lies in `range`, and resizes both to out_h x out_w.
CropPair sample_crop_pair(const Tensor& image, OverlapRange range, int out_h, int out_w,
                          Rng& rng, const CropOptions& options = {});

struct AugmentPolicy {
  double hflip = 0.5;
  double vflip = 0.5;
  double blur = 0.2;
  double blur_sigma_lo = 0.1;
  double blur_sigma_hi = 1.5;
  /// Per-channel multiplicative jitter in [1 - s, 1 + s].
  double color = 0.5;
  double color_strength = 0.1;
  double grey = 0.1;
};

/// Random flips (applied to image and mask), then blur, colour scaling and
/// grey scaling (image only).
Sample augment(const Sample& sample, const AugmentPolicy& policy, Rng& rng);

// Geometric and photometric primitives.
Tensor flip_horizontal(const Tensor& image);
Tensor flip_vertical(const Tensor& image);
LabelMap flip_horizontal(const LabelMap& mask);
LabelMap flip_vertical(const LabelMap& mask);
Tensor crop(const Tensor& image, int x, int y, int width, int height);
LabelMap crop(const LabelMap& mask, int x, int y, int width, int height);
LabelMap resize_nearest(const LabelMap& mask, int out_h, int out_w);
Tensor gaussian_blur(const Tensor& image, double sigma);
Tensor to_grey(const Tensor& image);

// Raster I/O (PNG or any format OpenCV reads).
Tensor read_image(const std::filesystem::path& file);
LabelMap read_mask(const std::filesystem::path& file);
void write_image(const std::filesystem::path& file, const Tensor& image);
void write_mask(const std::filesystem::path& file, const LabelMap& mask);

}  // namespace crcfp
