#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crcfp/data_pipeline.hpp"
#include "crcfp/model.hpp"

namespace crcfp {

struct DensityOptions {
  /// Odd patch side.
  int patch = 21;
  /// Distance from the centre patch to each neighbour; 0 means `patch`.
  int neighbor_offset = 0;

  int offset() const { return neighbor_offset > 0 ? neighbor_offset : patch; }
};

/// Average L2 distance between each centre patch and its four axis
/// neighbours. Positions whose neighbour patches leave the image are invalid.
struct DensityMap {
  int h = 0;
  int w = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * w + x]; }
  bool is_valid(int y, int x) const { return valid[static_cast<std::size_t>(y) * w + x] != 0; }
};

/// `values` is {1,H,W,D}; requires H, W >= 3 * patch.
DensityMap density_map(const Tensor& values, const DensityOptions& options = {});

/// Backbone features of one image bilinearly upsampled to the image size.
Tensor upsampled_features(const SegmentationModel& model, const Tensor& image);

/// Writes `<stem>.png` (colour-mapped, invalid positions black) and
/// `<stem>.npy` (float32 H x W, invalid positions NaN).
void write_density(const std::filesystem::path& stem, const DensityMap& map);

struct EmbedOptions {
  std::size_t pixels_per_image = 100;
  std::uint64_t seed = 0;
  char delimiter = ',';
};

struct EmbeddedPixel {
  std::string source_id;
  int y = 0;
  int x = 0;
  int label = 0;
};

/// Writes one row per sampled pixel of every labelled sample: source id,
/// ground-truth label and the D upsampled feature values, after a header
/// row. Pixels are drawn uniformly without replacement. Returns the rows in
/// file order.
std::vector<EmbeddedPixel> export_embeddings(const SegmentationModel& model,
                                             std::span<const Sample> samples,
                                             const std::filesystem::path& out_path,
                                             const EmbedOptions& options = {});

}  // namespace crcfp
