#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crcfp/data_pipeline.hpp"

namespace crcfp {

/// Synthetic stand-in for a multi-centre histology corpus. Class 0 is a
/// smooth background; every other class is a blob with its own texture
/// (stripes, dots, ...) except each third class, a textureless blob that is
/// only recognisable by being brighter than its surroundings. Every image
/// belongs to a "centre" that shifts all its colours along a hue circle.
struct ToyCorpusOptions {
  int images = 200;
  int test_images = 40;
  int size = 96;
  int classes = 4;
  int centers = 8;
  std::uint64_t seed = 0;
  /// Radius of the per-centre chroma shift.
  double color_shift = 0.12;
  double pixel_noise = 0.03;
};

struct ToyCorpus {
  std::filesystem::path manifest;
  std::filesystem::path test_manifest;
  std::vector<std::string> class_names;
};

/// Writes images/, masks/, manifest.yaml and the held-out test/ corpus with
/// test/manifest.yaml below `out_dir`.
ToyCorpus generate_toy_corpus(const std::filesystem::path& out_dir, const ToyCorpusOptions& options);

/// One image and mask of the toy distribution; `index` selects the draw.
Sample generate_toy_sample(const ToyCorpusOptions& options, int center, std::uint64_t index);

/// Per-centre RGB offset used by the generator.
std::vector<double> toy_center_shift(const ToyCorpusOptions& options, int center);

std::vector<std::string> toy_class_names(int classes);

}  // namespace crcfp
