#include "crcfp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "crcfp/ops.hpp"

namespace crcfp {
namespace {

// Window sums of side 2r+1 centred on each position of an H x W field,
// computed from a summed-area table. Only queried where fully inside.
class WindowSum {
 public:
  WindowSum(const std::vector<double>& field, int h, int w) : w_(w), table_((h + 1) * (w + 1), 0.0) {
    for (int y = 0; y < h; ++y) {
      double row = 0.0;
      for (int x = 0; x < w; ++x) {
        row += field[static_cast<std::size_t>(y) * w + x];
        table_[idx(y + 1, x + 1)] = table_[idx(y, x + 1)] + row;
      }
    }
  }
  double sum(int y, int x, int r) const {
    const int y0 = y - r, x0 = x - r, y1 = y + r + 1, x1 = x + r + 1;
    return table_[idx(y1, x1)] - table_[idx(y0, x1)] - table_[idx(y1, x0)] + table_[idx(y0, x0)];
  }

 private:
  std::size_t idx(int y, int x) const { return static_cast<std::size_t>(y) * (w_ + 1) + x; }
  int w_;
  std::vector<double> table_;
};

// Squared feature difference between (y, x) and (y + dy, x + dx), zero where
// the shifted position leaves the map.
std::vector<double> shifted_sq_diff(const Tensor& v, int dy, int dx) {
  const int h = v.h(), w = v.w(), d = v.c();
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y + dy < h; ++y) {
    for (int x = 0; x + dx < w; ++x) {
      const double* a = v.data() + (static_cast<std::size_t>(y) * w + x) * d;
      const double* b = v.data() + (static_cast<std::size_t>(y + dy) * w + x + dx) * d;
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  return out;
}

}  // namespace

DensityMap density_map(const Tensor& values, const DensityOptions& options) {
  const int p = options.patch;
  if (p < 1 || p % 2 == 0) throw Error("density_map: patch size must be odd and positive");
  if (values.n() != 1) throw Error("density_map: expects a single {1,H,W,D} map");
  const int h = values.h(), w = values.w();
  if (h < 3 * p || w < 3 * p) {
    throw Error("density_map: input " + std::to_string(h) + "x" + std::to_string(w) +
                " smaller than 3 x patch (" + std::to_string(3 * p) + ")");
  }
  const int r = p / 2;
  const int o = options.offset();
  // Distance to the right neighbour at (y, x) equals the left-neighbour
  // distance at (y, x + o); likewise for down/up.
  const WindowSum right(shifted_sq_diff(values, 0, o), h, w);
  const WindowSum down(shifted_sq_diff(values, o, 0), h, w);

  DensityMap map;
  map.h = h;
  map.w = w;
  map.values.assign(static_cast<std::size_t>(h) * w, 0.0);
  map.valid.assign(static_cast<std::size_t>(h) * w, 0);
  const int margin = r + o;
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      const double d = std::sqrt(right.sum(y, x, r)) + std::sqrt(right.sum(y, x - o, r)) +
                       std::sqrt(down.sum(y, x, r)) + std::sqrt(down.sum(y - o, x, r));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      map.values[i] = d / 4.0;
      map.valid[i] = 1;
    }
  }
  return map;
}

Tensor upsampled_features(const SegmentationModel& model, const Tensor& image) {
  NoGradGuard no_grad;
  const FeatureMap f = model.extract_features(image);
  return ops::resize_bilinear(f.values.value(), image.h(), image.w());
}

void write_density(const std::filesystem::path& stem, const DensityMap& map) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    if (!map.valid[i]) continue;
    lo = std::min(lo, map.values[i]);
    hi = std::max(hi, map.values[i]);
  }
  cv::Mat grey(map.h, map.w, CV_8UC1, cv::Scalar(0));
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      if (!map.is_valid(y, x)) continue;
      const double t = hi > lo ? (map.at(y, x) - lo) / (hi - lo) : 0.0;
      grey.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(t * 255.0));
    }
  }
  cv::Mat colour;
  cv::applyColorMap(grey, colour, cv::COLORMAP_VIRIDIS);
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      if (!map.is_valid(y, x)) colour.at<cv::Vec3b>(y, x) = cv::Vec3b(0, 0, 0);
    }
  }
  const std::string png = stem.string() + ".png";
  if (!cv::imwrite(png, colour)) throw Error("cannot write " + png);

  // NumPy .npy v1.0, little-endian float32, C order.
  const std::string npy = stem.string() + ".npy";
  std::ofstream out(npy, std::ios::binary);
  if (!out) throw Error("cannot write " + npy);
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                       std::to_string(map.h) + ", " + std::to_string(map.w) + "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write("\x93NUMPY\x01\x00", 8);
  out.put(static_cast<char>(len & 0xff));
  out.put(static_cast<char>(len >> 8));
  out << header;
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const float v = map.valid[i] ? static_cast<float>(map.values[i])
                                 : std::numeric_limits<float>::quiet_NaN();
    out.write(reinterpret_cast<const char*>(&v), sizeof(float));
  }
  if (!out) throw Error("failed writing " + npy);
}

std::vector<EmbeddedPixel> export_embeddings(const SegmentationModel& model,
                                             std::span<const Sample> samples,
                                             const std::filesystem::path& out_path,
                                             const EmbedOptions& options) {
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  std::ofstream out(out_path);
  if (!out) throw Error("cannot write embeddings to " + out_path.string());
  out.precision(9);
  const char sep = options.delimiter;
  const int d = model.feature_channels();
  out << "source_id" << sep << "label";
  for (int k = 0; k < d; ++k) out << sep << "f" << k;
  out << "\n";

  std::vector<EmbeddedPixel> rows;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Sample& sample = samples[s];
    if (!sample.mask) continue;
    const Tensor f = upsampled_features(model, sample.image);
    const std::size_t n = static_cast<std::size_t>(f.h()) * f.w();
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> picked;
    Rng rng = derive_rng(options.seed, Stream::kExport, s);
    std::sample(all.begin(), all.end(), std::back_inserter(picked), options.pixels_per_image, rng);
    for (std::size_t i : picked) {
      EmbeddedPixel px{sample.source_id, static_cast<int>(i / f.w()), static_cast<int>(i % f.w()),
                       sample.mask->labels[i]};
      out << px.source_id << sep << px.label;
      const double* v = f.data() + i * d;
      for (int k = 0; k < d; ++k) out << sep << v[k];
      out << "\n";
      rows.push_back(std::move(px));
    }
  }
  if (!out) throw Error("failed writing embeddings to " + out_path.string());
  return rows;
}

}  // namespace crcfp
