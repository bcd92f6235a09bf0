#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crcfp/data_pipeline.hpp"
#include "crcfp/model.hpp"

namespace crcfp {

/// Pixel counts with rows indexed by ground truth and columns by prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);
  /// Builds a matrix from explicit rows.
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows);

  int classes() const { return classes_; }
  std::int64_t at(int truth, int pred) const { return counts_[index(truth, pred)]; }
  std::int64_t ignored() const { return ignored_; }
  /// Evaluated (non-ignored) pixels.
  std::int64_t total() const;

  /// Adds every pixel whose ground truth is not `ignore_index`. Predicted
  /// labels must lie in [0, classes).
  void accumulate(const LabelMap& pred, const LabelMap& truth, int ignore_index);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

 private:
  std::size_t index(int truth, int pred) const {
    return static_cast<std::size_t>(truth) * classes_ + pred;
  }
  int classes_;
  std::vector<std::int64_t> counts_;
  std::int64_t ignored_ = 0;
};

struct Metrics {
  /// False when the matrix holds no pixels; every value is then NaN.
  bool defined = false;
  std::vector<double> iou;
  std::vector<double> dice;
  /// Per-class recall TP / (TP + FN).
  std::vector<double> class_accuracy;
  /// Classes with TP + FP + FN > 0; only these enter the means.
  std::vector<bool> present;
  double miou = 0.0;
  double mean_dice = 0.0;
  /// trace / total.
  double accuracy = 0.0;
  /// Mean of class_accuracy over classes with ground-truth pixels.
  double mean_class_accuracy = 0.0;

  std::vector<int> absent_classes() const;
};

Metrics compute_metrics(const ConfusionMatrix& cm);

struct EvalOptions {
  int ignore_index = kDefaultIgnoreIndex;
  /// Images larger than this are evaluated tile by tile; 0 disables tiling.
  int tile = 0;
};

/// Predicts every labelled sample at full resolution (argmax of the
/// upsampled prediction) and accumulates the confusion matrix.
ConfusionMatrix evaluate(const SegmentationModel& model, std::span<const Sample> samples,
                         const EvalOptions& options = {});

/// Human-readable per-class table followed by the means.
std::string format_metrics(const Metrics& m, const std::vector<std::string>& class_names = {});
/// The same content as a JSON object.
std::string metrics_json(const Metrics& m, const ConfusionMatrix& cm);
/// Writes `<stem>.txt` and `<stem>.json` into `dir`.
void write_report(const std::filesystem::path& dir, const std::string& stem, const Metrics& m,
                  const ConfusionMatrix& cm);

}  // namespace crcfp
