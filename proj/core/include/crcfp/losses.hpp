#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crcfp/data_pipeline.hpp"
#include "crcfp/model.hpp"
#include "crcfp/ops.hpp"

namespace crcfp {

/// Weights of the four loss terms in the training objective.
struct LossWeights {
  double sup = 1.0;
  double cont = 0.1;
  double cross = 0.01;
  double ent = 0.01;

  void validate() const;
};

/// Counters for degenerate inputs seen by the losses.
struct LossDiagnostics {
  std::size_t ce_all_ignored = 0;
  std::size_t skipped_pairs = 0;
};

/// Mean over non-ignored pixels of -log p(target). `pred` must match the
/// mask's spatial shape (normally the upsampled prediction). Returns 0 and
/// bumps `diagnostics->ce_all_ignored` when every pixel is ignored.
Var supervised_ce(const PredictionMap& pred, const LabelMap& target, int ignore_index,
                  LossDiagnostics* diagnostics = nullptr);

/// Overlap regions of two maps resampled onto a common grid.
struct AlignedPair {
  Var first;   ///< {1,1,N,C}
  Var second;  ///< {1,1,N,C}, positionally matched to `first`
  int grid_h = 0;
  int grid_w = 0;
  bool skipped = false;
  std::vector<ops::Point> points1;
  std::vector<ops::Point> points2;
};

/// Grid positions (in feature cells) covering `rect` with `grid_h` x
/// `grid_w` samples. `rect` is in input-pixel coordinates.
std::vector<ops::Point> overlap_grid(const Rect& rect, int stride, int grid_h, int grid_w);

/// Maps the overlap rectangles of batch item `b` to feature coordinates and
/// bilinearly samples both maps on a grid sized to rect1's feature extent.
/// When that extent is below one feature cell the pair is marked skipped.
AlignedPair align_overlap(const Var& map1, const Var& map2, int b, const Rect& rect1,
                          const Rect& rect2, int stride);

enum class ContrastiveDivisor {
  /// Mean over the pixels passing the positive gate.
  kGatedPixels,
  /// Divide by every overlap pixel.
  kOverlapPixels,
};

struct ContrastiveOptions {
  ContrastiveDivisor divisor = ContrastiveDivisor::kGatedPixels;
  /// Treat the target view and its negatives as constants.
  bool detach_target = true;
};

/// Inputs of one direction (anchor -> target) of the contrastive loss.
struct ContrastiveContext {
  Var anchor;  ///< {1,1,N,P}
  Var target;  ///< {1,1,N,P}
  std::vector<double> anchor_conf;
  std::vector<double> target_conf;
  std::vector<int> anchor_label;
  std::vector<int> target_label;
  /// Memory-bank negatives {1,1,Q,P} (may be empty) and their labels.
  Tensor negatives;
  std::vector<int> negative_labels;
  double threshold = 0.75;
  double temperature = 0.1;
  ContrastiveOptions options{};

  void validate() const;
};

/// Directional pixel contrastive loss of one direction.
///
/// Pixel i contributes when anchor_conf[i] > threshold and
/// anchor_conf[i] < target_conf[i]. Its term is
///   -log( s(a_i, t_i) / (s(a_i, t_i) + sum_neg s(a_i, n)) ),
/// s(u, v) = exp(cos(u, v) / temperature), where the negatives are the bank
/// entries and the target pixels j != i whose label differs from
/// anchor_label[i].
Var directional_contrastive_pair(const ContrastiveContext& ctx);

/// Sum of both directions.
Var directional_contrastive(const ContrastiveContext& forward, const ContrastiveContext& backward);

/// Mean over auxiliary heads, pixels and classes of (p_main - p_aux)^2.
Var cross_consistency(const PredictionMap& main, std::span<const PredictionMap> aux,
                      bool detach_main = true);

/// Mean over pixels of -sum_c p log p, computed from the logits.
Var entropy_loss(const PredictionMap& pred);

struct LossParts {
  Var sup;
  Var cont;
  Var cross;
  Var ent;
};

struct LossBreakdown {
  double sup = 0.0;
  double cont = 0.0;
  double cross = 0.0;
  double ent = 0.0;
  double total = 0.0;
};

struct TotalLoss {
  Var total;
  LossBreakdown breakdown;
};

/// Weighted sum of the defined parts. Parts with zero weight are left out
/// of the graph; the breakdown still reports their raw values.
TotalLoss total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace crcfp
