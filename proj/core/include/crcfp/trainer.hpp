#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crcfp/checkpoint.hpp"
#include "crcfp/data_pipeline.hpp"
#include "crcfp/evaluation.hpp"
#include "crcfp/losses.hpp"
#include "crcfp/memory_bank.hpp"
#include "crcfp/model.hpp"
#include "crcfp/optimizer.hpp"
#include "crcfp/perturbations.hpp"

namespace crcfp {

struct TrainConfig {
  int epochs = 80;
  int warmup_epochs = 5;
  int batch_labeled = 8;
  int batch_unlabeled = 8;
  /// Square network input side for labelled images, unlabelled images and crops.
  int input_size = 320;
  double base_lr = 0.001;
  double lr_power = 0.9;
  SgdConfig sgd{};
  LossWeights weights{};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  PerturbConfig perturb{};
  double threshold = 0.75;
  double temperature = 0.1;
  ContrastiveOptions contrastive{};
  /// Feed gradients of the cross-consistency loss to the main classifier too.
  bool cross_through_main = false;
  OverlapRange overlap{};
  CropOptions crop{};
  bool augment = true;
  AugmentPolicy augment_policy{};
  /// Memory-bank capacity and negatives drawn from it per direction and step.
  std::size_t bank_capacity = 1200;
  std::size_t negatives = 1200;
  /// Pixels pushed into the bank per view and step.
  std::size_t bank_push_cap = 256;
  /// Epochs between checkpoints; 0 writes only the final one.
  int checkpoint_every = 10;
  /// Stop after this many steps; 0 runs the full schedule.
  std::int64_t step_limit = 0;
  int ignore_index = kDefaultIgnoreIndex;

  void validate() const;
};

/// Step counts fixed at the start of training. An epoch is one pass over
/// the unlabelled set (the labelled set when there is no unlabelled data).
struct Schedule {
  std::int64_t steps_per_epoch = 0;
  std::int64_t warmup_steps = 0;
  std::int64_t max_steps = 0;

  static Schedule make(const TrainConfig& config, std::size_t labeled_count,
                       std::size_t unlabeled_count);
  bool warmup(std::int64_t step) const { return step < warmup_steps; }
};

struct LabeledBatch {
  Tensor images;  ///< {B,S,S,3}
  LabelMap masks;
};

struct UnlabeledBatch {
  Tensor images;  ///< {B,S,S,3} full (resized) images
  Tensor crops1;  ///< {B,S,S,3}
  Tensor crops2;
  std::vector<Rect> rects1;
  std::vector<Rect> rects2;
};

/// Random square crop of side `size` (images smaller than that are resized
/// up), optionally preceded by the augmentation policy.
Sample fit_to_input(const Sample& sample, int size, bool augment, const AugmentPolicy& policy,
                    Rng& rng);
LabeledBatch make_labeled_batch(std::span<const Sample> samples, const TrainConfig& config,
                                Rng& rng);
/// Uses the same (augmented) image for the full view and the crop pair. The
/// full view is fitted to the input like a labelled image.
UnlabeledBatch make_unlabeled_batch(std::span<const Sample> samples, const TrainConfig& config,
                                    Rng& augment_rng, Rng& crop_rng);

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  bool warmup = false;
  LossBreakdown losses;
  /// Parts evaluated this step (skipped during warm-up or at zero weight).
  bool has_cont = false;
  bool has_cross = false;
  bool has_ent = false;
  LossDiagnostics diagnostics;
};

/// Objects mutated by a training step.
struct TrainState {
  SegmentationModel& model;
  MemoryBank& bank;
  Sgd& optimizer;
};

/// One optimisation step: supervised cross entropy on `labeled`; after
/// warm-up also entropy, cross-consistency over the 3K perturbed heads and
/// the directional contrastive loss on the crop pair, followed by a memory
/// bank update. Gradients are left in the parameters after the update.
/// Throws on a non-finite total with the per-part values in the message.
StepRecord train_step(const LabeledBatch& labeled, const UnlabeledBatch* unlabeled,
                      TrainState& state, std::int64_t step, const Schedule& schedule,
                      const TrainConfig& config, std::uint64_t seed);

struct FitOptions {
  /// Run directory; empty disables all file output.
  std::filesystem::path run_dir;
  /// Saved verbatim into checkpoints.
  std::string config_yaml;
  /// Best-by-mIoU selection set; empty disables it.
  std::span<const Sample> validation;
  std::function<void(const StepRecord&)> on_step;
  /// Resume from this checkpoint.
  std::optional<Checkpoint> resume;
};

struct FitResult {
  std::vector<StepRecord> history;
  std::optional<double> best_miou;
  std::int64_t best_epoch = -1;
};

/// Trains `model` on a labelled/unlabelled split. Writes metrics.log,
/// checkpoints/epoch_<n>.ckpt, checkpoints/last.ckpt and checkpoints/best.ckpt
/// below the run directory.
FitResult fit(SegmentationModel& model, const SplitResult& data, const TrainConfig& config,
              std::uint64_t seed, const FitOptions& options = {});

/// One line of metrics.log.
std::string step_json(const StepRecord& r);

}  // namespace crcfp
