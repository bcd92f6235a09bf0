#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "crcfp/autograd.hpp"
#include "crcfp/random.hpp"

namespace crcfp {

/// Output of the shared encoder-decoder, H' x W' x D at stride `stride`.
struct FeatureMap {
  Var values;
  int stride = 1;
  int input_h = 0;
  int input_w = 0;
};

/// Per-pixel projector embeddings, H' x W' x P. Not normalised.
struct ProjectionMap {
  Var values;
};

/// Per-pixel class logits and their softmax.
struct PredictionMap {
  Var logits;
  Var probs;
  bool upsampled = false;
};

enum class PerturbationType { kNoise = 0, kFeatureDropout = 1, kDropout = 2 };

inline constexpr std::array<PerturbationType, 3> kPerturbationTypes{
    PerturbationType::kNoise, PerturbationType::kFeatureDropout, PerturbationType::kDropout};

std::string to_string(PerturbationType t);

struct Parameter {
  std::string name;
  Var var;
};

/// A k x k convolution with bias.
struct ConvLayer {
  Var weight;
  Var bias;
  int stride = 1;
  int pad = 0;

  static ConvLayer create(int kernel, int in, int out, int stride, Rng& rng, double gain = 2.0);
  Var operator()(const Var& x) const;
};

/// Encoder-decoder producing the shared feature map. Any implementation
/// with a fixed output stride and channel width can back the model.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual Var forward(const Var& images) const = 0;
  virtual int stride() const = 0;
  virtual int channels() const = 0;
  virtual std::vector<Parameter> parameters() const = 0;
};

struct BackboneConfig {
  /// Output stride; a power of two.
  int stride = 8;
  /// Feature width D.
  int channels = 256;
  /// Width of the first encoder stage; doubled per downsampling stage up to D.
  int base_width = 32;
  int decoder_blocks = 1;
};

/// Small convolutional reference backbone: a stride-1 stem, one stride-2
/// convolution per factor of two in the output stride, then decoder
/// convolutions at the output resolution. ReLU after every layer.
class ReferenceBackbone final : public Backbone {
 public:
  ReferenceBackbone(const BackboneConfig& config, Rng& rng);

  Var forward(const Var& images) const override;
  int stride() const override { return config_.stride; }
  int channels() const override { return config_.channels; }
  std::vector<Parameter> parameters() const override;

 private:
  BackboneConfig config_;
  ConvLayer stem_;
  std::vector<ConvLayer> encoder_;
  std::vector<ConvLayer> decoder_;
};

struct ModelConfig {
  BackboneConfig backbone{};
  int classes = 5;
  int projection_dim = 128;
  int projector_hidden = 128;
  /// Auxiliary classifiers per perturbation type (K).
  int aux_per_type = 4;
  /// Images enter the backbone as (x - input_mean) / input_std.
  double input_mean = 0.5;
  double input_std = 0.25;
  /// Optional checkpoint whose parameters initialise matching names.
  std::string pretrained;
};

/// Backbone, projector, main pixel classifier and 3K auxiliary classifiers.
class SegmentationModel {
 public:
  SegmentationModel(const ModelConfig& config, std::uint64_t seed);
  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;
  SegmentationModel(SegmentationModel&&) = default;
  SegmentationModel& operator=(SegmentationModel&&) = default;

  const ModelConfig& config() const { return config_; }
  int stride() const { return backbone_->stride(); }
  int feature_channels() const { return backbone_->channels(); }

  /// `images` is {B, H, W, 3}; output is {B, ceil(H/s), ceil(W/s), D}.
  FeatureMap extract_features(const Tensor& images) const;
  FeatureMap extract_features(const Var& images) const;

  /// FC -> ReLU -> FC applied at every pixel.
  ProjectionMap project(const FeatureMap& features) const;

  /// 1x1 classifier; with `upsample` the logits are bilinearly resized to
  /// the input resolution before the softmax.
  PredictionMap classify(const FeatureMap& features, bool upsample) const;

  /// Auxiliary classifier `k` (0-based) of perturbation type `type`,
  /// always at feature resolution.
  PredictionMap aux_classify(const FeatureMap& perturbed, int k, PerturbationType type) const;

  /// Every parameter with a stable dotted name.
  std::vector<Parameter> parameters() const;
  /// Parameters whose name starts with `prefix`.
  std::vector<Parameter> parameters(const std::string& prefix) const;

  /// Copies values of identically named and shaped parameters.
  void load_parameters(const std::vector<std::pair<std::string, Tensor>>& values,
                       bool require_all);

 private:
  ConvLayer& aux_head(int k, PerturbationType type);
  const ConvLayer& aux_head(int k, PerturbationType type) const;

  ModelConfig config_;
  std::unique_ptr<Backbone> backbone_;
  ConvLayer classifier_;
  ConvLayer projector_fc1_;
  ConvLayer projector_fc2_;
  std::vector<ConvLayer> aux_heads_;
};

/// Per-pixel argmax of a probability (or logit) map as {B,H,W} labels.
LabelMap argmax_labels(const Tensor& probs);

}  // namespace crcfp
