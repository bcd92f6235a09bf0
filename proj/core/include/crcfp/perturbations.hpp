#pragma once

#include "crcfp/model.hpp"
#include "crcfp/random.hpp"

// Stochastic feature perturbations for cross-consistency training. Each
// operator is split into a draw (noise or mask) and a differentiable
// application so gradients can be checked with the draw held fixed.
namespace crcfp {

struct PerturbConfig {
  double noise_lo = -0.3;
  double noise_hi = 0.3;
  double fdrop_lo = 0.75;
  double fdrop_hi = 0.9;
  /// Bernoulli keep-probability of spatial dropout.
  double dropout_keep = 0.5;
  /// Auxiliary classifiers per perturbation type.
  int k = 4;
  /// Multiply the mask into the normalised activation map instead of the
  /// original features.
  bool fdrop_literal = false;
  /// Keep positions with f' >= gamma (drops weak activations) instead of
  /// keeping f' < gamma.
  bool fdrop_drop_low = false;

  void validate() const;
};

/// Omega ~ U(lo, hi), element-wise over `shape`.
Tensor draw_feature_noise(const Shape& shape, double lo, double hi, Rng& rng);
/// (f * Omega) + f.
Var apply_feature_noise(const Var& features, const Tensor& omega);
FeatureMap feature_noise(const FeatureMap& f, double lo, double hi, Rng& rng);

/// Channel sum of every pixel, min-max normalised over the spatial positions
/// of each batch item; {B,H,W,1}. A constant map normalises to zeros.
Tensor normalized_activation(const Tensor& features);
/// Spatial {B,H,W,1} mask: 1 where f' < gamma (or f' >= gamma with
/// `drop_low`). Items with constant channel sums get an all-ones mask.
Tensor feature_dropout_mask(const Tensor& features, double gamma, bool drop_low = false);
/// Draws one gamma ~ U(lo, hi) per call and masks the features.
FeatureMap feature_dropout(const FeatureMap& f, double lo, double hi, Rng& rng,
                           bool literal = false, bool drop_low = false);

/// {B,H,W,1} mask with each position kept with probability `keep`.
Tensor draw_spatial_dropout_mask(const Shape& shape, double keep, Rng& rng);
/// Mask broadcast over channels; no 1/keep rescaling.
FeatureMap spatial_dropout(const FeatureMap& f, double keep, Rng& rng);

/// Applies one draw of the given perturbation type.
FeatureMap perturb(const FeatureMap& f, PerturbationType type, const PerturbConfig& config,
                   Rng& rng);

}  // namespace crcfp
