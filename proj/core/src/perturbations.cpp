#include "crcfp/perturbations.hpp"

#include <algorithm>
#include <limits>

#include "crcfp/ops.hpp"

namespace crcfp {

void PerturbConfig::validate() const {
  if (noise_lo > noise_hi) throw Error("perturb: noise_lo must not exceed noise_hi");
  if (!(0.0 < fdrop_lo && fdrop_lo <= fdrop_hi && fdrop_hi < 1.0)) {
    throw Error("perturb: require 0 < fdrop_lo <= fdrop_hi < 1");
  }
  if (!(0.0 < dropout_keep && dropout_keep < 1.0)) {
    throw Error("perturb: dropout_keep must lie in (0, 1)");
  }
  if (k < 1) throw Error("perturb: K must be at least 1");
}

Tensor draw_feature_noise(const Shape& shape, double lo, double hi, Rng& rng) {
  if (lo > hi) throw Error("feature_noise: lo > hi");
  Tensor omega(shape);
  for (double& v : omega.values()) v = uniform(rng, lo, hi);
  return omega;
}

Var apply_feature_noise(const Var& features, const Tensor& omega) {
  Tensor factor = omega;
  for (double& v : factor.values()) v += 1.0;
  return ops::mul_const(features, factor);
}

FeatureMap feature_noise(const FeatureMap& f, double lo, double hi, Rng& rng) {
  FeatureMap out = f;
  out.values = apply_feature_noise(f.values, draw_feature_noise(f.values.shape(), lo, hi, rng));
  return out;
}

Tensor normalized_activation(const Tensor& features) {
  const Shape s = features.shape();
  Tensor out(Shape{s.n, s.h, s.w, 1});
  const std::size_t per_item = static_cast<std::size_t>(s.h) * s.w;
  for (int b = 0; b < s.n; ++b) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t p = 0; p < per_item; ++p) {
      const double* v = features.data() + (b * per_item + p) * s.c;
      double sum = 0.0;
      for (int k = 0; k < s.c; ++k) sum += v[k];
      out[b * per_item + p] = sum;
      lo = std::min(lo, sum);
      hi = std::max(hi, sum);
    }
    const double range = hi - lo;
    for (std::size_t p = 0; p < per_item; ++p) {
      double& v = out[b * per_item + p];
      v = range > 0.0 ? (v - lo) / range : 0.0;
    }
  }
  return out;
}

Tensor feature_dropout_mask(const Tensor& features, double gamma, bool drop_low) {
  const Shape s = features.shape();
  Tensor normalized = normalized_activation(features);
  Tensor mask(normalized.shape(), 1.0);
  const std::size_t per_item = static_cast<std::size_t>(s.h) * s.w;
  for (int b = 0; b < s.n; ++b) {
    const double* first = features.data() + b * per_item * s.c;
    // Constant channel sum: nothing to rank, leave the item untouched.
    bool constant = true;
    double ref = 0.0;
    for (int k = 0; k < s.c; ++k) ref += first[k];
    for (std::size_t p = 1; p < per_item && constant; ++p) {
      double sum = 0.0;
      for (int k = 0; k < s.c; ++k) sum += first[p * s.c + k];
      constant = sum == ref;
    }
    if (constant) continue;
    for (std::size_t p = 0; p < per_item; ++p) {
      const double v = normalized[b * per_item + p];
      const bool keep = drop_low ? v >= gamma : v < gamma;
      mask[b * per_item + p] = keep ? 1.0 : 0.0;
    }
  }
  return mask;
}

FeatureMap feature_dropout(const FeatureMap& f, double lo, double hi, Rng& rng, bool literal,
                           bool drop_low) {
  const double gamma = uniform(rng, lo, hi);
  const Tensor& values = f.values.value();
  Tensor mask = feature_dropout_mask(values, gamma, drop_low);
  FeatureMap out = f;
  if (!literal) {
    out.values = ops::mul_const(f.values, mask);
    return out;
  }
  // M_drop * f': every channel carries the masked normalised map.
  const Tensor normalized = normalized_activation(values);
  Tensor literal_values(values.shape());
  const int c = values.c();
  for (std::size_t i = 0; i < literal_values.size(); ++i) {
    literal_values[i] = mask[i / c] * normalized[i / c];
  }
  out.values = Var::constant(std::move(literal_values));
  return out;
}

Tensor draw_spatial_dropout_mask(const Shape& shape, double keep, Rng& rng) {
  if (!(0.0 < keep && keep < 1.0)) throw Error("spatial_dropout: keep must lie in (0, 1)");
  Tensor mask(Shape{shape.n, shape.h, shape.w, 1});
  std::bernoulli_distribution coin(keep);
  for (double& v : mask.values()) v = coin(rng) ? 1.0 : 0.0;
  return mask;
}

FeatureMap spatial_dropout(const FeatureMap& f, double keep, Rng& rng) {
  FeatureMap out = f;
  out.values = ops::mul_const(f.values, draw_spatial_dropout_mask(f.values.shape(), keep, rng));
  return out;
}

FeatureMap perturb(const FeatureMap& f, PerturbationType type, const PerturbConfig& config,
                   Rng& rng) {
  switch (type) {
    case PerturbationType::kNoise:
      return feature_noise(f, config.noise_lo, config.noise_hi, rng);
    case PerturbationType::kFeatureDropout:
      return feature_dropout(f, config.fdrop_lo, config.fdrop_hi, rng, config.fdrop_literal,
                             config.fdrop_drop_low);
    case PerturbationType::kDropout:
      return spatial_dropout(f, config.dropout_keep, rng);
  }
  throw Error("unknown perturbation type");
}

}  // namespace crcfp
