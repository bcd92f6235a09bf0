#include "crcfp/model.hpp"

#include <cmath>

#include "crcfp/checkpoint.hpp"
#include "crcfp/ops.hpp"

namespace crcfp {

std::string to_string(PerturbationType t) {
  switch (t) {
    case PerturbationType::kNoise:
      return "noise";
    case PerturbationType::kFeatureDropout:
      return "feat_dropout";
    case PerturbationType::kDropout:
      return "dropout";
  }
  return "unknown";
}

ConvLayer ConvLayer::create(int kernel, int in, int out, int stride, Rng& rng, double gain) {
  ConvLayer layer;
  Tensor w(Shape{kernel, kernel, in, out});
  std::normal_distribution<double> normal(0.0, std::sqrt(gain / (kernel * kernel * in)));
  for (double& v : w.values()) v = normal(rng);
  layer.weight = Var::parameter(std::move(w));
  layer.bias = Var::parameter(Tensor(Shape{1, 1, 1, out}));
  layer.stride = stride;
  layer.pad = kernel / 2;
  return layer;
}

Var ConvLayer::operator()(const Var& x) const {
  return ops::conv2d(x, weight, bias, stride, pad);
}

ReferenceBackbone::ReferenceBackbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  if (config.stride < 1 || (config.stride & (config.stride - 1)) != 0) {
    throw Error("backbone stride must be a power of two, got " + std::to_string(config.stride));
  }
  if (config.channels < 1 || config.base_width < 1) throw Error("backbone widths must be positive");
  int width = std::min(config.base_width, config.channels);
  stem_ = ConvLayer::create(3, 3, width, 1, rng);
  for (int s = config.stride; s > 1; s /= 2) {
    const int next = s == 2 ? config.channels : std::min(width * 2, config.channels);
    encoder_.push_back(ConvLayer::create(3, width, next, 2, rng));
    width = next;
  }
  if (width != config.channels) {
    // Stride 1: project the stem to D channels.
    encoder_.push_back(ConvLayer::create(3, width, config.channels, 1, rng));
  }
  for (int i = 0; i < config.decoder_blocks; ++i) {
    decoder_.push_back(ConvLayer::create(3, config.channels, config.channels, 1, rng));
  }
}

Var ReferenceBackbone::forward(const Var& images) const {
  Var x = ops::relu(stem_(images));
  for (const ConvLayer& layer : encoder_) x = ops::relu(layer(x));
  for (const ConvLayer& layer : decoder_) x = ops::relu(layer(x));
  return x;
}

std::vector<Parameter> ReferenceBackbone::parameters() const {
  std::vector<Parameter> out;
  auto add = [&out](const std::string& name, const ConvLayer& l) {
    out.push_back({name + ".weight", l.weight});
    out.push_back({name + ".bias", l.bias});
  };
  add("backbone.stem", stem_);
  for (std::size_t i = 0; i < encoder_.size(); ++i) add("backbone.encoder" + std::to_string(i), encoder_[i]);
  for (std::size_t i = 0; i < decoder_.size(); ++i) add("backbone.decoder" + std::to_string(i), decoder_[i]);
  return out;
}

SegmentationModel::SegmentationModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.classes < 2) throw Error("model needs at least two classes");
  if (config.aux_per_type < 0) throw Error("aux_per_type must be nonnegative");
  Rng rng = derive_rng(seed, Stream::kInit);
  backbone_ = std::make_unique<ReferenceBackbone>(config.backbone, rng);
  const int d = backbone_->channels();
  classifier_ = ConvLayer::create(1, d, config.classes, 1, rng, 1.0);
  projector_fc1_ = ConvLayer::create(1, d, config.projector_hidden, 1, rng);
  projector_fc2_ = ConvLayer::create(1, config.projector_hidden, config.projection_dim, 1, rng, 1.0);
  for (std::size_t t = 0; t < kPerturbationTypes.size(); ++t) {
    for (int k = 0; k < config.aux_per_type; ++k) {
      aux_heads_.push_back(ConvLayer::create(1, d, config.classes, 1, rng, 1.0));
    }
  }
  if (!config.pretrained.empty()) {
    load_parameters(load_checkpoint(config.pretrained).parameters, false);
  }
}

FeatureMap SegmentationModel::extract_features(const Tensor& images) const {
  return extract_features(Var::constant(images));
}

FeatureMap SegmentationModel::extract_features(const Var& images) const {
  const Shape s = images.shape();
  if (s.n < 1 || s.c != 3 || s.h < 1 || s.w < 1) {
    throw Error("extract_features expects {B,H,W,3} images, got " + s.str());
  }
  Var x = images;
  if (config_.input_mean != 0.0) {
    x = ops::add(x, Var::constant(Tensor(s, -config_.input_mean)));
  }
  if (config_.input_std != 1.0) x = ops::scale(x, 1.0 / config_.input_std);
  FeatureMap f;
  f.values = backbone_->forward(x);
  f.stride = backbone_->stride();
  f.input_h = s.h;
  f.input_w = s.w;
  return f;
}

ProjectionMap SegmentationModel::project(const FeatureMap& features) const {
  return {projector_fc2_(ops::relu(projector_fc1_(features.values)))};
}

PredictionMap SegmentationModel::classify(const FeatureMap& features, bool upsample) const {
  PredictionMap p;
  p.logits = classifier_(features.values);
  if (upsample) {
    p.logits = ops::resize_bilinear(p.logits, features.input_h, features.input_w);
    p.upsampled = true;
  }
  p.probs = ops::softmax_channels(p.logits);
  return p;
}

const ConvLayer& SegmentationModel::aux_head(int k, PerturbationType type) const {
  const int t = static_cast<int>(type);
  if (k < 0 || k >= config_.aux_per_type || t < 0 || t >= 3) {
    throw Error("unknown auxiliary classifier (" + std::to_string(k) + ", " + to_string(type) +
                ") with K = " + std::to_string(config_.aux_per_type));
  }
  return aux_heads_[static_cast<std::size_t>(t * config_.aux_per_type + k)];
}

ConvLayer& SegmentationModel::aux_head(int k, PerturbationType type) {
  return const_cast<ConvLayer&>(std::as_const(*this).aux_head(k, type));
}

PredictionMap SegmentationModel::aux_classify(const FeatureMap& perturbed, int k,
                                              PerturbationType type) const {
  PredictionMap p;
  p.logits = aux_head(k, type)(perturbed.values);
  p.probs = ops::softmax_channels(p.logits);
  return p;
}

std::vector<Parameter> SegmentationModel::parameters() const {
  std::vector<Parameter> out = backbone_->parameters();
  auto add = [&out](const std::string& name, const ConvLayer& l) {
    out.push_back({name + ".weight", l.weight});
    out.push_back({name + ".bias", l.bias});
  };
  add("classifier", classifier_);
  add("projector.fc1", projector_fc1_);
  add("projector.fc2", projector_fc2_);
  for (PerturbationType t : kPerturbationTypes) {
    for (int k = 0; k < config_.aux_per_type; ++k) {
      add("aux." + to_string(t) + "." + std::to_string(k), aux_head(k, t));
    }
  }
  return out;
}

std::vector<Parameter> SegmentationModel::parameters(const std::string& prefix) const {
  std::vector<Parameter> out;
  for (Parameter& p : parameters()) {
    if (p.name.rfind(prefix, 0) == 0) out.push_back(std::move(p));
  }
  return out;
}

void SegmentationModel::load_parameters(
    const std::vector<std::pair<std::string, Tensor>>& values, bool require_all) {
  std::size_t matched = 0;
  std::vector<Parameter> params = parameters();
  for (Parameter& p : params) {
    for (const auto& [name, value] : values) {
      if (name != p.name) continue;
      if (!(value.shape() == p.var.shape())) {
        throw Error("parameter " + name + " has shape " + value.shape().str() + ", expected " +
                    p.var.shape().str());
      }
      p.var.mutable_value() = value;
      ++matched;
    }
  }
  if (require_all && matched != params.size()) {
    throw Error("checkpoint provides " + std::to_string(matched) + " of " +
                std::to_string(params.size()) + " parameters");
  }
}

LabelMap argmax_labels(const Tensor& probs) {
  LabelMap out(probs.n(), probs.h(), probs.w());
  const int c = probs.c();
  for (std::size_t p = 0; p < out.size(); ++p) {
    const double* v = probs.data() + p * c;
    int best = 0;
    for (int k = 1; k < c; ++k) {
      if (v[k] > v[best]) best = k;
    }
    out.labels[p] = best;
  }
  return out;
}

}  // namespace crcfp
