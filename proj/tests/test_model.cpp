#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "crcfp/checkpoint.hpp"
#include "crcfp/losses.hpp"
#include "support.hpp"

using namespace crcfp;
using testing_support::random_tensor;

namespace {

ModelConfig tiny(int classes = 3) {
  ModelConfig cfg;
  cfg.backbone = {4, 8, 4, 1};
  cfg.classes = classes;
  cfg.projection_dim = 6;
  cfg.projector_hidden = 5;
  cfg.aux_per_type = 2;
  return cfg;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST(Model, ShapeContracts) {
  ModelConfig cfg;
  cfg.backbone = {8, 16, 4, 1};
  cfg.classes = 5;
  cfg.projection_dim = 12;
  cfg.projector_hidden = 12;
  const SegmentationModel model(cfg, 0);
  Rng rng(1);
  const Tensor x = random_tensor({2, 40, 36, 3}, rng, 0, 1);
  const FeatureMap f = model.extract_features(x);
  EXPECT_EQ(f.values.shape(), (Shape{2, 5, 5, 16}));
  EXPECT_EQ(f.stride, 8);
  EXPECT_EQ(model.project(f).values.shape(), (Shape{2, 5, 5, 12}));
  EXPECT_EQ(model.classify(f, false).probs.shape(), (Shape{2, 5, 5, 5}));
  const PredictionMap up = model.classify(f, true);
  EXPECT_TRUE(up.upsampled);
  EXPECT_EQ(up.probs.shape(), (Shape{2, 40, 36, 5}));
  const Tensor& p = up.probs.value();
  for (std::size_t px = 0; px < p.shape().pixels(); ++px) {
    double sum = 0.0;
    for (int c = 0; c < 5; ++c) {
      EXPECT_GE(p[px * 5 + c], 0.0);
      sum += p[px * 5 + c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  EXPECT_THROW(model.extract_features(Tensor(Shape{1, 8, 8, 1})), Error);
}

TEST(Model, DeterministicAndBatchConsistent) {
  const SegmentationModel model(tiny(), 3);
  Rng rng(2);
  const Tensor x = random_tensor({3, 16, 16, 3}, rng, 0, 1);
  const Tensor a = model.extract_features(x).values.value();
  EXPECT_EQ(a.storage(), model.extract_features(x).values.value().storage());
  for (int b = 0; b < 3; ++b) {
    Tensor item(Shape{1, 16, 16, 3});
    std::copy_n(x.data() + b * item.size(), item.size(), item.data());
    const Tensor single = model.extract_features(item).values.value();
    for (std::size_t i = 0; i < single.size(); ++i) EXPECT_NEAR(single[i], a[b * single.size() + i], 1e-12);
  }
}

TEST(Model, AuxHeadsAreDistinct) {
  const SegmentationModel model(tiny(), 4);
  std::set<std::string> names;
  for (const Parameter& p : model.parameters("aux.")) names.insert(p.name);
  EXPECT_EQ(names.size(), 2u * 3u * 2u);
  ModelConfig paper = tiny();
  paper.aux_per_type = 4;
  EXPECT_EQ(SegmentationModel(paper, 0).parameters("aux.").size(), 2u * 12u);

  Rng rng(3);
  const FeatureMap f = model.extract_features(random_tensor({1, 8, 8, 3}, rng, 0, 1));
  const Tensor a = model.aux_classify(f, 0, PerturbationType::kNoise).logits.value();
  const Tensor b = model.aux_classify(f, 1, PerturbationType::kNoise).logits.value();
  const Tensor c = model.aux_classify(f, 0, PerturbationType::kDropout).logits.value();
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
  EXPECT_GT(max_abs_diff(a, c), 1e-6);
  EXPECT_THROW(model.aux_classify(f, 2, PerturbationType::kNoise), Error);
}

TEST(Model, AuxHeadWithClassifierWeightsMatchesClassify) {
  SegmentationModel model(tiny(), 5);
  std::vector<std::pair<std::string, Tensor>> copy;
  for (const Parameter& p : model.parameters("classifier.")) {
    copy.emplace_back("aux.noise.0." + p.name.substr(std::string("classifier.").size()), p.var.value());
  }
  model.load_parameters(copy, false);
  Rng rng(4);
  const FeatureMap f = model.extract_features(random_tensor({1, 8, 8, 3}, rng, 0, 1));
  EXPECT_EQ(model.aux_classify(f, 0, PerturbationType::kNoise).probs.value().storage(),
            model.classify(f, false).probs.value().storage());
}

TEST(Model, SeedsChangeInitialisation) {
  Rng rng(5);
  const Tensor x = random_tensor({1, 8, 8, 3}, rng, 0, 1);
  const SegmentationModel a(tiny(), 1), b(tiny(), 2), c(tiny(), 1);
  const Tensor fa = a.extract_features(x).values.value();
  EXPECT_GT(max_abs_diff(fa, b.extract_features(x).values.value()), 1e-6);
  EXPECT_EQ(fa.storage(), c.extract_features(x).values.value().storage());
}

TEST(Model, ZeroProjectorGivesZeroProjection) {
  SegmentationModel model(tiny(), 6);
  for (Parameter p : model.parameters("projector.")) p.var.mutable_value().fill(0.0);
  Rng rng(6);
  const ProjectionMap z = model.project(model.extract_features(random_tensor({1, 8, 8, 3}, rng, 0, 1)));
  for (double v : z.values.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(Model, ConstantFeaturesGiveConstantProbs) {
  const SegmentationModel model(tiny(), 7);
  FeatureMap f;
  f.values = Var::constant(Tensor(Shape{1, 3, 3, 8}, 0.3));
  f.stride = 4;
  f.input_h = f.input_w = 12;
  const Tensor p = model.classify(f, false).probs.value();
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], p[i % 3]);
}

TEST(Model, ProjectionIsPixelwise) {
  const SegmentationModel model(tiny(), 8);
  Rng rng(9);
  FeatureMap f;
  f.values = Var::constant(random_tensor({1, 1, 4, 8}, rng));
  FeatureMap g = f;
  Tensor swapped = f.values.value();
  std::swap_ranges(swapped.data(), swapped.data() + 8, swapped.data() + 24);
  g.values = Var::constant(swapped);
  const Tensor a = model.project(f).values.value();
  const Tensor b = model.project(g).values.value();
  for (int k = 0; k < 6; ++k) {
    EXPECT_EQ(a[k], b[18 + k]);
    EXPECT_EQ(a[6 + k], b[6 + k]);
  }
}

TEST(Model, EndToEndGradient) {
  const SegmentationModel model(tiny(2), 9);
  Rng rng(10);
  const Tensor x = random_tensor({1, 8, 8, 3}, rng, 0, 1);
  LabelMap mask(1, 8, 8);
  mask.labels = testing_support::random_labels(64, 2, rng);
  const auto params = model.parameters();
  auto loss = [&] { return supervised_ce(model.classify(model.extract_features(x), true), mask, 255); };
  for (Parameter p : params) p.var.zero_grad();
  backward(loss());
  for (const char* name : {"backbone.stem.weight", "backbone.decoder0.bias", "classifier.weight"}) {
    auto it = std::find_if(params.begin(), params.end(), [&](const Parameter& q) { return q.name == name; });
    ASSERT_NE(it, params.end()) << name;
    Parameter param = *it;
    Parameter* p = &param;
    const Tensor analytic = p->var.grad();
    for (std::size_t i : {std::size_t{0}, p->var.value().size() / 2}) {
      const double h = 1e-6;
      const double orig = p->var.value()[i];
      p->var.mutable_value()[i] = orig + h;
      double plus;
      double minus;
      {
        NoGradGuard guard;
        plus = loss().item();
        p->var.mutable_value()[i] = orig - h;
        minus = loss().item();
      }
      p->var.mutable_value()[i] = orig;
      const double numeric = (plus - minus) / (2 * h);
      EXPECT_NEAR(analytic[i], numeric, 1e-3 * std::max(std::abs(numeric), 1e-4)) << name << "[" << i << "]";
    }
  }
}

TEST(Model, ProjectorGradientReachesBackbone) {
  const SegmentationModel model(tiny(), 11);
  Rng rng(12);
  backward(ops::mean(model.project(model.extract_features(random_tensor({1, 8, 8, 3}, rng, 0, 1))).values));
  double norm = 0.0;
  for (const Parameter& p : model.parameters("backbone."))
    for (double g : p.var.grad().storage()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
}

TEST(Model, ArgmaxLabels) {
  const Tensor p(Shape{1, 1, 2, 3}, std::vector<double>{0.1, 0.7, 0.2, 0.5, 0.2, 0.3});
  EXPECT_EQ(argmax_labels(p).labels, (std::vector<int>{1, 0}));
}

TEST(Model, RejectsBadConfig) {
  ModelConfig cfg = tiny();
  cfg.backbone.stride = 6;
  EXPECT_THROW(SegmentationModel(cfg, 0), Error);
}

TEST(Checkpoint, RoundTrip) {
  const SegmentationModel model(tiny(), 12);
  Checkpoint ckpt;
  ckpt.epoch = 3;
  ckpt.step = 42;
  ckpt.config_yaml = "model:\n  classes: 3\n";
  for (const Parameter& p : model.parameters()) ckpt.parameters.emplace_back(p.name, p.var.value());
  ckpt.optimizer_state = {{"w", Tensor(Shape{1, 1, 1, 2}, std::vector<double>{0.25, -1.5})}};
  ckpt.bank_capacity = 10;
  ckpt.bank = {{{1.0, 2.0}, 1, 0.8, 7}, {{3.0, 4.0}, 0, 0.9, 8}};
  const auto file = std::filesystem::temp_directory_path() / "crcfp_ckpt_test.ckpt";
  save_checkpoint(file, ckpt);
  const Checkpoint back = load_checkpoint(file);
  EXPECT_EQ(back.epoch, 3);
  EXPECT_EQ(back.step, 42);
  EXPECT_EQ(back.config_yaml, ckpt.config_yaml);
  ASSERT_EQ(back.parameters.size(), ckpt.parameters.size());
  for (std::size_t i = 0; i < ckpt.parameters.size(); ++i) {
    EXPECT_EQ(back.parameters[i].first, ckpt.parameters[i].first);
    EXPECT_EQ(back.parameters[i].second.storage(), ckpt.parameters[i].second.storage());
  }
  EXPECT_EQ(back.optimizer_state[0].second.storage(), ckpt.optimizer_state[0].second.storage());
  ASSERT_EQ(back.bank.size(), 2u);
  EXPECT_EQ(back.bank[1].vector, (std::vector<double>{3.0, 4.0}));
  EXPECT_EQ(back.bank[0].step, 7);

  SegmentationModel other(tiny(), 99);
  other.load_parameters(back.parameters, true);
  Rng rng(13);
  const Tensor x = random_tensor({1, 8, 8, 3}, rng, 0, 1);
  EXPECT_EQ(other.extract_features(x).values.value().storage(), model.extract_features(x).values.value().storage());
}

TEST(Checkpoint, RejectsGarbageAndTruncation) {
  const auto dir = std::filesystem::temp_directory_path();
  {
    std::ofstream(dir / "crcfp_garbage.ckpt") << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(dir / "crcfp_garbage.ckpt"), Error);
  Checkpoint ckpt;
  ckpt.parameters = {{"w", Tensor(Shape{1, 1, 4, 4}, 1.0)}};
  save_checkpoint(dir / "crcfp_full.ckpt", ckpt);
  std::filesystem::resize_file(dir / "crcfp_full.ckpt", std::filesystem::file_size(dir / "crcfp_full.ckpt") - 10);
  EXPECT_THROW(load_checkpoint(dir / "crcfp_full.ckpt"), Error);
  EXPECT_THROW(load_checkpoint(dir / "crcfp_does_not_exist.ckpt"), Error);
}
