#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "crcfp/analysis.hpp"
#include "crcfp/toy_corpus.hpp"
#include "crcfp/trainer.hpp"
#include "support.hpp"

using namespace crcfp;
using testing_support::random_tensor;

namespace {

using Grid = std::vector<std::vector<std::vector<double>>>;

Grid to_grid(const Tensor& t) {
  Grid g(t.h(), std::vector<std::vector<double>>(t.w(), std::vector<double>(t.c())));
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x)
      for (int d = 0; d < t.c(); ++d) g[y][x][d] = t.at(0, y, x, d);
  return g;
}

void expect_matches_oracle(const Tensor& t, int patch, int offset, double tol) {
  const DensityMap m = density_map(t, {patch, offset});
  const Grid g = to_grid(t);
  ASSERT_EQ(m.h, t.h());
  ASSERT_EQ(m.w, t.w());
  int valid = 0;
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) {
      const double want = oracle::density_at(g, y, x, patch, offset > 0 ? offset : patch);
      ASSERT_EQ(m.is_valid(y, x), !std::isnan(want)) << y << "," << x;
      if (!m.is_valid(y, x)) continue;
      ++valid;
      EXPECT_NEAR(m.at(y, x), want, tol * std::max(1.0, std::abs(want)));
    }
  }
  EXPECT_GT(valid, 0);
}

}  // namespace

TEST(Density, MatchesNestedLoopOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor t = random_tensor({1, 64, 64, 4}, rng);
    expect_matches_oracle(t, 5, 0, 1e-9);
    expect_matches_oracle(t, 7, 3, 1e-9);
  }
  expect_matches_oracle(random_tensor({1, 64, 64, 4}, rng), 21, 0, 1e-9);
}

TEST(Density, RampMatchesOracle) {
  Tensor ramp(Shape{1, 64, 64, 1});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) ramp.at(0, y, x, 0) = x;
  expect_matches_oracle(ramp, 21, 0, 1e-12);
  const DensityMap m = density_map(ramp, {21, 0});
  // Horizontal neighbours differ by 21 at every pixel; vertical ones by 0.
  EXPECT_NEAR(m.at(31, 31), 2.0 * 21.0 * 21.0 / 4.0, 1e-9);
}

TEST(Density, ConstantInputIsZero) {
  const Tensor t(Shape{1, 40, 40, 3}, 0.37);
  const DensityMap m = density_map(t, {5, 0});
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.is_valid(y, x)) EXPECT_EQ(m.at(y, x), 0.0);
}

TEST(Density, Errors) {
  EXPECT_THROW(density_map(Tensor(Shape{1, 62, 64, 1}), {21, 0}), Error);
  EXPECT_THROW(density_map(Tensor(Shape{1, 64, 64, 1}), {20, 0}), Error);
}

TEST(Density, WritesPngAndNpy) {
  Rng rng(2);
  const DensityMap m = density_map(random_tensor({1, 20, 24, 2}, rng), {3, 0});
  const auto stem = std::filesystem::temp_directory_path() / "crcfp_density_test";
  write_density(stem, m);
  EXPECT_TRUE(std::filesystem::exists(stem.string() + ".png"));
  std::ifstream npy(stem.string() + ".npy", std::ios::binary);
  std::string header(128, '\0');
  npy.read(header.data(), 128);
  EXPECT_EQ(header.substr(1, 5), "NUMPY");
  EXPECT_NE(header.find("'<f4'"), std::string::npos);
  EXPECT_NE(header.find("(20, 24)"), std::string::npos);
  EXPECT_EQ(std::filesystem::file_size(stem.string() + ".npy"), 128u + 20u * 24u * 4u);
}

TEST(Embeddings, ShapeLabelsAndDeterminism) {
  ModelConfig cfg;
  cfg.backbone = {4, 6, 4, 1};
  cfg.classes = 3;
  cfg.projection_dim = cfg.projector_hidden = 4;
  cfg.aux_per_type = 1;
  const SegmentationModel model(cfg, 0);
  Rng rng(3);
  std::vector<Sample> samples(1);
  samples[0].image = random_tensor({1, 16, 20, 3}, rng, 0, 1);
  samples[0].source_id = "img";
  LabelMap mask(1, 16, 20);
  mask.labels = testing_support::random_labels(320, 3, rng);
  samples[0].mask = mask;

  const auto dir = std::filesystem::temp_directory_path();
  const auto rows = export_embeddings(model, samples, dir / "crcfp_embed_a.csv", {100, 7, ','});
  const auto again = export_embeddings(model, samples, dir / "crcfp_embed_b.csv", {100, 7, ','});
  ASSERT_EQ(rows.size(), 100u);
  std::ifstream a(dir / "crcfp_embed_a.csv"), b(dir / "crcfp_embed_b.csv");
  const std::string ta((std::istreambuf_iterator<char>(a)), {}), tb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(ta, tb);

  std::istringstream in(ta);
  std::string line;
  std::getline(in, line);
  int n = 0;
  while (std::getline(in, line)) {
    const auto cols = std::count(line.begin(), line.end(), ',') + 1;
    EXPECT_EQ(cols, 6 + 2);
    std::istringstream fields(line);
    std::string id, label;
    std::getline(fields, id, ',');
    std::getline(fields, label, ',');
    EXPECT_EQ(id, "img");
    EXPECT_EQ(std::stoi(label), mask.at(0, rows[n].y, rows[n].x));
    EXPECT_EQ(rows[n].label, std::stoi(label));
    ++n;
  }
  EXPECT_EQ(n, 100);
}

TEST(Density, TrainedFeaturesPeakOnBoundaries) {
  const auto dir = std::filesystem::temp_directory_path() / "crcfp_density_toy";
  std::filesystem::remove_all(dir);
  ToyCorpusOptions toy;
  toy.images = 24;
  toy.test_images = 2;
  toy.size = 64;
  toy.centers = 2;
  const ToyCorpus corpus = generate_toy_corpus(dir, toy);
  ModelConfig mcfg;
  mcfg.backbone = {4, 16, 8, 1};
  mcfg.classes = 4;
  mcfg.projection_dim = mcfg.projector_hidden = 8;
  mcfg.aux_per_type = 1;
  SegmentationModel model(mcfg, 0);
  TrainConfig tcfg;
  tcfg.epochs = 12;
  tcfg.warmup_epochs = 11;
  tcfg.input_size = 64;
  tcfg.base_lr = 0.03;
  tcfg.weights = {1.0, 0.0, 0.0, 0.0};
  tcfg.checkpoint_every = 0;
  auto train = load_corpus(corpus.manifest);
  fit(model, SplitResult{train, {}}, tcfg, 0);

  double boundary = 0.0, interior = 0.0;
  int nb = 0, ni = 0;
  for (const Sample& s : load_corpus(corpus.test_manifest)) {
    const DensityMap m = density_map(upsampled_features(model, s.image), {5, 0});
    const LabelMap& gt = *s.mask;
    for (int y = 0; y < m.h; ++y) {
      for (int x = 0; x < m.w; ++x) {
        if (!m.is_valid(y, x)) continue;
        bool edge = false;
        for (int dy = -2; dy <= 2; ++dy)
          for (int dx = -2; dx <= 2; ++dx) edge |= gt.at(0, y + dy, x + dx) != gt.at(0, y, x);
        (edge ? boundary : interior) += m.at(y, x);
        (edge ? nb : ni) += 1;
      }
    }
  }
  ASSERT_GT(nb, 0);
  ASSERT_GT(ni, 0);
  EXPECT_GT(boundary / nb, interior / ni);
}
