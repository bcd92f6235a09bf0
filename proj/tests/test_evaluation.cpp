#include <gtest/gtest.h>

#include <fstream>

#include "crcfp/evaluation.hpp"
#include "support.hpp"

using namespace crcfp;

namespace {

struct Hand {
  std::vector<double> iou, dice;
  double accuracy;
};

Hand hand_metrics(const std::vector<std::vector<std::int64_t>>& m) {
  const std::size_t c = m.size();
  Hand h;
  double trace = 0.0, total = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    double fp = 0.0, fn = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      total += m[k][j];
      if (j != k) {
        fn += m[k][j];
        fp += m[j][k];
      }
    }
    const double tp = m[k][k];
    trace += tp;
    h.iou.push_back(tp / (tp + fp + fn));
    h.dice.push_back(2 * tp / (2 * tp + fp + fn));
  }
  h.accuracy = trace / total;
  return h;
}

const std::vector<std::vector<std::vector<std::int64_t>>> kFixed{
    {{3, 1}, {2, 4}},
    {{10, 0}, {0, 5}},
    {{0, 4}, {6, 0}},
    {{5, 1, 0}, {2, 7, 1}, {0, 3, 9}},
    {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}},
    {{100, 2, 3}, {4, 50, 6}, {7, 8, 25}},
    {{9, 0, 0, 1}, {0, 8, 2, 0}, {1, 1, 7, 1}, {0, 0, 3, 6}},
    {{2, 3, 5, 7}, {11, 13, 17, 19}, {23, 29, 31, 37}, {41, 43, 47, 53}},
    {{50, 1, 0, 0, 2}, {3, 40, 1, 0, 0}, {0, 2, 30, 4, 0}, {1, 0, 5, 20, 1}, {0, 0, 0, 2, 10}},
    {{1, 0, 0, 0, 0}, {0, 2, 0, 0, 0}, {0, 0, 3, 0, 0}, {0, 0, 0, 4, 1}, {0, 0, 0, 1, 5}},
};

}  // namespace

TEST(Metrics, WorkedExample) {
  const Metrics m = compute_metrics(ConfusionMatrix::from_rows({{3, 1}, {2, 4}}));
  ASSERT_TRUE(m.defined);
  EXPECT_DOUBLE_EQ(m.iou[0], 0.5);
  EXPECT_DOUBLE_EQ(m.iou[1], 4.0 / 7.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.7);
  EXPECT_DOUBLE_EQ(m.miou, (0.5 + 4.0 / 7.0) / 2);
  EXPECT_DOUBLE_EQ(m.class_accuracy[0], 0.75);
  EXPECT_DOUBLE_EQ(m.mean_class_accuracy, (0.75 + 4.0 / 6.0) / 2);
}

TEST(Metrics, MatchesHandArithmeticOnFixedMatrices) {
  for (const auto& rows : kFixed) {
    const Metrics m = compute_metrics(ConfusionMatrix::from_rows(rows));
    const Hand h = hand_metrics(rows);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      EXPECT_DOUBLE_EQ(m.iou[k], h.iou[k]);
      EXPECT_DOUBLE_EQ(m.dice[k], h.dice[k]);
    }
    EXPECT_DOUBLE_EQ(m.accuracy, h.accuracy);
  }
}

TEST(Metrics, DiceIouIdentity) {
  for (const auto& rows : kFixed) {
    const Metrics m = compute_metrics(ConfusionMatrix::from_rows(rows));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      EXPECT_NEAR(m.dice[k], 2 * m.iou[k] / (1 + m.iou[k]), 1e-15);
    }
  }
}

TEST(Metrics, PerfectAndDisjoint) {
  const Metrics perfect = compute_metrics(ConfusionMatrix::from_rows({{4, 0, 0}, {0, 2, 0}, {0, 0, 0}}));
  EXPECT_EQ(perfect.iou[0], 1.0);
  EXPECT_EQ(perfect.dice[1], 1.0);
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.miou, 1.0);
  EXPECT_EQ(perfect.absent_classes(), std::vector<int>{2});
  EXPECT_FALSE(perfect.present[2]);

  const Metrics disjoint = compute_metrics(ConfusionMatrix::from_rows({{0, 4}, {3, 5}}));
  EXPECT_EQ(disjoint.iou[0], 0.0);
  EXPECT_EQ(disjoint.dice[0], 0.0);
}

TEST(Metrics, EmptyMatrixIsUndefined) {
  const Metrics m = compute_metrics(ConfusionMatrix(3));
  EXPECT_FALSE(m.defined);
  EXPECT_TRUE(std::isnan(m.miou));
  EXPECT_TRUE(std::isnan(m.accuracy));
}

TEST(Metrics, PermutationEquivariance) {
  const auto& rows = kFixed[8];
  const std::vector<int> perm{3, 0, 4, 1, 2};
  std::vector<std::vector<std::int64_t>> permuted(5, std::vector<std::int64_t>(5));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) permuted[perm[i]][perm[j]] = rows[i][j];
  const Metrics a = compute_metrics(ConfusionMatrix::from_rows(rows));
  const Metrics b = compute_metrics(ConfusionMatrix::from_rows(permuted));
  for (int i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(a.iou[i], b.iou[perm[i]]);
    EXPECT_DOUBLE_EQ(a.dice[i], b.dice[perm[i]]);
  }
  EXPECT_DOUBLE_EQ(a.miou, b.miou);
  EXPECT_DOUBLE_EQ(a.accuracy, b.accuracy);
}

TEST(ConfusionMatrix, AccumulateMatchesLoopOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    LabelMap pred(1, 8, 8), truth(1, 8, 8);
    pred.labels = testing_support::random_labels(64, 4, rng);
    truth.labels = testing_support::random_labels(64, 5, rng);
    for (int& v : truth.labels)
      if (v == 4) v = kDefaultIgnoreIndex;
    ConfusionMatrix cm(4);
    cm.accumulate(pred, truth, kDefaultIgnoreIndex);
    const auto want = oracle::confusion(pred.labels, truth.labels, 4, kDefaultIgnoreIndex);
    std::int64_t ignored = 0;
    for (int v : truth.labels) ignored += v == kDefaultIgnoreIndex;
    for (int t = 0; t < 4; ++t)
      for (int p = 0; p < 4; ++p) EXPECT_EQ(cm.at(t, p), want[t][p]);
    EXPECT_EQ(cm.ignored(), ignored);
    EXPECT_EQ(cm.total() + ignored, 64);
  }
}

TEST(ConfusionMatrix, AllIgnoredLeavesCountsUnchanged) {
  ConfusionMatrix cm(3);
  cm.accumulate(LabelMap(1, 4, 4, 1), LabelMap(1, 4, 4, kDefaultIgnoreIndex), kDefaultIgnoreIndex);
  EXPECT_EQ(cm.total(), 0);
  EXPECT_EQ(cm.ignored(), 16);
}

TEST(ConfusionMatrix, MergeIsAdditive) {
  Rng rng(2);
  LabelMap p1(1, 4, 4), t1(1, 4, 4), p2(1, 4, 4), t2(1, 4, 4);
  for (LabelMap* m : {&p1, &t1, &p2, &t2}) m->labels = testing_support::random_labels(16, 3, rng);
  ConfusionMatrix a(3), b(3), both(3);
  a.accumulate(p1, t1, 255);
  b.accumulate(p2, t2, 255);
  both.accumulate(p1, t1, 255);
  both.accumulate(p2, t2, 255);
  a += b;
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p) EXPECT_EQ(a.at(t, p), both.at(t, p));
}

TEST(ConfusionMatrix, RejectsBadInput) {
  ConfusionMatrix cm(2);
  EXPECT_THROW(cm.accumulate(LabelMap(1, 2, 2), LabelMap(1, 3, 2), 255), Error);
  EXPECT_THROW(cm.accumulate(LabelMap(1, 2, 2, 5), LabelMap(1, 2, 2), 255), Error);
  ConfusionMatrix other(3);
  EXPECT_THROW(cm += other, Error);
}

TEST(Evaluate, CountsEveryLabelledPixel) {
  ModelConfig cfg;
  cfg.classes = 3;
  cfg.backbone = {4, 8, 4, 1};
  cfg.projection_dim = cfg.projector_hidden = 8;
  cfg.aux_per_type = 1;
  const SegmentationModel model(cfg, 0);
  Rng rng(3);
  std::vector<Sample> samples(2);
  for (Sample& s : samples) {
    s.image = testing_support::random_tensor({1, 20, 24, 3}, rng, 0, 1);
    s.mask = LabelMap(1, 20, 24, 1);
  }
  samples[1].mask->labels[0] = kDefaultIgnoreIndex;
  const ConfusionMatrix cm = evaluate(model, samples);
  EXPECT_EQ(cm.total(), 2 * 20 * 24 - 1);
  EXPECT_EQ(cm.ignored(), 1);
  EvalOptions tiled;
  tiled.tile = 8;
  EXPECT_EQ(evaluate(model, samples, tiled).total(), 2 * 20 * 24 - 1);
}

TEST(Report, WritesTextAndJson) {
  const ConfusionMatrix cm = ConfusionMatrix::from_rows({{3, 1}, {2, 4}});
  const Metrics m = compute_metrics(cm);
  const auto dir = std::filesystem::temp_directory_path() / "crcfp_report_test";
  std::filesystem::remove_all(dir);
  write_report(dir, "r", m, cm);
  std::ifstream json(dir / "r.json");
  const std::string text((std::istreambuf_iterator<char>(json)), {});
  EXPECT_NE(text.find("\"miou\""), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "r.txt"));
  EXPECT_NE(format_metrics(m, {"a", "b"}).find("a"), std::string::npos);
}
