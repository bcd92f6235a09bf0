#include <gtest/gtest.h>

#include <fstream>

#include "crcfp/trainer.hpp"
#include "support.hpp"

using namespace crcfp;
using testing_support::random_tensor;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.backbone = {4, 8, 4, 1};
  cfg.classes = 3;
  cfg.projection_dim = 8;
  cfg.projector_hidden = 8;
  cfg.aux_per_type = 1;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.warmup_epochs = 1;
  cfg.batch_labeled = 2;
  cfg.batch_unlabeled = 2;
  cfg.input_size = 16;
  cfg.base_lr = 0.01;
  cfg.threshold = 0.2;
  cfg.perturb.k = 1;
  cfg.bank_capacity = 64;
  cfg.negatives = 32;
  cfg.bank_push_cap = 16;
  cfg.checkpoint_every = 0;
  return cfg;
}

std::vector<Sample> samples(int n, bool labeled, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out(n);
  for (int i = 0; i < n; ++i) {
    Sample& s = out[i];
    s.image = random_tensor({1, 20, 20, 3}, rng, 0, 1);
    s.source_id = (labeled ? "l" : "u") + std::to_string(i);
    s.center_id = "c0";
    if (labeled) {
      LabelMap m(1, 20, 20);
      for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
          m.at(0, y, x) = x < 7 ? 0 : (x < 14 ? 1 : 2);
          s.image.at(0, y, x, m.at(0, y, x)) += 0.5;
        }
      s.mask = m;
    }
  }
  return out;
}

double grad_norm(const SegmentationModel& model, const std::string& prefix) {
  double norm = 0.0;
  for (const Parameter& p : model.parameters(prefix))
    for (double g : p.var.grad().storage()) norm += std::abs(g);
  return norm;
}

struct Rig {
  TrainConfig cfg = tiny_train();
  SegmentationModel model{tiny_model(), 0};
  MemoryBank bank{cfg.bank_capacity};
  Sgd optimizer{model.parameters(), cfg.sgd};
  TrainState state{model, bank, optimizer};
  Schedule schedule = Schedule::make(cfg, 4, 4);
  LabeledBatch labeled;
  UnlabeledBatch unlabeled;

  Rig() {
    Rng a(1), b(2), c(3);
    const auto l = samples(2, true, 10);
    const auto u = samples(2, false, 11);
    labeled = make_labeled_batch(l, cfg, a);
    unlabeled = make_unlabeled_batch(u, cfg, b, c);
  }
};

}  // namespace

TEST(Batches, Shapes) {
  Rig rig;
  EXPECT_EQ(rig.labeled.images.shape(), (Shape{2, 16, 16, 3}));
  EXPECT_EQ(rig.labeled.masks.n, 2);
  EXPECT_EQ(rig.unlabeled.crops1.shape(), (Shape{2, 16, 16, 3}));
  EXPECT_EQ(rig.unlabeled.rects1.size(), 2u);
}

TEST(TrainStep, WarmupTouchesOnlySupervisedPath) {
  Rig rig;
  ASSERT_TRUE(rig.schedule.warmup(0));
  const StepRecord r = train_step(rig.labeled, &rig.unlabeled, rig.state, 0, rig.schedule, rig.cfg, 0);
  EXPECT_TRUE(r.warmup);
  EXPECT_FALSE(r.has_cont || r.has_cross || r.has_ent);
  EXPECT_EQ(r.losses.total, r.losses.sup);
  EXPECT_GT(grad_norm(rig.model, "backbone."), 0.0);
  EXPECT_GT(grad_norm(rig.model, "classifier."), 0.0);
  EXPECT_EQ(grad_norm(rig.model, "projector."), 0.0);
  EXPECT_EQ(grad_norm(rig.model, "aux."), 0.0);
  EXPECT_TRUE(rig.bank.empty());
}

TEST(TrainStep, AfterWarmupEveryGroupReceivesGradient) {
  Rig rig;
  const std::int64_t step = rig.schedule.warmup_steps;
  const StepRecord r = train_step(rig.labeled, &rig.unlabeled, rig.state, step, rig.schedule, rig.cfg, 0);
  EXPECT_FALSE(r.warmup);
  EXPECT_TRUE(r.has_cont && r.has_cross && r.has_ent);
  EXPECT_GT(r.losses.cont, 0.0);
  for (const char* prefix : {"backbone.", "classifier.", "projector.", "aux.noise.", "aux.feat_dropout.",
                             "aux.dropout."}) {
    EXPECT_GT(grad_norm(rig.model, prefix), 0.0) << prefix;
  }
  EXPECT_FALSE(rig.bank.empty());
  EXPECT_LE(rig.bank.size(), 4 * rig.cfg.bank_push_cap);
}

TEST(TrainStep, BankEntriesAreNeverModified) {
  Rig rig;
  const std::int64_t step = rig.schedule.warmup_steps;
  train_step(rig.labeled, &rig.unlabeled, rig.state, step, rig.schedule, rig.cfg, 0);
  ASSERT_FALSE(rig.bank.empty());
  const std::deque<BankEntry> before = rig.bank.entries();
  train_step(rig.labeled, &rig.unlabeled, rig.state, step + 1, rig.schedule, rig.cfg, 0);
  const auto& after = rig.bank.entries();
  // Entries that survived eviction keep their exact values.
  std::size_t matched = 0;
  for (const BankEntry& e : after) {
    for (const BankEntry& b : before) {
      if (b.step == e.step && b.vector == e.vector) {
        ++matched;
        break;
      }
    }
  }
  EXPECT_GE(matched, std::min(before.size(), after.size() - std::min(after.size(), 4 * rig.cfg.bank_push_cap)));
}

TEST(TrainStep, ZeroWeightsReproduceSupOnlyPath) {
  Rig rig;
  rig.cfg.weights = {1.0, 0.0, 0.0, 0.0};
  const StepRecord r =
      train_step(rig.labeled, &rig.unlabeled, rig.state, rig.schedule.warmup_steps, rig.schedule, rig.cfg, 0);
  EXPECT_FALSE(r.has_cont || r.has_cross || r.has_ent);
  EXPECT_EQ(grad_norm(rig.model, "projector."), 0.0);
  EXPECT_EQ(grad_norm(rig.model, "aux."), 0.0);
  EXPECT_TRUE(rig.bank.empty());
}

TEST(TrainStep, NonFiniteLossThrowsWithParts) {
  Rig rig;
  for (Parameter p : rig.model.parameters("classifier.")) p.var.mutable_value().fill(std::nan(""));
  try {
    train_step(rig.labeled, &rig.unlabeled, rig.state, 0, rig.schedule, rig.cfg, 0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("sup"), std::string::npos) << e.what();
  }
}

TEST(TrainStep, OverfitsOneBatch) {
  Rig rig;
  rig.cfg.base_lr = 0.05;
  Schedule long_schedule = rig.schedule;
  long_schedule.warmup_steps = 1000;
  long_schedule.max_steps = 1000;
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 50; ++i) {
    const StepRecord r = train_step(rig.labeled, nullptr, rig.state, i, long_schedule, rig.cfg, 0);
    if (i == 0) first = r.losses.total;
    last = r.losses.total;
  }
  EXPECT_LT(last, first);
}

TEST(Fit, DeterministicTrajectories) {
  TrainConfig cfg = tiny_train();
  cfg.epochs = 8;
  cfg.step_limit = 10;
  SplitResult data{samples(4, true, 20), samples(4, false, 21)};
  auto run = [&] {
    SegmentationModel model(tiny_model(), 5);
    return fit(model, data, cfg, 5).history;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), 10u);
  ASSERT_EQ(b.size(), 10u);
  bool saw_unlabeled = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].losses.total, b[i].losses.total, 1e-6);
    EXPECT_EQ(a[i].losses.cont, b[i].losses.cont);
    EXPECT_EQ(a[i].lr, b[i].lr);
    saw_unlabeled |= a[i].has_cont;
  }
  EXPECT_TRUE(saw_unlabeled);
}

TEST(Fit, SchemesShareTheWarmup) {
  TrainConfig cfg = tiny_train();
  cfg.step_limit = 2;
  SplitResult data{samples(4, true, 20), samples(4, false, 21)};
  SegmentationModel m1(tiny_model(), 5), m2(tiny_model(), 5);
  const auto full = fit(m1, data, cfg, 5).history;
  cfg.weights = {1.0, 0.0, 0.0, 0.0};
  const auto sup = fit(m2, data, cfg, 5).history;
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(full[i].losses.sup, sup[i].losses.sup);
}

TEST(Fit, WritesLogAndCheckpoints) {
  TrainConfig cfg = tiny_train();
  cfg.epochs = 2;
  cfg.checkpoint_every = 1;
  SplitResult data{samples(4, true, 30), samples(4, false, 31)};
  const auto val = samples(2, true, 32);
  const auto dir = std::filesystem::temp_directory_path() / "crcfp_fit_test";
  std::filesystem::remove_all(dir);
  SegmentationModel model(tiny_model(), 1);
  FitOptions opts;
  opts.run_dir = dir;
  opts.config_yaml = "x: 1\n";
  opts.validation = val;
  const FitResult r = fit(model, data, cfg, 1, opts);
  EXPECT_EQ(r.history.size(), 4u);
  EXPECT_TRUE(r.best_miou.has_value());
  for (const char* f : {"metrics.log", "checkpoints/epoch_1.ckpt", "checkpoints/epoch_2.ckpt",
                        "checkpoints/last.ckpt", "checkpoints/best.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream log(dir / "metrics.log");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) lines += line.find("\"step\"") != std::string::npos;
  EXPECT_GE(lines, 4);
  const Checkpoint last = load_checkpoint(dir / "checkpoints/last.ckpt");
  EXPECT_EQ(last.step, 4);
  EXPECT_EQ(last.config_yaml, "x: 1\n");
}

TEST(Fit, ResumeContinuesTheSameTrajectory) {
  TrainConfig cfg = tiny_train();
  cfg.epochs = 2;
  cfg.checkpoint_every = 1;
  SplitResult data{samples(4, true, 40), samples(4, false, 41)};
  const auto dir = std::filesystem::temp_directory_path() / "crcfp_resume_test";
  std::filesystem::remove_all(dir);
  SegmentationModel full(tiny_model(), 2);
  FitOptions opts;
  opts.run_dir = dir;
  const auto history = fit(full, data, cfg, 2, opts).history;

  SegmentationModel resumed(tiny_model(), 2);
  FitOptions again;
  again.resume = load_checkpoint(dir / "checkpoints/epoch_1.ckpt");
  const auto tail = fit(resumed, data, cfg, 2, again).history;
  ASSERT_EQ(tail.size(), 2u);
  EXPECT_NEAR(tail[0].losses.total, history[2].losses.total, 1e-9);
  EXPECT_NEAR(tail[1].losses.total, history[3].losses.total, 1e-9);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.warmup_epochs = cfg.epochs;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.base_lr = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}
