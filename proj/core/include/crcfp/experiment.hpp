#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crcfp/config.hpp"
#include "crcfp/evaluation.hpp"
#include "crcfp/trainer.hpp"

namespace crcfp {

struct Aggregate {
  double mean = 0.0;
  /// Population standard deviation.
  double std = 0.0;
  double median = 0.0;
};
Aggregate aggregate(std::span<const double> values);

struct SeedRun {
  std::uint64_t seed = 0;
  Metrics metrics;
  ConfusionMatrix confusion{1};
  FitResult fit;
};

struct ExperimentReport {
  std::vector<SeedRun> runs;
  Aggregate miou;
  Aggregate dice;
  Aggregate accuracy;
};

struct ExperimentOptions {
  /// Write the config echo, per-seed checkpoints and metrics logs and the
  /// reports below `config.run_dir`.
  bool write_files = true;
  std::function<void(std::uint64_t seed, const StepRecord&)> on_step;
};

/// For every seed: split `corpus` with that seed, train a fresh model and
/// evaluate it on `test`. Layout of the run directory:
///   config.yaml, seed_<s>/checkpoints/, seed_<s>/metrics.log,
///   reports/seed_<s>.{txt,json}, reports/summary.{txt,json}
ExperimentReport run_experiment(const ExperimentConfig& config, const std::vector<Sample>& corpus,
                                const std::vector<Sample>& test,
                                const ExperimentOptions& options = {});

/// Loads the training and test manifests named by the config.
std::pair<std::vector<Sample>, std::vector<Sample>> load_experiment_data(const ExperimentConfig& config);

/// Per-seed rows followed by a mean (std) row.
std::string format_report(const ExperimentReport& report);
std::string report_json(const ExperimentReport& report);

/// One row per labelled report, mIoU / Dice / accuracy as mean (std).
std::string format_table(const std::string& title,
                         const std::vector<std::pair<std::string, ExperimentReport>>& rows);

}  // namespace crcfp
