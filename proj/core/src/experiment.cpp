#include "crcfp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

namespace crcfp {
namespace {

std::string mean_std(const Aggregate& a) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << 100.0 * a.mean << " (" << 100.0 * a.std << ")";
  return out.str();
}

nlohmann::json aggregate_json(const Aggregate& a) {
  return {{"mean", a.mean}, {"std", a.std}, {"median", a.median}};
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
}

}  // namespace

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  if (values.empty()) return a;
  const double n = static_cast<double>(values.size());
  for (double v : values) a.mean += v;
  a.mean /= n;
  for (double v : values) a.std += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(a.std / n);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  a.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return a;
}

std::pair<std::vector<Sample>, std::vector<Sample>> load_experiment_data(const ExperimentConfig& config) {
  if (config.data.manifest.empty()) throw Error("data.manifest is not set");
  if (config.data.test_manifest.empty()) throw Error("data.test_manifest is not set");
  return {load_corpus(config.data.manifest), load_corpus(config.data.test_manifest)};
}

ExperimentReport run_experiment(const ExperimentConfig& config, const std::vector<Sample>& corpus,
                                const std::vector<Sample>& test, const ExperimentOptions& options) {
  config.validate();
  const std::filesystem::path root = config.run_dir;
  const std::string echo = to_yaml(config);
  if (options.write_files) {
    std::filesystem::create_directories(root / "reports");
    write_text(root / "config.yaml", echo);
  }
  std::vector<Sample> validation;
  if (!config.data.val_manifest.empty()) validation = load_corpus(config.data.val_manifest);

  ExperimentReport report;
  for (std::uint64_t seed : config.train.seeds) {
    const SplitResult split = split_labeled(corpus, {config.data.split, config.data.fraction, seed});
    SegmentationModel model(config.model, seed);
    FitOptions fit_options;
    if (options.write_files) fit_options.run_dir = root / ("seed_" + std::to_string(seed));
    fit_options.config_yaml = echo;
    fit_options.validation = validation;
    if (options.on_step) {
      fit_options.on_step = [&options, seed](const StepRecord& r) { options.on_step(seed, r); };
    }
    SeedRun run;
    run.seed = seed;
    run.fit = fit(model, split, config.train, seed, fit_options);
    run.confusion = evaluate(model, test, {config.train.ignore_index, config.data.eval_tile});
    run.metrics = compute_metrics(run.confusion);
    if (options.write_files) {
      write_report(root / "reports", "seed_" + std::to_string(seed), run.metrics, run.confusion);
    }
    report.runs.push_back(std::move(run));
  }
  std::vector<double> miou, dice, acc;
  for (const SeedRun& r : report.runs) {
    miou.push_back(r.metrics.miou);
    dice.push_back(r.metrics.mean_dice);
    acc.push_back(r.metrics.accuracy);
  }
  report.miou = aggregate(miou);
  report.dice = aggregate(dice);
  report.accuracy = aggregate(acc);
  if (options.write_files) {
    write_text(root / "reports" / "summary.txt", format_report(report));
    write_text(root / "reports" / "summary.json", report_json(report) + "\n");
  }
  return report;
}

std::string format_report(const ExperimentReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(12) << "seed" << std::setw(16) << "mIoU" << std::setw(16) << "Dice"
      << "Accuracy\n";
  for (const SeedRun& r : report.runs) {
    out << std::setw(12) << r.seed << std::setw(16) << 100.0 * r.metrics.miou << std::setw(16)
        << 100.0 * r.metrics.mean_dice << 100.0 * r.metrics.accuracy << "\n";
  }
  out << std::setw(12) << "mean (std)" << std::setw(16) << mean_std(report.miou) << std::setw(16)
      << mean_std(report.dice) << mean_std(report.accuracy) << "\n";
  out << std::setw(12) << "median" << std::setw(16) << 100.0 * report.miou.median << std::setw(16)
      << 100.0 * report.dice.median << 100.0 * report.accuracy.median << "\n";
  return out.str();
}

std::string report_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["runs"] = nlohmann::json::array();
  for (const SeedRun& r : report.runs) {
    j["runs"].push_back({{"seed", r.seed},
                         {"miou", r.metrics.miou},
                         {"dice", r.metrics.mean_dice},
                         {"accuracy", r.metrics.accuracy}});
  }
  j["miou"] = aggregate_json(report.miou);
  j["dice"] = aggregate_json(report.dice);
  j["accuracy"] = aggregate_json(report.accuracy);
  return j.dump(2);
}

std::string format_table(const std::string& title,
                         const std::vector<std::pair<std::string, ExperimentReport>>& rows) {
  std::ostringstream out;
  out << title << "\n";
  out << std::left << std::setw(14) << "#" << std::setw(18) << "mIoU" << std::setw(18) << "Dice"
      << "Accuracy\n";
  for (const auto& [label, r] : rows) {
    out << std::setw(14) << label << std::setw(18) << mean_std(r.miou) << std::setw(18)
        << mean_std(r.dice) << mean_std(r.accuracy) << "\n";
  }
  return out.str();
}

}  // namespace crcfp
