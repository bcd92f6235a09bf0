#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "crcfp/analysis.hpp"
#include "crcfp/checkpoint.hpp"
#include "crcfp/config.hpp"
#include "crcfp/evaluation.hpp"
#include "crcfp/experiment.hpp"
#include "crcfp/toy_corpus.hpp"

namespace {

using namespace crcfp;

struct CommonRun {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonRun& c) {
  cmd->add_option("config", c.config_path, "YAML config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key, key=value (repeatable)");
  cmd->add_option("--run-dir", c.run_dir, "Run directory (overrides run.dir)");
  cmd->add_flag("-q,--quiet", c.quiet, "Only print the final report");
}

ExperimentConfig load(const CommonRun& c) {
  ExperimentConfig cfg = load_config(c.config_path);
  apply_overrides(cfg, c.overrides);
  if (!c.run_dir.empty()) cfg.run_dir = c.run_dir;
  return cfg;
}

ExperimentOptions progress(bool quiet) {
  ExperimentOptions opts;
  if (!quiet) {
    opts.on_step = [](std::uint64_t seed, const StepRecord& r) {
      if (r.step % 20 != 0) return;
      std::fprintf(stderr, "seed %llu step %lld epoch %lld lr %.3g sup %.4f total %.4f\n",
                   static_cast<unsigned long long>(seed), static_cast<long long>(r.step),
                   static_cast<long long>(r.epoch), r.lr, r.losses.sup, r.losses.total);
    };
  }
  return opts;
}

/// Rebuilds the model stored in a checkpoint.
SegmentationModel load_model(const std::string& checkpoint, ExperimentConfig* config_out = nullptr) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const ExperimentConfig cfg = parse_config(ckpt.config_yaml);
  SegmentationModel model(cfg.model, 0);
  model.load_parameters(ckpt.parameters, true);
  if (config_out) *config_out = cfg;
  return model;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

std::string label_of(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised segmentation with context-aware consistency and cross-consistency"};
  app.require_subcommand(1);

  // train
  CommonRun train_args;
  std::vector<std::uint64_t> seeds;
  std::string scheme;
  auto* train = app.add_subcommand("train", "Train one model per seed and evaluate on the test set");
  add_common(train, train_args);
  train->add_option("--seed", seeds, "Seed(s) replacing train.seeds");
  train->add_option("--scheme", scheme, "Loss preset: suponly, scheme1, scheme2, scheme3");

  // eval
  std::string eval_ckpt, eval_manifest, eval_out;
  int eval_tile = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a labelled corpus");
  eval->add_option("checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("manifest", eval_manifest, "Corpus manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "Directory for report.txt and report.json");
  eval->add_option("--tile", eval_tile, "Evaluate images larger than this tile by tile");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Diagnostics of a trained model");
  analyze->require_subcommand(1);
  std::string an_ckpt, an_manifest, an_out, space = "feature";
  int patch = 0, offset = -1, limit = 0;
  std::size_t pixels = 100;
  std::uint64_t embed_seed = 0;
  auto* density = analyze->add_subcommand("density", "Neighbourhood density maps");
  density->add_option("checkpoint", an_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  density->add_option("manifest", an_manifest, "Corpus manifest")->required()->check(CLI::ExistingFile);
  density->add_option("--out", an_out, "Output directory")->required();
  density->add_option("--patch", patch, "Patch side (default from the checkpoint config)");
  density->add_option("--offset", offset, "Neighbour offset, 0 for the patch side");
  density->add_option("--space", space, "feature or rgb")->check(CLI::IsMember({"feature", "rgb"}));
  density->add_option("--limit", limit, "Only the first N images");
  auto* embed = analyze->add_subcommand("embed", "Export per-pixel feature embeddings");
  embed->add_option("checkpoint", an_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  embed->add_option("manifest", an_manifest, "Corpus manifest")->required()->check(CLI::ExistingFile);
  embed->add_option("--out", an_out, "Output CSV file")->required();
  embed->add_option("--pixels", pixels, "Pixels per image");
  embed->add_option("--seed", embed_seed, "Sampling seed");

  // gen-toy
  ToyCorpusOptions toy;
  std::string toy_out;
  auto* gen = app.add_subcommand("gen-toy", "Generate the synthetic multi-centre corpus");
  gen->add_option("out", toy_out, "Output directory")->required();
  gen->add_option("--images", toy.images, "Training images")->capture_default_str();
  gen->add_option("--test-images", toy.test_images, "Held-out test images")->capture_default_str();
  gen->add_option("--size", toy.size, "Image side")->capture_default_str();
  gen->add_option("--classes", toy.classes, "Classes including background")->capture_default_str();
  gen->add_option("--centers", toy.centers, "Acquisition centres")->capture_default_str();
  gen->add_option("--seed", toy.seed, "Seed")->capture_default_str();
  gen->add_option("--color-shift", toy.color_shift, "Radius of the per-centre colour shift")
      ->capture_default_str();

  // ablate
  CommonRun ablate_args;
  std::string negatives, ks, ablate_out;
  bool schemes = false;
  auto* ablate = app.add_subcommand("ablate", "Sweep negatives, K or loss schemes and print tables");
  add_common(ablate, ablate_args);
  ablate->add_option("--negatives", negatives, "Comma-separated bank sizes, e.g. 100,500,1200");
  ablate->add_option("--k", ks, "Comma-separated auxiliary classifiers per perturbation");
  ablate->add_flag("--schemes", schemes, "Compare SupOnly and Scheme.1-3");
  ablate->add_option("--out", ablate_out, "Also write the tables to this file");

  // config
  bool list_keys = false;
  auto* config_cmd = app.add_subcommand("config", "Print the default config or the valid keys");
  config_cmd->add_flag("--keys", list_keys, "List every key with a description");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      ExperimentConfig cfg = load(train_args);
      if (!seeds.empty()) cfg.train.seeds = seeds;
      if (!scheme.empty()) apply_scheme(cfg, parse_scheme(scheme), cfg.train.weights);
      const auto [corpus, test] = load_experiment_data(cfg);
      const ExperimentReport report = run_experiment(cfg, corpus, test, progress(train_args.quiet));
      std::cout << format_report(report);
      std::cout << "run directory: " << cfg.run_dir << "\n";
    } else if (*eval) {
      ExperimentConfig cfg;
      const SegmentationModel model = load_model(eval_ckpt, &cfg);
      const std::vector<Sample> samples = load_corpus(eval_manifest);
      const ConfusionMatrix cm = evaluate(model, samples, {cfg.train.ignore_index, eval_tile});
      const Metrics m = compute_metrics(cm);
      std::cout << format_metrics(m);
      if (!eval_out.empty()) write_report(eval_out, "report", m, cm);
      if (!m.defined) return 2;
    } else if (*density) {
      ExperimentConfig cfg;
      const SegmentationModel model = load_model(an_ckpt, &cfg);
      DensityOptions opts = cfg.analysis.density;
      if (patch > 0) opts.patch = patch;
      if (offset >= 0) opts.neighbor_offset = offset;
      const std::vector<Sample> samples = load_corpus(an_manifest);
      const std::size_t n = limit > 0 ? std::min<std::size_t>(limit, samples.size()) : samples.size();
      for (std::size_t i = 0; i < n; ++i) {
        const Tensor values = space == "rgb" ? samples[i].image : upsampled_features(model, samples[i].image);
        write_density(std::filesystem::path(an_out) / (samples[i].source_id + "_" + space),
                      density_map(values, opts));
      }
      std::cout << "wrote " << n << " density maps to " << an_out << "\n";
    } else if (*embed) {
      const SegmentationModel model = load_model(an_ckpt);
      const std::vector<Sample> samples = load_corpus(an_manifest);
      EmbedOptions opts;
      opts.pixels_per_image = pixels;
      opts.seed = embed_seed;
      const auto rows = export_embeddings(model, samples, an_out, opts);
      std::cout << "wrote " << rows.size() << " rows to " << an_out << "\n";
    } else if (*gen) {
      const ToyCorpus corpus = generate_toy_corpus(toy_out, toy);
      std::cout << "manifest: " << corpus.manifest.string() << "\n"
                << "test manifest: " << corpus.test_manifest.string() << "\n";
    } else if (*ablate) {
      const ExperimentConfig base = load(ablate_args);
      const auto [corpus, test] = load_experiment_data(base);
      const ExperimentOptions opts = progress(ablate_args.quiet);
      std::string tables;
      auto sweep = [&](const std::string& title, const std::string& tag, const std::vector<std::string>& labels,
                       const std::function<void(ExperimentConfig&, std::size_t)>& apply) {
        std::vector<std::pair<std::string, ExperimentReport>> rows;
        for (std::size_t i = 0; i < labels.size(); ++i) {
          ExperimentConfig cfg = base;
          apply(cfg, i);
          cfg.run_dir = (std::filesystem::path(base.run_dir) / (tag + "_" + labels[i])).string();
          rows.emplace_back(labels[i], run_experiment(cfg, corpus, test, opts));
        }
        tables += format_table(title, rows) + "\n";
      };
      if (!negatives.empty()) {
        const std::vector<double> values = parse_list(negatives);
        std::vector<std::string> labels;
        for (double v : values) labels.push_back(label_of(v));
        sweep("Negative samples", "negatives", labels, [&](ExperimentConfig& cfg, std::size_t i) {
          cfg.train.bank_capacity = cfg.train.negatives = static_cast<std::size_t>(values[i]);
        });
      }
      if (!ks.empty()) {
        const std::vector<double> values = parse_list(ks);
        std::vector<std::string> labels;
        for (double v : values) labels.push_back(label_of(v));
        sweep("Auxiliary classifiers per perturbation (K)", "k", labels,
              [&](ExperimentConfig& cfg, std::size_t i) {
                set_value(cfg, "perturb.k", std::to_string(static_cast<int>(values[i])));
              });
      }
      if (schemes) {
        const std::vector<Scheme> all{Scheme::kSupOnly, Scheme::kScheme1, Scheme::kScheme2, Scheme::kScheme3};
        std::vector<std::string> labels;
        for (Scheme s : all) labels.push_back(to_string(s));
        sweep("Network schemes", "scheme", labels, [&](ExperimentConfig& cfg, std::size_t i) {
          apply_scheme(cfg, all[i], base.train.weights);
        });
      }
      if (tables.empty()) throw Error("nothing to ablate; pass --negatives, --k or --schemes");
      std::cout << tables;
      if (!ablate_out.empty()) {
        std::ofstream out(ablate_out);
        out << tables;
        if (!out) throw Error("cannot write " + ablate_out);
      }
    } else if (*config_cmd) {
      if (list_keys) {
        for (const ConfigKey& k : config_keys()) std::cout << k.key << "  " << k.help << "\n";
      } else {
        std::cout << to_yaml(ExperimentConfig{});
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
