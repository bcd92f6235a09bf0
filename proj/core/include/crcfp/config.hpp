#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crcfp/analysis.hpp"
#include "crcfp/data_pipeline.hpp"
#include "crcfp/model.hpp"
#include "crcfp/trainer.hpp"

namespace crcfp {

struct DataConfig {
  std::string manifest;
  std::string test_manifest;
  /// Optional selection set for best-by-mIoU checkpoints.
  std::string val_manifest;
  SplitMode split = SplitMode::kByCenter;
  Fraction fraction{1, 8};
  int eval_tile = 0;
};

struct AnalysisConfig {
  DensityOptions density{};
  EmbedOptions embed{};
};

/// Everything a run needs. Each field is addressable by a dotted key such as
/// `loss.w_cont` or `perturb.k`; see `config_keys()`.
struct ExperimentConfig {
  std::string run_dir = "runs/crcfp";
  DataConfig data{};
  ModelConfig model{};
  TrainConfig train{};
  AnalysisConfig analysis{};

  void validate() const;
};

/// Ablation presets: SupOnly uses only the supervised loss, Scheme1 adds the
/// contrastive loss, Scheme2 adds entropy and Scheme3 adds cross-consistency.
enum class Scheme { kSupOnly, kScheme1, kScheme2, kScheme3 };

Scheme parse_scheme(const std::string& name);
std::string to_string(Scheme s);
/// Sets the loss weights of the scheme; non-zero weights take the values of
/// `reference` (the paper defaults unless given).
void apply_scheme(ExperimentConfig& config, Scheme scheme, const LossWeights& reference = {});

struct ConfigKey {
  std::string key;
  std::string help;
};
const std::vector<ConfigKey>& config_keys();

/// Sets one field from its text form. Unknown keys and malformed values
/// throw; the former list every valid key.
void set_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_value(const ExperimentConfig& config, const std::string& key);
/// Applies "key=value" strings in order.
void apply_overrides(ExperimentConfig& config, std::span<const std::string> overrides);

/// Reads a nested YAML document; nesting levels join into dotted keys.
ExperimentConfig parse_config(const std::string& yaml);
ExperimentConfig load_config(const std::filesystem::path& file);
/// Full nested YAML with every key, defaults included.
std::string to_yaml(const ExperimentConfig& config);

}  // namespace crcfp
