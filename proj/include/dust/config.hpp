#pragma once

#include <filesystem>
#include <string>

#include "dust/training.hpp"
#include "dust/unet.hpp"
#include "json.hpp"

namespace dust {

enum class AblationMode { Supervised, St, StSample, Full };

std::string to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& name);

/// Everything a run depends on. Loaded from JSON: absent keys take these
/// defaults, unknown keys and ill-typed values are rejected.
struct ExperimentConfig {
  std::string data_dir = "data";
  std::size_t image_size = 80;
  std::size_t crop_size = 64;
  std::size_t n_classes = 4;

  std::size_t depth = 4;
  std::size_t base_channels = 16;
  bool instance_norm = true;

  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  std::size_t pretrain_epochs = 40;
  std::size_t stage1_epochs = 40;
  std::size_t stage2_epochs = 40;
  std::size_t batch_size = 8;
  std::size_t labeled_per_batch = 4;
  std::size_t pretrain_iterations_per_epoch = 0;  // 0: natural epoch
  std::size_t stage_iterations_per_epoch = 0;

  std::size_t k_checkpoints = 5;
  double partition_fraction = 0.5;
  double unsup_weight = 1.0;
  bool refresh_every_epoch = false;
  bool include_background_in_dice = true;

  AblationMode ablation_mode = AblationMode::Full;
  std::uint64_t seed = 1;
  std::string eval_split = "test";

  bool operator==(const ExperimentConfig&) const = default;
};

void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::filesystem::path& path);
void write_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

/// Hex FNV-1a of the resolved JSON with seed and ablation_mode removed, so
/// arms and seeds of one experiment share a digest.
std::string config_digest(const ExperimentConfig& cfg);

UNetConfig unet_config(const ExperimentConfig& cfg);
StageOptions stage_options(const ExperimentConfig& cfg);

}  // namespace dust
