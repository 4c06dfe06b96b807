#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "losses.hpp"
#include "nets.hpp"

namespace ph {

enum class TrainSetting { paired, unpaired, semi };
enum class Ablation { none, no_cycle_hh, cycle_hp, lsgan };
enum class Baseline { none, conditional_gan, cyclegan };

std::string to_string(TrainSetting s);
std::string to_string(Ablation a);
std::string to_string(Baseline b);
TrainSetting train_setting_from_string(const std::string& s);
Ablation ablation_from_string(const std::string& s);
Baseline baseline_from_string(const std::string& s);

struct TrainConfig {
  TrainSetting setting = TrainSetting::paired;
  double semi_ratio = 1.0;  // fraction of pathological training samples carrying masks; semi only
  int epochs = 300;
  int batch_size = 4;
  int critic_iters_warm = 50;
  int warm_epochs = 20;
  int critic_iters = 5;
  double lr = 1e-4;
  double beta1 = 0.5;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::none;
  Baseline baseline = Baseline::none;
  NetConfig net{};
  losses::LossWeights weights{};
  int checkpoint_every = 0;  // keep a numbered checkpoint every k epochs, 0 = none

  void validate() const;  // throws config_error
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Everything a trained run consists of. Nets not used by the configured
// variant stay null: d_m exists only when some pathological sample lacks a
// ground-truth mask, d_p only for cycle_hp and cyclegan, g_hp only for
// cyclegan, and the baselines drop s/r.
struct ModelBundle {
  TrainConfig cfg;
  GeneratorNet g{nullptr};
  SegmentorNet s{nullptr};
  ReconstructorNet r{nullptr};
  CriticNet d_x{nullptr};
  CriticNet d_m{nullptr};
  CriticNet d_p{nullptr};
  GeneratorNet g_hp{nullptr};
  std::int64_t step = 0;  // generator updates performed
  int epoch = 0;          // epochs completed
};

struct TrainStats {
  std::vector<std::int64_t> gen_updates_per_epoch;
  std::vector<std::int64_t> critic_x_updates_per_epoch;
  std::vector<std::int64_t> critic_m_updates_per_epoch;
  std::int64_t mask_batches_built = 0;  // ground-truth or pool mask tensors materialized
  std::int64_t dice_terms = 0;          // generator steps that included supervised Dice
  std::int64_t adv_seg_terms = 0;       // generator steps that included adversarial segmentation
  bool resumed = false;
};

struct TrainItem {
  const ImageSlice* image = nullptr;
  const PathologyMask* mask = nullptr;
};

struct TrainData {
  int height = 0;
  int width = 0;
  std::vector<TrainItem> pathological;
  std::vector<TrainItem> healthy;
  std::vector<const PathologyMask*> mask_pool;
};

// Pulls the train split plus the mask pool out of a prepared dataset.
TrainData make_train_data(const Dataset& ds);

// Runs the configured variant, writing losses.csv, config.json, last.ckpt per
// epoch and final.ckpt into out_dir. Resumes from out_dir/last.ckpt when one
// exists and its config snapshot matches. Throws numeric_error after saving
// diagnostic.ckpt if a loss goes non-finite.
ModelBundle train_model(const TrainData& data, const TrainConfig& cfg,
                        const std::filesystem::path& out_dir, TrainStats* stats = nullptr);

// Rebuilds the nets recorded in a checkpoint and loads their parameters.
ModelBundle load_bundle(const std::filesystem::path& ckpt_path);

// Column names of losses.csv for this config, in file order.
std::vector<std::string> loss_csv_columns(const TrainConfig& cfg);

}  // namespace ph
