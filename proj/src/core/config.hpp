#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "eval.hpp"
#include "phantom.hpp"
#include "train.hpp"

namespace ph {

// Evaluation knobs beyond the judge and DeC trainers.
struct EvalOptions {
  JudgeConfig judge{};
  DecConfig dec{};
  int mask_shift_px = 8;
  bool mask_shift = true;   // run the shift diagnostic over the test lesions
  int iterate_k = 0;        // extra generator passes to score, 0 = skip

  void validate() const;
};

// Where a run reads and writes. Flags may override these, nothing else.
struct PathConfig {
  std::string data_dir = "data";
  std::string run_dir = "runs/default";
  std::string input_dir;    // raw volumes for `prepare`
  std::string panel_dir = "study/panels";
  std::string blind_dir = "study/blind";
  std::string scores_csv;   // filled-in rater scores for `scores`
  std::string realness_csv; // optional realness calls
  std::string realness_truth_csv;
};

// One JSON document drives every command. Parsing is strict: unknown keys
// are rejected with their full field path, and values are type checked.
struct ExperimentConfig {
  PhantomSpec phantom{};
  int phantom_count = 400;
  double train_frac = 0.6;
  double val_frac = 0.2;
  double test_frac = 0.2;
  double maskpool_frac = 0.1;
  std::uint64_t split_seed = 1;
  double max_js = 0.5;      // healthy/pathological histogram divergence gate

  PreprocessConfig preprocess{};
  TrainConfig train{};
  EvalOptions eval{};
  PathConfig paths{};

  std::vector<double> semi_ratios{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::string> ablations{"none", "no_cycle_hh", "cyclegan"};
  int study_bootstrap = 1000;
  std::uint64_t study_seed = 7;
  int panel_count = 0;      // cap on study panels, 0 = all test lesions

  void validate() const;
  nlohmann::json to_json() const;

  // Missing fields keep their defaults; unknown or mistyped fields throw
  // config_error naming the path, e.g. "train.lr: expected a number".
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace ph
