#pragma once

#include <string>
#include <vector>

#include "config.hpp"
#include "eval.hpp"
#include "study.hpp"

namespace ph {

// Dataset construction result, shared by `phantom` and `prepare`.
struct DataSummary {
  int n_slices = 0;
  int n_subjects = 0;
  int n_pathological = 0;
  int n_healthy = 0;
  int n_train = 0, n_val = 0, n_test = 0, n_maskpool = 0;
  double js = 0.0;  // healthy vs pathological train-split intensity histograms
};

struct TrainOutcome {
  std::string run_dir;
  int epochs = 0;
  std::int64_t steps = 0;
  bool skipped = false;  // final checkpoint already matched the config
  bool resumed = false;
  std::string final_hash;
};

struct ShiftStats {
  int total = 0;  // pathological test slices examined
  int valid = 0;  // slices where an in-brain shift existed
  int wins = 0;   // valid slices where the shifted reference scored higher
};

struct EvalOutcome {
  MetricReport report;
  double residual = 0.0;  // cycle H-H mean l1 on the healthy test split
  bool has_residual = false;
  ShiftStats shift;
  bool has_shift = false;
  std::vector<IterPoint> iterate;
  double judge_dice = 0.0;
  double dec_accuracy = 0.0;
};

struct SweepRow {
  double ratio = 0.0;
  std::string dir;
  EvalOutcome eval;
};

struct VariantRow {
  std::string variant;
  std::string dir;
  EvalOutcome eval;
};

// Each command writes its outputs under the configured paths and drops the
// exact config snapshot that produced them as experiment.json.
DataSummary cmd_phantom(const ExperimentConfig& cfg);
DataSummary cmd_prepare(const ExperimentConfig& cfg);
TrainOutcome cmd_train(const ExperimentConfig& cfg);
EvalOutcome cmd_eval(const ExperimentConfig& cfg);
std::vector<SweepRow> cmd_sweep_semi(const ExperimentConfig& cfg);
std::vector<VariantRow> cmd_ablate(const ExperimentConfig& cfg);
PanelSet cmd_panels(const ExperimentConfig& cfg);
StudySummary cmd_scores(const ExperimentConfig& cfg);

// Joins every report, sweep, ablation, and study CSV under run_dir into
// summary.csv and returns the rendered table.
std::string cmd_report(const ExperimentConfig& cfg);

// Judge and DeC classifiers are cached under <data_dir>/aux keyed by their
// config and the dataset snapshot; a mismatch retrains.
Judge ensure_judge(const Dataset& ds, const ExperimentConfig& cfg);
DecClassifier ensure_dec(const Dataset& ds, const ExperimentConfig& cfg);

// Applies a named ablation or baseline variant to a training config.
TrainConfig variant_config(const TrainConfig& base, const std::string& name);

}  // namespace ph
