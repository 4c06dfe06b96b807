#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "image.hpp"

namespace ph {

// 8-bit binary PGM, values scaled from [0,1].
void write_pgm(const ImageSlice& img, const std::filesystem::path& path);
ImageSlice read_pgm(const std::filesystem::path& path);

// Synthetic outputs of one method, aligned with the shared input list.
struct MethodImages {
  std::string method_id;
  std::vector<ImageSlice> images;
};

struct PanelSet {
  std::filesystem::path panel_dir;
  std::filesystem::path blind_dir;
  int n_panels = 0;
  int n_methods = 0;
};

// The synthetic-tile order shown on one panel: entry i is the method index
// displayed at position i+1. Independent permutation per panel.
std::vector<int> panel_permutation(std::uint64_t seed, int panel_id, int n_methods);

// Writes panel montages (input, ground-truth mask, then each method's output
// in randomized order) plus scores_template.csv and rater instructions into
// panel_dir, and blinding_map.csv into blind_dir. Raters see panel_dir only;
// nothing in it identifies the methods.
PanelSet build_panels(const std::vector<MethodImages>& methods,
                      const std::vector<ImageSlice>& inputs,
                      const std::vector<PathologyMask>& masks, std::uint64_t seed,
                      const std::filesystem::path& panel_dir,
                      const std::filesystem::path& blind_dir);

struct RaterScore {
  std::string rater_id;
  int panel_id = 0;
  int position = 0;        // 1-based synthetic-tile position on the panel
  std::string criterion;   // healthiness | identity | deformation_correction
  int score = 0;           // binary
  std::string method_id;   // resolved from the blinding map
};

extern const char* const kCriteria[3];

// Reads filled-in rater scores and joins them against the blinding map.
// Rejects non-binary scores, unknown criteria, unknown (panel, position)
// pairs, and duplicate (rater, panel, position, criterion) rows.
std::vector<RaterScore> ingest_scores(const std::filesystem::path& scores_csv,
                                      const std::filesystem::path& blinding_map_csv);

struct MethodCriterionStat {
  std::string method_id;
  std::string criterion;
  double mean = 0.0;      // of per-panel consensus scores
  double std_dev = 0.0;   // sample standard deviation of the consensus scores
  double p_vs_best = 1.0; // bootstrapped paired t-test against the best other method
  std::string comparator; // the method it was tested against
  int n_panels = 0;
};

struct StudySummary {
  std::vector<MethodCriterionStat> rows;  // sorted by (criterion, method)
};

// Consensus score = mean across raters per (panel, method, criterion). The
// p-value tests the paired per-panel consensus differences against the
// highest-mean other method via a bootstrap of centered differences.
StudySummary aggregate_scores(const std::vector<RaterScore>& scores, int bootstrap_resamples,
                              std::uint64_t seed);

// Bootstrapped paired t-test on per-pair differences: resamples centered
// differences, p = (1 + #{|t*| >= |t_obs|}) / (resamples + 1). Degenerate
// inputs (all differences zero) give p = 1.
double bootstrap_paired_p(const std::vector<double>& diffs, int resamples, std::uint64_t seed);

// Correlation between a dichotomous and a continuous variable; algebraically
// equal to Pearson on the same pairs. Needs both classes present.
double point_biserial(const std::vector<int>& binary, const std::vector<double>& metric);

struct RealnessCall {
  std::string rater_id;
  std::string image_id;
  int says_real = 0;  // binary
};

struct RealnessRow {
  std::string source;   // method id or "real"
  double realness = 0;  // mean per-image fraction of raters saying real
  double std_dev = 0;   // sample std over per-image fractions
  int n_images = 0;
};

// truth maps image_id -> source. Rows sorted by source name.
std::vector<RealnessRow> realness_summary(const std::vector<RealnessCall>& calls,
                                          const std::vector<std::pair<std::string, std::string>>& truth);

void write_study_csv(const StudySummary& s, const std::filesystem::path& path);
StudySummary read_study_csv(const std::filesystem::path& path);
void write_realness_csv(const std::vector<RealnessRow>& rows, const std::filesystem::path& path);

}  // namespace ph
