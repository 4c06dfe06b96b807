#pragma once

#include <string>
#include <vector>

#include "image.hpp"
#include "rng.hpp"

namespace ph {

enum class Split { train, val, test, maskpool };
enum class DomainTag { healthy_pool, pathological_pool };

const char* to_string(Split s);
const char* to_string(SliceLabel l);
Split split_from_string(const std::string& s);
SliceLabel label_from_string(const std::string& s);

struct DataSample {
  std::string id;
  int subject_id = 0;
  ImageSlice image;
  PathologyMask mask;
  SliceLabel label = SliceLabel::healthy;
  bool deformed = false;
  Split split = Split::train;
};

struct Dataset {
  int height = 0;
  int width = 0;
  std::vector<DataSample> samples;

  // Checks split disjointness per subject, mask binaryness, label/mask
  // agreement, and image range. Throws data_error.
  void validate() const;

  Dataset filter(SliceLabel label, Split split) const;
  std::vector<const PathologyMask*> masks_of(Split split) const;
  size_t count(SliceLabel label, Split split) const;
};

struct PreprocessConfig {
  double clip_percentile = 0.995;
  int slice_window = 60;
  int crop_h = 208;
  int crop_w = 160;

  void validate() const;  // throws config_error
};

struct Volume {
  int d = 0, h = 0, w = 0;
  std::vector<float> v;

  Volume() = default;
  Volume(int depth, int height, int width, float fill = 0.0f)
      : d(depth), h(height), w(width), v(static_cast<size_t>(depth) * height * width, fill) {}
  float& at(int z, int y, int x) { return v[(static_cast<size_t>(z) * h + y) * w + x]; }
  float at(int z, int y, int x) const { return v[(static_cast<size_t>(z) * h + y) * w + x]; }
};

// Clip to the volume-wide percentile intensity V (order statistic at index
// ceil(p*n)-1 of the sorted voxels), rescale by V into [0,1], keep the middle
// slice_window axial slices, and center-crop (zero-pad when smaller).
std::vector<ImageSlice> preprocess_volume(const Volume& volume, const PreprocessConfig& cfg);

// Healthy iff the mask is all-zero. Throws data_error on non-binary masks.
SliceLabel label_slice(const PathologyMask& mask);

// Jensen-Shannon divergence between two histograms, log base 2 so the result
// lies in [0,1]. Histograms are normalized internally.
double js_divergence(const std::vector<double>& hist_a, const std::vector<double>& hist_b);

// 64 uniform bins over [0,1].
std::vector<double> intensity_histogram(const std::vector<const ImageSlice*>& images,
                                        int bins = 64);

// Assigns splits per subject: a maskpool share is carved from the
// pathological subjects first (mask donors, disjoint from training), the rest
// goes to train/val/test by the given fractions.
void assign_splits(std::vector<DataSample>& samples, double train_frac, double val_frac,
                   double test_frac, double maskpool_frac, Rng& rng);

// Directory layout: manifest.json plus one raw little-endian float32 file per
// image and one uint8 file per mask, row-major, no header.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace ph
