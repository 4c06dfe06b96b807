#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "image.hpp"

namespace ph {

struct PhantomSpec {
  uint64_t seed = 0;
  int height = 64;
  int width = 64;
  double lesion_probability = 0.5;
  double lesion_intensity = 0.25;       // additive brightness in [0,1]
  int lesion_radius_min = 3;            // pixels
  int lesion_radius_max = 7;
  bool deform = false;
  double deform_magnitude = 3.0;        // pixels of peak displacement

  void validate() const;                // throws config_error
};

struct PhantomSample {
  ImageSlice image;
  PathologyMask mask;
  SliceLabel label = SliceLabel::healthy;
  int subject_id = 0;
  bool deformed = false;

  // Tissue image just before lesion injection. Kept for oracle tests and
  // debugging only; never serialized to disk datasets.
  ImageSlice latent_healthy;
  // Lesion geometry as drawn (radius < 0 when no lesion).
  int lesion_cy = -1;
  int lesion_cx = -1;
  int lesion_radius = -1;
};

// Deterministic procedural generator: same (spec, n) gives bit-identical
// samples. Sample i depends only on (spec.seed, i).
std::vector<PhantomSample> generate_phantom(const PhantomSpec& spec, int n);

// Smooth radial push with a Gaussian window, peak displacement = `magnitude`
// pixels at one window-width from the center. magnitude 0 returns the input
// unchanged. The default center is the image center; the generator passes the
// lesion centroid.
ImageSlice apply_deformation(const ImageSlice& image, double magnitude, uint64_t seed);
ImageSlice apply_deformation_at(const ImageSlice& image, double cy, double cx, double magnitude,
                                double sigma, uint64_t seed);

}  // namespace ph
