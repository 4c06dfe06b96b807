#include "phantom.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "rng.hpp"

namespace ph {
namespace {

constexpr double kPi = 3.14159265358979323846;
// Tissue intensities are capped below 1 so additive lesions stay strictly
// brighter after the [0,1] clamp.
constexpr float kTissueCap = 0.75f;

struct Ellipse {
  double cy, cx, ay, ax;
  double eval(double y, double x) const {
    double dy = (y - cy) / ay;
    double dx = (x - cx) / ax;
    return dy * dy + dx * dx;
  }
};

double coverage(double e, double sharp = 8.0) {
  return std::clamp((1.0 - e) * sharp, 0.0, 1.0);
}

float lerp(float a, float b, float t) { return a + t * (b - a); }

float sample_bilinear(const ImageSlice& img, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(img.h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.w - 1));
  int y0 = static_cast<int>(std::floor(y));
  int x0 = static_cast<int>(std::floor(x));
  int y1 = std::min(y0 + 1, img.h - 1);
  int x1 = std::min(x0 + 1, img.w - 1);
  float fy = static_cast<float>(y - y0);
  float fx = static_cast<float>(x - x0);
  float top = lerp(img.at(y0, x0), img.at(y0, x1), fx);
  float bot = lerp(img.at(y1, x0), img.at(y1, x1), fx);
  return lerp(top, bot, fy);
}

struct TextureWave {
  double ky, kx, phase, amp;
};

// Anatomy: concentric ellipses with per-subject jittered geometry plus a
// smooth cosine texture field, so slices carry identity-bearing detail.
ImageSlice draw_anatomy(const PhantomSpec& spec, Rng& rng, Ellipse& outer_out) {
  const int H = spec.height, W = spec.width;
  ImageSlice img(H, W, 0.0f);

  Ellipse outer{H / 2.0 + rng.uniform(-1.5, 1.5), W / 2.0 + rng.uniform(-1.5, 1.5),
                0.40 * H * (1.0 + rng.uniform(-0.08, 0.08)),
                0.36 * W * (1.0 + rng.uniform(-0.08, 0.08))};
  outer_out = outer;

  double base = 0.55 + rng.uniform(-0.04, 0.04);
  double rim_gain = 0.10 + rng.uniform(-0.02, 0.02);
  double deep_drop = 0.05 + rng.uniform(-0.01, 0.01);

  double vent_dy = 0.02 * H + rng.uniform(-1.0, 1.0);
  double vent_dx = 0.16 * W * (1.0 + rng.uniform(-0.1, 0.1));
  double vent_ay = 0.13 * H * (1.0 + rng.uniform(-0.1, 0.1));
  double vent_ax = 0.055 * W * (1.0 + rng.uniform(-0.1, 0.1));
  Ellipse vent_l{outer.cy + vent_dy, outer.cx - vent_dx, vent_ay, vent_ax};
  Ellipse vent_r{outer.cy + vent_dy, outer.cx + vent_dx, vent_ay, vent_ax};

  TextureWave waves[3];
  for (auto& wv : waves) {
    double period = rng.uniform(6.0, 16.0);
    double angle = rng.uniform(0.0, kPi);
    double k = 2.0 * kPi / period;
    wv = {k * std::sin(angle), k * std::cos(angle), rng.uniform(0.0, 2.0 * kPi),
          0.02 + rng.uniform(0.0, 0.015)};
  }

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double e = outer.eval(y, x);
      double cov = coverage(e);
      if (cov <= 0.0) continue;

      double val = base;
      // Bright cortical rim near the boundary.
      double rim = std::clamp((e - 0.78) * 10.0, 0.0, 1.0) * std::clamp((0.98 - e) * 10.0, 0.0, 1.0);
      val += rim_gain * rim;
      // Slightly darker deep region.
      val -= deep_drop * std::clamp((0.5 - e) * 6.0, 0.0, 1.0);

      double tex = 0.0;
      for (const auto& wv : waves) tex += wv.amp * std::cos(wv.ky * y + wv.kx * x + wv.phase);
      val += tex;

      // Dark ventricles.
      double vcov = std::max(coverage(vent_l.eval(y, x), 4.0), coverage(vent_r.eval(y, x), 4.0));
      val = val * (1.0 - vcov) + 0.18 * vcov;

      img.at(y, x) = std::min(static_cast<float>(val * cov), kTissueCap);
    }
  }
  return img;
}

// Pick a lesion center so a disk of radius r+2 fits inside the brain outline.
std::pair<int, int> place_lesion(const Ellipse& outer, int radius, int H, int W, Rng& rng) {
  double margin = radius + 2.0;
  for (int attempt = 0; attempt < 200; ++attempt) {
    double y = rng.uniform(outer.cy - outer.ay, outer.cy + outer.ay);
    double x = rng.uniform(outer.cx - outer.ax, outer.cx + outer.ax);
    bool ok = true;
    for (int k = 0; k < 8 && ok; ++k) {
      double a = 2.0 * kPi * k / 8.0;
      double py = y + margin * std::sin(a);
      double px = x + margin * std::cos(a);
      if (outer.eval(py, px) > 0.92 || py < 1 || px < 1 || py > H - 2 || px > W - 2) ok = false;
    }
    if (ok) return {static_cast<int>(std::lround(y)), static_cast<int>(std::lround(x))};
  }
  return {static_cast<int>(std::lround(outer.cy)), static_cast<int>(std::lround(outer.cx))};
}

void inject_lesion(ImageSlice& img, PathologyMask& mask, int cy, int cx, int radius,
                   double intensity) {
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      double d = std::hypot(static_cast<double>(y - cy), static_cast<double>(x - cx));
      if (d <= radius) mask.at(y, x) = 1;
      // 1-px feathered edge beyond the binary disk.
      double feather = std::clamp(radius + 1.0 - d, 0.0, 1.0);
      if (feather > 0.0) {
        img.at(y, x) = std::min(1.0f, img.at(y, x) + static_cast<float>(intensity * feather));
      }
    }
  }
}

}  // namespace

void PhantomSpec::validate() const {
  if (height < 8 || width < 8)
    throw config_error("phantom: image_size must be at least 8x8, got " + std::to_string(height) +
                       "x" + std::to_string(width));
  if (lesion_probability < 0.0 || lesion_probability > 1.0)
    throw config_error("phantom: lesion_probability must be in [0,1]");
  if (lesion_probability > 0.0 && lesion_intensity <= 0.0)
    throw config_error("phantom: lesion_intensity must be positive when lesions are enabled");
  if (lesion_intensity > 1.0) throw config_error("phantom: lesion_intensity must be in [0,1]");
  int cap = std::min(height, width) / 4;
  if (lesion_radius_min < 1 || lesion_radius_min > cap)
    throw config_error("phantom: lesion_radius_min must be in [1, min(H,W)/4]");
  if (lesion_radius_max < lesion_radius_min || lesion_radius_max > cap)
    throw config_error("phantom: lesion_radius_max must be in [radius_min, min(H,W)/4]");
  if (deform_magnitude < 0.0) throw config_error("phantom: deform_magnitude must be >= 0");
}

std::vector<PhantomSample> generate_phantom(const PhantomSpec& spec, int n) {
  spec.validate();
  if (n < 1) throw config_error("phantom: sample count must be >= 1");

  Rng root(spec.seed);
  std::vector<PhantomSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng = root.fork(static_cast<uint64_t>(i));
    PhantomSample s;
    s.subject_id = i;

    Ellipse outer{};
    ImageSlice anatomy = draw_anatomy(spec, rng, outer);

    bool lesion = rng.bernoulli(spec.lesion_probability);
    int radius = 0, cy = 0, cx = 0;
    if (lesion) {
      radius = rng.uniform_int(spec.lesion_radius_min, spec.lesion_radius_max);
      std::tie(cy, cx) = place_lesion(outer, radius, spec.height, spec.width, rng);
    }

    if (spec.deform) {
      if (lesion) {
        // Mass effect around the lesion site.
        double sigma = std::max(6.0, 2.0 * radius);
        anatomy = apply_deformation_at(anatomy, cy, cx, spec.deform_magnitude, sigma,
                                       rng.next_u64());
        s.deformed = true;
      } else if (rng.bernoulli(0.5)) {
        // Half of the healthy pool carries residual deformation so that a
        // deformation classifier has both classes to learn from.
        double sigma = rng.uniform(8.0, 14.0);
        double dy = outer.cy + rng.uniform(-4.0, 4.0);
        double dx = outer.cx + rng.uniform(-4.0, 4.0);
        anatomy = apply_deformation_at(anatomy, dy, dx, spec.deform_magnitude, sigma,
                                       rng.next_u64());
        s.deformed = true;
      }
    }

    s.latent_healthy = anatomy;
    s.image = anatomy;
    s.mask = PathologyMask(spec.height, spec.width, 0);
    if (lesion) {
      inject_lesion(s.image, s.mask, cy, cx, radius, spec.lesion_intensity);
      s.label = SliceLabel::pathological;
      s.lesion_cy = cy;
      s.lesion_cx = cx;
      s.lesion_radius = radius;
    } else {
      s.label = SliceLabel::healthy;
    }
    out.push_back(std::move(s));
  }
  return out;
}

ImageSlice apply_deformation_at(const ImageSlice& image, double cy, double cx, double magnitude,
                                double sigma, uint64_t /*seed*/) {
  if (magnitude < 0.0) throw config_error("deformation magnitude must be >= 0");
  if (magnitude == 0.0) return image;

  ImageSlice out(image.h, image.w);
  const double inv_s = 1.0 / sigma;
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      double ry = y - cy;
      double rx = x - cx;
      double d2 = (ry * ry + rx * rx) * inv_s * inv_s;
      // Radial push, peak displacement = magnitude at distance sigma.
      double g = magnitude * inv_s * std::exp(0.5 * (1.0 - d2));
      out.at(y, x) = sample_bilinear(image, y - g * ry, x - g * rx);
    }
  }
  return out;
}

ImageSlice apply_deformation(const ImageSlice& image, double magnitude, uint64_t seed) {
  Rng rng(seed);
  double cy = image.h / 2.0 + rng.uniform(-2.0, 2.0);
  double cx = image.w / 2.0 + rng.uniform(-2.0, 2.0);
  double sigma = (std::min(image.h, image.w) / 6.0) * (1.0 + rng.uniform(-0.15, 0.15));
  return apply_deformation_at(image, cy, cx, magnitude, sigma, seed);
}

}  // namespace ph
