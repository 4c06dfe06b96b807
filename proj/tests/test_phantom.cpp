#include <doctest.h>

#include <cmath>
#include <set>

#include "core/errors.hpp"
#include "core/phantom.hpp"

using namespace ph;

namespace {

PhantomSpec desk_spec(uint64_t seed = 7) {
  PhantomSpec s;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("lesion_probability zero gives only healthy samples") {
  PhantomSpec spec = desk_spec();
  spec.lesion_probability = 0.0;
  auto samples = generate_phantom(spec, 24);
  REQUIRE(samples.size() == 24);
  for (const auto& s : samples) {
    CHECK(s.label == SliceLabel::healthy);
    CHECK(s.mask.sum() == 0);
  }
}

TEST_CASE("same spec and count give bit-identical samples") {
  PhantomSpec spec = desk_spec(13);
  spec.deform = true;
  auto a = generate_phantom(spec, 16);
  auto b = generate_phantom(spec, 16);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.v == b[i].image.v);
    CHECK(a[i].mask.v == b[i].mask.v);
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].deformed == b[i].deformed);
  }
}

TEST_CASE("fixed-radius lesions match an independently rasterized disk") {
  PhantomSpec spec = desk_spec(3);
  spec.lesion_probability = 1.0;
  spec.lesion_radius_min = 4;
  spec.lesion_radius_max = 4;
  auto samples = generate_phantom(spec, 12);
  for (const auto& s : samples) {
    REQUIRE(s.label == SliceLabel::pathological);
    REQUIRE(s.lesion_radius == 4);
    uint64_t disk = 0;
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        bool in = (y - s.lesion_cy) * (y - s.lesion_cy) + (x - s.lesion_cx) * (x - s.lesion_cx) <=
                  s.lesion_radius * s.lesion_radius;
        disk += in;
        CHECK(static_cast<bool>(s.mask.at(y, x)) == in);
      }
    CHECK(s.mask.sum() == disk);
  }
}

TEST_CASE("sample invariants: label vs mask, value ranges, binary masks") {
  PhantomSpec spec = desk_spec(99);
  spec.deform = true;
  auto samples = generate_phantom(spec, 40);
  int pathological = 0;
  for (const auto& s : samples) {
    bool empty = s.mask.sum() == 0;
    CHECK((s.label == SliceLabel::healthy) == empty);
    pathological += !empty;
    for (float v : s.image.v) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    for (uint8_t m : s.mask.v) CHECK(m <= 1);
    if (s.label == SliceLabel::pathological) CHECK(s.deformed);
  }
  CHECK(pathological > 5);
  CHECK(pathological < 35);
}

TEST_CASE("lesion injection is local and strictly brightening") {
  PhantomSpec spec = desk_spec(21);
  spec.lesion_probability = 1.0;
  auto samples = generate_phantom(spec, 16);
  for (const auto& s : samples) {
    // 2 px euclidean dilation of the mask
    PathologyMask dilated(s.mask.h, s.mask.w, 0);
    for (int y = 0; y < s.mask.h; ++y)
      for (int x = 0; x < s.mask.w; ++x) {
        if (!s.mask.at(y, x)) continue;
        for (int dy = -2; dy <= 2; ++dy)
          for (int dx = -2; dx <= 2; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= s.mask.h || xx >= s.mask.w) continue;
            if (dy * dy + dx * dx <= 4) dilated.at(yy, xx) = 1;
          }
      }
    for (int y = 0; y < s.mask.h; ++y)
      for (int x = 0; x < s.mask.w; ++x) {
        if (!dilated.at(y, x))
          CHECK(s.image.at(y, x) == s.latent_healthy.at(y, x));
        if (s.mask.at(y, x))
          CHECK(s.image.at(y, x) > s.latent_healthy.at(y, x));
      }
  }
}

TEST_CASE("deformation with magnitude zero returns the input unchanged") {
  PhantomSpec spec = desk_spec(5);
  auto img = generate_phantom(spec, 1)[0].image;
  auto out = apply_deformation(img, 0.0, 42);
  CHECK(out.v == img.v);
}

TEST_CASE("deforming a uniform image keeps it uniform") {
  ImageSlice img(64, 64, 0.37f);
  auto out = apply_deformation(img, 3.0, 11);
  for (float v : out.v) CHECK(v == 0.37f);
}

TEST_CASE("grid crossings move by at most the magnitude and on average move") {
  const int n = 64, step = 8, off = 4;
  ImageSlice grid(n, n, 0.0f);
  std::vector<std::pair<int, int>> dots;
  for (int y = off; y < n; y += step)
    for (int x = off; x < n; x += step) {
      grid.at(y, x) = 1.0f;
      dots.emplace_back(y, x);
    }

  auto warped = apply_deformation(grid, 3.0, 123);

  double total = 0.0;
  for (auto [cy, cx] : dots) {
    // brightest pixel near the original crossing, then a 3x3 centroid
    int by = cy, bx = cx;
    float best = -1.0f;
    for (int y = std::max(0, cy - 4); y <= std::min(n - 1, cy + 4); ++y)
      for (int x = std::max(0, cx - 4); x <= std::min(n - 1, cx + 4); ++x)
        if (warped.at(y, x) > best) {
          best = warped.at(y, x);
          by = y;
          bx = x;
        }
    double wsum = 0.0, ysum = 0.0, xsum = 0.0;
    for (int y = std::max(0, by - 1); y <= std::min(n - 1, by + 1); ++y)
      for (int x = std::max(0, bx - 1); x <= std::min(n - 1, bx + 1); ++x) {
        wsum += warped.at(y, x);
        ysum += warped.at(y, x) * y;
        xsum += warped.at(y, x) * x;
      }
    REQUIRE(wsum > 0.0);
    total += std::hypot(ysum / wsum - cy, xsum / wsum - cx);
  }
  double mean_disp = total / static_cast<double>(dots.size());
  CHECK(mean_disp > 0.0);
  CHECK(mean_disp <= 3.0);
}

TEST_CASE("invalid specs are rejected as configuration errors") {
  PhantomSpec spec = desk_spec();

  PhantomSpec tiny = spec;
  tiny.height = 4;
  CHECK_THROWS_AS(generate_phantom(tiny, 1), Error);

  PhantomSpec r0 = spec;
  r0.lesion_radius_min = 0;
  CHECK_THROWS_AS(generate_phantom(r0, 1), Error);

  PhantomSpec rbig = spec;
  rbig.lesion_radius_max = 17;  // over min(H,W)/4 for 64x64
  CHECK_THROWS_AS(generate_phantom(rbig, 1), Error);

  PhantomSpec flat = spec;
  flat.lesion_intensity = 0.0;
  CHECK_THROWS_AS(generate_phantom(flat, 1), Error);

  CHECK_THROWS_AS(generate_phantom(spec, 0), Error);

  try {
    generate_phantom(tiny, 1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::config);
  }
}
