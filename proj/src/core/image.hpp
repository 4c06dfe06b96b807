#pragma once

#include <cstdint>
#include <vector>

namespace ph {

// 2D grayscale slice, row-major, values expected in [0,1].
struct ImageSlice {
  int h = 0;
  int w = 0;
  std::vector<float> v;

  ImageSlice() = default;
  ImageSlice(int height, int width, float fill = 0.0f)
      : h(height), w(width), v(static_cast<size_t>(height) * width, fill) {}

  float& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  size_t size() const { return v.size(); }
};

// Binary mask with the same layout.
struct PathologyMask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> v;

  PathologyMask() = default;
  PathologyMask(int height, int width, uint8_t fill = 0)
      : h(height), w(width), v(static_cast<size_t>(height) * width, fill) {}

  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  size_t size() const { return v.size(); }

  uint64_t sum() const {
    uint64_t s = 0;
    for (uint8_t b : v) s += b;
    return s;
  }
};

enum class SliceLabel { healthy, pathological };

}  // namespace ph
