#include "latcomp/mask.hpp"

#include <algorithm>

namespace latcomp {

PixelMask::PixelMask(Plane values) : plane_(std::move(values)) {
  for (double& v : plane_.values) v = v > 0.5 ? 1.0 : 0.0;
}

PixelMask PixelMask::filled(int height, int width, double value) {
  return PixelMask(Plane(height, width, value));
}

PixelMask PixelMask::complement() const {
  PixelMask out = *this;
  for (double& v : out.plane_.values) v = 1.0 - v;
  return out;
}

std::size_t PixelMask::area() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(plane_.values.begin(), plane_.values.end(), [](double v) { return v > 0.5; }));
}

std::optional<BoundingBox> PixelMask::bounding_box() const {
  int top = height(), left = width(), bottom = -1, right = -1;
  for (int y = 0; y < height(); ++y) {
    for (int x = 0; x < width(); ++x) {
      if (at(y, x) > 0.5) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
    }
  }
  if (bottom < 0) return std::nullopt;
  return BoundingBox{top, left, bottom - top + 1, right - left + 1};
}

}  // namespace latcomp
