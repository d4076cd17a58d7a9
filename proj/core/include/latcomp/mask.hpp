#pragma once

#include <optional>

#include "latcomp/tensor.hpp"

namespace latcomp {

struct BoundingBox {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  bool operator==(const BoundingBox&) const = default;
};

// Binary region selector in pixel space (1 = inside the region).
class PixelMask {
 public:
  PixelMask() = default;
  // Values are binarized: v > 0.5 becomes 1.
  explicit PixelMask(Plane values);
  static PixelMask filled(int height, int width, double value);

  int height() const noexcept { return plane_.height; }
  int width() const noexcept { return plane_.width; }
  const Plane& plane() const noexcept { return plane_; }
  double at(int y, int x) const noexcept { return plane_.at(y, x); }

  // M' = 1 - M
  PixelMask complement() const;
  std::size_t area() const noexcept;
  bool empty() const noexcept { return area() == 0; }
  bool covers_everything() const noexcept { return area() == plane_.size(); }
  std::optional<BoundingBox> bounding_box() const;

  bool operator==(const PixelMask&) const = default;

 private:
  Plane plane_;
};

}  // namespace latcomp
