#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace latcomp {

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Shape&) const = default;
  std::string to_string() const;
};

// Dense channel-major (c, h, w) array of doubles. Used for latents, noise,
// noise predictions and RGB images (c = 3, values in [0, 1]).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  int channels() const noexcept { return shape_.channels; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(int c, int y, int x) noexcept { return values_[index(c, y, x)]; }
  double operator()(int c, int y, int x) const noexcept { return values_[index(c, y, x)]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> channel(int c) noexcept;
  std::span<const double> channel(int c) const noexcept;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double scale) noexcept;
  // this += scale * other
  Tensor& add_scaled(const Tensor& other, double scale);

  bool all_finite() const noexcept;
  bool operator==(const Tensor&) const = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape shape_{};
  std::vector<double> values_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what);
void require_finite(const Tensor& t, std::string_view what);

double dot(const Tensor& a, const Tensor& b);
double sum_squares(const Tensor& a);
double l2_norm(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
double mean_abs_diff(const Tensor& a, const Tensor& b);
Tensor clamp(Tensor t, double lo, double hi);

// Single-channel h x w grid. Holds masks, heatmaps and resized mask weights.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0);
  Plane(int h, int w, std::vector<double> v);

  double& at(int y, int x) noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const Plane&) const = default;
};

// Multiplies every channel of `t` by `weights` (Hadamard product broadcast
// over channels).
Tensor hadamard(Tensor t, const Plane& weights);

}  // namespace latcomp
