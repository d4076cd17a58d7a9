#include "latcomp/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "latcomp/errors.hpp"

namespace latcomp {

std::string Shape::to_string() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), values_(shape.size(), fill) {
  if (shape.channels < 0 || shape.height < 0 || shape.width < 0) {
    throw ShapeError("negative tensor dimension " + shape.to_string());
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size()) {
    throw ShapeError("tensor of shape " + shape_.to_string() + " given " +
                     std::to_string(values_.size()) + " values");
  }
}

std::span<double> Tensor::channel(int c) noexcept {
  return std::span<double>(values_).subspan(static_cast<std::size_t>(c) * shape_.plane_size(),
                                            shape_.plane_size());
}

std::span<const double> Tensor::channel(int c) const noexcept {
  return std::span<const double>(values_).subspan(static_cast<std::size_t>(c) * shape_.plane_size(),
                                                  shape_.plane_size());
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "tensor -=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) noexcept {
  for (double& v : values_) v *= scale;
  return *this;
}

Tensor& Tensor::add_scaled(const Tensor& other, double scale) {
  require_same_shape(*this, other, "tensor add_scaled");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
  return *this;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().to_string() + " vs " +
                     b.shape().to_string());
  }
}

void require_finite(const Tensor& t, std::string_view what) {
  if (!t.all_finite()) throw NonFiniteError(std::string(what) + " contains NaN or Inf");
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sum_squares(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  return acc;
}

double l2_norm(const Tensor& a) { return std::sqrt(sum_squares(a)); }

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_abs_diff");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

Tensor clamp(Tensor t, double lo, double hi) {
  for (double& v : t.values()) v = std::clamp(v, lo, hi);
  return t;
}

Plane::Plane(int h, int w, double fill)
    : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {
  if (h < 0 || w < 0) throw ShapeError("negative plane dimension");
}

Plane::Plane(int h, int w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
  if (values.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w)) {
    throw ShapeError("plane " + std::to_string(h) + "x" + std::to_string(w) + " given " +
                     std::to_string(values.size()) + " values");
  }
}

Tensor hadamard(Tensor t, const Plane& weights) {
  if (t.height() != weights.height || t.width() != weights.width) {
    throw ShapeError("hadamard: tensor " + t.shape().to_string() + " vs plane " +
                     std::to_string(weights.height) + "x" + std::to_string(weights.width));
  }
  for (int c = 0; c < t.channels(); ++c) {
    auto ch = t.channel(c);
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] *= weights.values[i];
  }
  return t;
}

}  // namespace latcomp
