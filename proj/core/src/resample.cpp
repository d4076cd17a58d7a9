#include "latcomp/resample.hpp"

#include <algorithm>
#include <cmath>

#include "latcomp/errors.hpp"

namespace latcomp {
namespace {

struct Tap {
  int index;
  double weight;
};

// Per-output-cell list of (input index, weight) along one axis.
std::vector<std::vector<Tap>> area_taps(int in_size, int out_size) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(out_size));
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double lo = o * ratio;
    const double hi = (o + 1) * ratio;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(in_size - 1, static_cast<int>(std::ceil(hi)) - 1);
    for (int i = first; i <= last; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (overlap > 0.0) taps[o].push_back({i, overlap / ratio});
    }
  }
  return taps;
}

void check_target(int height, int width) {
  if (height < 1 || width < 1) throw ShapeError("resize target must be at least 1x1");
}

void area_resize_plane(std::span<const double> in, int in_h, int in_w, std::span<double> out,
                       int out_h, int out_w) {
  const auto ty = area_taps(in_h, out_h);
  const auto tx = area_taps(in_w, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (const Tap& a : ty[y]) {
        for (const Tap& b : tx[x]) {
          acc += a.weight * b.weight * in[static_cast<std::size_t>(a.index) * in_w + b.index];
        }
      }
      out[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  }
}

int nearest_index(int o, int in_size, int out_size) {
  const int i = static_cast<int>(std::floor((o + 0.5) * in_size / out_size));
  return std::clamp(i, 0, in_size - 1);
}

}  // namespace

Plane area_resize(const Plane& in, int height, int width) {
  check_target(height, width);
  if (in.height == height && in.width == width) return in;
  Plane out(height, width);
  area_resize_plane(in.values, in.height, in.width, out.values, height, width);
  return out;
}

Tensor area_resize(const Tensor& in, int height, int width) {
  check_target(height, width);
  if (in.height() == height && in.width() == width) return in;
  Tensor out(Shape{in.channels(), height, width});
  for (int c = 0; c < in.channels(); ++c) {
    area_resize_plane(in.channel(c), in.height(), in.width(), out.channel(c), height, width);
  }
  return out;
}

Plane nearest_resize(const Plane& in, int height, int width) {
  check_target(height, width);
  Plane out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_index(y, in.height, height);
    for (int x = 0; x < width; ++x) out.at(y, x) = in.at(sy, nearest_index(x, in.width, width));
  }
  return out;
}

Tensor nearest_resize(const Tensor& in, int height, int width) {
  check_target(height, width);
  Tensor out(Shape{in.channels(), height, width});
  for (int c = 0; c < in.channels(); ++c) {
    for (int y = 0; y < height; ++y) {
      const int sy = nearest_index(y, in.height(), height);
      for (int x = 0; x < width; ++x) out(c, y, x) = in(c, sy, nearest_index(x, in.width(), width));
    }
  }
  return out;
}

Tensor bilinear_resize(const Tensor& in, int height, int width) {
  check_target(height, width);
  if (in.height() == height && in.width() == width) return in;
  Tensor out(Shape{in.channels(), height, width});
  const double sy = static_cast<double>(in.height()) / height;
  const double sx = static_cast<double>(in.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, in.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, in.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, in.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, in.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < in.channels(); ++c) {
        const double top = in(c, y0, x0) * (1.0 - wx) + in(c, y0, x1) * wx;
        const double bottom = in(c, y1, x0) * (1.0 - wx) + in(c, y1, x1) * wx;
        out(c, y, x) = top * (1.0 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

}  // namespace latcomp
