#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "latcomp/analytic_backend.hpp"
#include "latcomp/attention.hpp"
#include "latcomp/mask.hpp"
#include "latcomp/noise.hpp"
#include "latcomp/tensor.hpp"

namespace latcomp::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline TokenTensor random_tokens(int b, int l, int d, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  TokenTensor t(b, l, d);
  for (double& v : t.values) v = dist(rng);
  return t;
}

// Axis-aligned box mask, rows [top, top + h) and columns [left, left + w).
inline PixelMask box_mask(int height, int width, int top, int left, int h, int w) {
  Plane p(height, width);
  for (int y = top; y < top + h; ++y) {
    for (int x = left; x < left + w; ++x) p.at(y, x) = 1.0;
  }
  return PixelMask(std::move(p));
}

// Mean of |a - b| over pixels where `where` is 1 (all channels).
inline double masked_mean_abs_diff(const Tensor& a, const Tensor& b, const Plane& where) {
  double sum = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < a.channels(); ++c) {
    for (int y = 0; y < a.height(); ++y) {
      for (int x = 0; x < a.width(); ++x) {
        if (where.at(y, x) <= 0.5) continue;
        sum += std::abs(a(c, y, x) - b(c, y, x));
        ++count;
      }
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

// Mean of `map` over the cells where `where` is 1.
inline double masked_mean(const Plane& map, const Plane& where) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (where.values[i] <= 0.5) continue;
    sum += map.values[i];
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

// Cells whose Chebyshev distance to the boundary of `box` is below `width`,
// on either side of it.
inline Plane boundary_band(const BoundingBox& box, int height, int width, int band) {
  Plane p(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const bool inside = y >= box.top && y < box.top + box.height && x >= box.left && x < box.left + box.width;
      int d;
      if (inside) {
        d = std::min({y - box.top, box.top + box.height - 1 - y, x - box.left, box.left + box.width - 1 - x});
      } else {
        const int dy = y < box.top ? box.top - y - 1 : (y >= box.top + box.height ? y - box.top - box.height : 0);
        const int dx =
            x < box.left ? box.left - x - 1 : (x >= box.left + box.width ? x - box.left - box.width : 0);
        d = std::max(dy, dx);
      }
      if (d < band) p.at(y, x) = 1.0;
    }
  }
  return p;
}

// Cells at Chebyshev distance >= `gap` outside `box`.
inline Plane far_region(const BoundingBox& box, int height, int width, int gap) {
  Plane p(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int dy = y < box.top ? box.top - y : (y >= box.top + box.height ? y - box.top - box.height + 1 : 0);
      const int dx = x < box.left ? box.left - x : (x >= box.left + box.width ? x - box.left - box.width + 1 : 0);
      if (std::max(dy, dx) >= gap) p.at(y, x) = 1.0;
    }
  }
  return p;
}

// Smooth RGB field in [0, 1]: base level plus a scaled draw from a smooth
// analytic prior.
inline Tensor smooth_field(int size, double base, double amplitude, double smoothness, std::uint64_t seed) {
  AnalyticGaussianBackend prior({smoothness});
  Rng rng(seed);
  Tensor t = prior.sample_prior(Shape{3, size, size}, PromptTag::unconditional, rng);
  for (double& v : t.values()) v = base + amplitude * v;
  return clamp(std::move(t), 0.0, 1.0);
}

// Fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("latcomp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace latcomp::testing
