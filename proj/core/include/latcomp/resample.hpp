#pragma once

#include "latcomp/tensor.hpp"

namespace latcomp {

// Exact area-average resize: each output cell is the mean of the input over
// the rectangle it covers, with fractional overlaps weighted by area.
Plane area_resize(const Plane& in, int height, int width);
Tensor area_resize(const Tensor& in, int height, int width);

// Nearest-neighbour sampling at pixel centres: out(y, x) = in(floor((y + .5) * H / h), ...).
Plane nearest_resize(const Plane& in, int height, int width);
Tensor nearest_resize(const Tensor& in, int height, int width);

// Bilinear resampling with half-pixel centres and edge clamping.
Tensor bilinear_resize(const Tensor& in, int height, int width);

}  // namespace latcomp
