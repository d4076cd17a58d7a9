#pragma once

#include <functional>

#include "latcomp/tensor.hpp"

namespace latcomp {

// Squared magnitude of the wrapped (signed) integer frequency of DFT bin
// (ky, kx) on an h x w grid.
double frequency_norm2(int ky, int kx, int height, int width) noexcept;

// Applies a real, symmetric circulant operator to every channel of `in`:
// out = F^-1 diag(gain(|k|^2)) F in, via FFTW. `gain` must depend on the
// frequency only through |k|^2 so the result is real.
Tensor apply_spectral_gain(const Tensor& in, const std::function<double(double)>& gain);

}  // namespace latcomp
