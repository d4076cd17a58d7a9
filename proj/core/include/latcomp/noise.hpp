#pragma once

#include <cstdint>
#include <random>

#include "latcomp/tensor.hpp"

namespace latcomp {

using Rng = std::mt19937_64;

// Standard-normal draw fully determined by `seed`.
struct NoiseSample {
  Tensor data;
  std::uint64_t seed = 0;

  static NoiseSample draw(Shape shape, std::uint64_t seed);
};

Tensor standard_normal(Shape shape, Rng& rng);

}  // namespace latcomp
