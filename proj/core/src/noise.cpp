#include "latcomp/noise.hpp"

namespace latcomp {

Tensor standard_normal(Shape shape, Rng& rng) {
  Tensor out(shape);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out.values()) v = normal(rng);
  return out;
}

NoiseSample NoiseSample::draw(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return NoiseSample{standard_normal(shape, rng), seed};
}

}  // namespace latcomp
