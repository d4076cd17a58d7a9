#pragma once

#include <vector>

#include "latcomp/noise.hpp"
#include "latcomp/tensor.hpp"

namespace latcomp {

// Cumulative signal level alpha_bar(t) over integer timesteps [0, t_max].
class Scheduler {
 public:
  // alpha_bar(t) = 1 - t / t_max. Used by the desk-scale backends.
  static Scheduler linear(int t_max = 1000);
  // Stable-Diffusion style "scaled linear" betas, with alpha_bar(0) = 1
  // prepended so that index t corresponds to t noising steps.
  static Scheduler scaled_linear(int t_max = 1000, double beta_start = 0.00085,
                                 double beta_end = 0.012);
  // Table must start at 1, be non-increasing and stay inside [0, 1].
  static Scheduler from_table(std::vector<double> alpha_bar);

  int t_max() const noexcept { return static_cast<int>(table_.size()) - 1; }
  double alpha_bar(int t) const;

 private:
  explicit Scheduler(std::vector<double> table) : table_(std::move(table)) {}
  std::vector<double> table_;
};

// z_t = sqrt(alpha_bar) z + sqrt(1 - alpha_bar) eps
Tensor add_noise(const Tensor& z, const Tensor& eps, double alpha_bar);
Tensor add_noise(const Tensor& z, const NoiseSample& eps, int t, const Scheduler& scheduler);

}  // namespace latcomp
