#include "latcomp/scheduler.hpp"

#include <cmath>
#include <string>

#include "latcomp/errors.hpp"

namespace latcomp {

Scheduler Scheduler::linear(int t_max) {
  if (t_max < 1) throw ConfigError("t_max must be >= 1", "scheduler.t_max");
  std::vector<double> table(static_cast<std::size_t>(t_max) + 1);
  for (int t = 0; t <= t_max; ++t) table[t] = 1.0 - static_cast<double>(t) / t_max;
  table[t_max] = 0.0;
  return Scheduler(std::move(table));
}

Scheduler Scheduler::scaled_linear(int t_max, double beta_start, double beta_end) {
  if (t_max < 2) throw ConfigError("t_max must be >= 2", "scheduler.t_max");
  std::vector<double> table(static_cast<std::size_t>(t_max) + 1);
  table[0] = 1.0;
  const double s0 = std::sqrt(beta_start);
  const double s1 = std::sqrt(beta_end);
  double prod = 1.0;
  for (int i = 0; i < t_max; ++i) {
    const double s = s0 + (s1 - s0) * i / (t_max - 1);
    prod *= 1.0 - s * s;
    table[i + 1] = prod;
  }
  return from_table(std::move(table));
}

Scheduler Scheduler::from_table(std::vector<double> alpha_bar) {
  if (alpha_bar.size() < 2) throw ConfigError("alpha_bar table needs at least two entries");
  if (alpha_bar.front() != 1.0) throw ConfigError("alpha_bar(0) must be 1");
  for (std::size_t t = 0; t < alpha_bar.size(); ++t) {
    if (!(alpha_bar[t] >= 0.0 && alpha_bar[t] <= 1.0)) {
      throw ConfigError("alpha_bar(" + std::to_string(t) + ") outside [0, 1]");
    }
    if (t > 0 && alpha_bar[t] > alpha_bar[t - 1]) {
      throw ConfigError("alpha_bar must be non-increasing (violated at t=" + std::to_string(t) + ")");
    }
  }
  return Scheduler(std::move(alpha_bar));
}

double Scheduler::alpha_bar(int t) const {
  if (t < 0 || t > t_max()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(t_max()) + "]");
  }
  return table_[static_cast<std::size_t>(t)];
}

Tensor add_noise(const Tensor& z, const Tensor& eps, double alpha_bar) {
  require_same_shape(z, eps, "add_noise");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = a * z[i] + b * eps[i];
  return out;
}

Tensor add_noise(const Tensor& z, const NoiseSample& eps, int t, const Scheduler& scheduler) {
  return add_noise(z, eps.data, scheduler.alpha_bar(t));
}

}  // namespace latcomp
