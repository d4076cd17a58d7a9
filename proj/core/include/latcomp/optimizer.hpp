#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "latcomp/guidance.hpp"
#include "latcomp/loss_log.hpp"
#include "latcomp/noise.hpp"
#include "latcomp/scheduler.hpp"

namespace latcomp {

struct TimestepRange {
  int t_min = 50;
  int t_max = 950;

  bool operator==(const TimestepRange&) const = default;
};

// Secondary range used for the last `final_steps` iterations.
struct LateRange {
  TimestepRange range{50, 100};
  int final_steps = 50;

  bool operator==(const LateRange&) const = default;
};

// Uniform integer in [t_min, t_max], both ends inclusive.
int sample_timestep(const TimestepRange& range, Rng& rng);

struct AdamSettings {
  double learning_rate = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptState {
  Tensor z;
  Tensor first_moment;
  Tensor second_moment;
  int step = 0;  // completed iterations

  explicit OptState(Tensor init);
  // One adaptive-moment update with gradient `g`.
  void apply(const Tensor& g, const AdamSettings& adam);
};

struct LoopSettings {
  int steps = 1;
  AdamSettings adam{};
  TimestepRange timesteps{};
  std::optional<LateRange> late;
  std::uint64_t seed = 0;
};

using StepFunction = std::function<GradientResult(const Tensor& z, const NoiseDraw& draw)>;

struct LoopResult {
  Tensor z;
  LossLog log;
};

// Runs `steps` iterations of: draw t and eps, evaluate `step_fn`, Adam update.
// Throws NonFiniteError (after logging the step) on a non-finite gradient.
LoopResult optimize_latent(const Tensor& init, const StepFunction& step_fn, const LoopSettings& settings,
                           const Scheduler& scheduler);

// Range in force at 1-based `step`; the late range covers the last `final_steps`.
TimestepRange active_range(const LoopSettings& settings, int step) noexcept;

}  // namespace latcomp
