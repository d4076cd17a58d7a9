#include "latcomp/optimizer.hpp"

#include <cmath>

#include "latcomp/errors.hpp"
#include "latcomp/log.hpp"

namespace latcomp {

int sample_timestep(const TimestepRange& range, Rng& rng) {
  if (range.t_min > range.t_max) {
    throw ConfigError("empty timestep range [" + std::to_string(range.t_min) + ", " + std::to_string(range.t_max) + "]");
  }
  std::uniform_int_distribution<int> dist(range.t_min, range.t_max);
  return dist(rng);
}

OptState::OptState(Tensor init)
    : z(std::move(init)), first_moment(z.shape()), second_moment(z.shape()) {}

void OptState::apply(const Tensor& g, const AdamSettings& adam) {
  require_same_shape(z, g, "adam update");
  ++step;
  const double c1 = 1.0 - std::pow(adam.beta1, step);
  const double c2 = 1.0 - std::pow(adam.beta2, step);
  for (std::size_t i = 0; i < z.size(); ++i) {
    first_moment[i] = adam.beta1 * first_moment[i] + (1.0 - adam.beta1) * g[i];
    second_moment[i] = adam.beta2 * second_moment[i] + (1.0 - adam.beta2) * g[i] * g[i];
    const double m_hat = first_moment[i] / c1;
    const double v_hat = second_moment[i] / c2;
    z[i] -= adam.learning_rate * m_hat / (std::sqrt(v_hat) + adam.epsilon);
  }
}

TimestepRange active_range(const LoopSettings& settings, int step) noexcept {
  if (settings.late && step > settings.steps - settings.late->final_steps) return settings.late->range;
  return settings.timesteps;
}

LoopResult optimize_latent(const Tensor& init, const StepFunction& step_fn, const LoopSettings& settings,
                           const Scheduler& scheduler) {
  if (settings.steps < 1) throw ConfigError("steps must be >= 1", "steps");
  if (!(settings.adam.learning_rate > 0.0)) throw ConfigError("learning rate must be > 0", "learning_rate");
  require_finite(init, "initial latent");

  OptState state(init);
  Rng rng(settings.seed);
  LoopResult result;
  for (int s = 1; s <= settings.steps; ++s) {
    NoiseDraw draw;
    draw.step = s;
    draw.t = sample_timestep(active_range(settings, s), rng);
    draw.alpha_bar = scheduler.alpha_bar(draw.t);
    draw.noise = NoiseSample::draw(state.z.shape(), rng()).data;

    GradientResult g = step_fn(state.z, draw);
    const double norm = l2_norm(g.gradient);
    result.log.append(LossRow{s, draw.t, g.losses.total, g.losses.dds, g.losses.per_bak, g.losses.per_for, norm});
    if (!g.gradient.all_finite() || !std::isfinite(g.losses.total)) {
      logger()->error("non-finite gradient at step {} (t={}): total={} dds={} grad_norm={}", s, draw.t,
                      g.losses.total, g.losses.dds, norm);
      throw NonFiniteError("non-finite gradient at step " + std::to_string(s));
    }
    logger()->debug("step {}/{} t={} total={:.6g} grad_norm={:.6g}", s, settings.steps, draw.t, g.losses.total, norm);
    state.apply(g.gradient, settings.adam);
  }
  result.z = std::move(state.z);
  return result;
}

}  // namespace latcomp
