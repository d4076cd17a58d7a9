#include "latcomp/phase_config.hpp"

#include <cmath>

#include "latcomp/errors.hpp"

namespace latcomp {

std::string_view to_string(Phase phase) noexcept {
  switch (phase) {
    case Phase::removal: return "removal";
    case Phase::harmonization: return "harmonization";
    case Phase::composition: return "composition";
  }
  return "unknown";
}

std::string_view to_string(ConditionKind kind) noexcept {
  switch (kind) {
    case ConditionKind::none: return "none";
    case ConditionKind::text: return "text";
    case ConditionKind::sketch: return "sketch";
    case ConditionKind::canny: return "canny";
  }
  return "unknown";
}

std::string_view to_string(GradMode mode) noexcept {
  return mode == GradMode::difference ? "difference" : "mse_backprop";
}

std::optional<ConditionKind> parse_condition_kind(std::string_view text) noexcept {
  for (auto k : {ConditionKind::none, ConditionKind::text, ConditionKind::sketch, ConditionKind::canny}) {
    if (text == to_string(k)) return k;
  }
  return std::nullopt;
}

std::optional<GradMode> parse_grad_mode(std::string_view text) noexcept {
  if (text == "difference") return GradMode::difference;
  if (text == "mse_backprop") return GradMode::mse_backprop;
  return std::nullopt;
}

PhaseConfig PhaseConfig::removal_defaults() {
  PhaseConfig c;
  c.phase = Phase::removal;
  c.steps = 150;
  c.timesteps = {50, 400};
  c.source_prompt = kRemovalSourcePrompt;
  c.target_prompt = kRemovalTargetPrompt;
  return c;
}

PhaseConfig PhaseConfig::harmonization_defaults() {
  PhaseConfig c;
  c.phase = Phase::harmonization;
  c.steps = 200;
  c.timesteps = {50, 950};
  c.source_prompt = kHarmonizationSourcePrompt;
  c.target_prompt = kHarmonizationTargetPrompt;
  return c;
}

PhaseConfig PhaseConfig::composition_defaults(ConditionKind kind) {
  PhaseConfig c;
  c.phase = Phase::composition;
  c.steps = kind == ConditionKind::sketch || kind == ConditionKind::canny ? 200 : 500;
  c.timesteps = {50, 950};
  c.late = LateRange{{50, 100}, 50};
  return c;
}

namespace {

std::string key(std::string_view section, std::string_view name) {
  return std::string(section) + "." + std::string(name);
}

void check_range(const TimestepRange& r, int t_max_absolute, std::string_view section, std::string_view lo_key,
                 std::string_view hi_key) {
  if (r.t_min < 0) throw ConfigError("must be >= 0", key(section, lo_key));
  if (r.t_max > t_max_absolute) {
    throw ConfigError("must be <= " + std::to_string(t_max_absolute), key(section, hi_key));
  }
  if (r.t_min > r.t_max) throw ConfigError("must not exceed " + key(section, hi_key), key(section, lo_key));
}

void check_nonnegative(double v, std::string_view section, std::string_view name) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("must be a finite value >= 0", key(section, name));
}

}  // namespace

void PhaseConfig::validate(int t_max_absolute, std::string_view section) const {
  if (steps < 1) throw ConfigError("must be >= 1", key(section, phase == Phase::composition ? "steps_text" : "steps"));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("must be > 0", key(section, "learning_rate"));
  }
  check_range(timesteps, t_max_absolute, section, "t_min", "t_max");
  check_nonnegative(cfg_weight, section, "cfg_weight");
  check_nonnegative(weights.lambda_per, section, "lambda_per");
  check_nonnegative(weights.lambda_bak, section, "lambda_bak");
  check_nonnegative(weights.lambda_for, section, "lambda_for");
  check_nonnegative(weights.background_dds_scale, section, "background_dds_scale");
  if (!(exclusion_threshold >= 0.0 && exclusion_threshold <= 1.0)) {
    throw ConfigError("must lie in [0, 1]", key(section, "exclusion_threshold"));
  }
  if (gate.step_threshold < 0) throw ConfigError("must be >= 0", key(section, "gate_step"));
  if (gate.layer_threshold < -1) throw ConfigError("must be >= -1", key(section, "gate_layer"));
  if (late) {
    check_range(late->range, t_max_absolute, section, "late_t_min", "late_t_max");
    if (late->final_steps < 1) throw ConfigError("must be >= 1", key(section, "late_steps"));
  }
}

LoopSettings PhaseConfig::loop_settings() const {
  LoopSettings s;
  s.steps = steps;
  s.adam.learning_rate = learning_rate;
  s.timesteps = timesteps;
  s.late = late;
  s.seed = seed;
  return s;
}

}  // namespace latcomp
