#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "latcomp/attention.hpp"
#include "latcomp/guidance.hpp"
#include "latcomp/optimizer.hpp"

namespace latcomp {

enum class Phase { removal, harmonization, composition };
enum class ConditionKind { none, text, sketch, canny };

std::string_view to_string(Phase phase) noexcept;
std::string_view to_string(ConditionKind kind) noexcept;
std::string_view to_string(GradMode mode) noexcept;
std::optional<ConditionKind> parse_condition_kind(std::string_view text) noexcept;
std::optional<GradMode> parse_grad_mode(std::string_view text) noexcept;

inline constexpr const char* kRemovalSourcePrompt = "Something in some place.";
inline constexpr const char* kRemovalTargetPrompt = "Some place.";
inline constexpr const char* kHarmonizationSourcePrompt = "";
inline constexpr const char* kHarmonizationTargetPrompt = "A harmonious scene.";

// Optimisation recipe of one phase.
struct PhaseConfig {
  Phase phase = Phase::removal;
  int steps = 150;
  double learning_rate = 5e-2;
  TimestepRange timesteps{50, 400};
  double cfg_weight = 7.5;
  PhaseLossWeights weights{};
  ReplacementGate gate{};
  GradMode grad_mode = GradMode::difference;
  std::uint64_t seed = 0;
  std::string source_prompt;
  std::string target_prompt;
  std::optional<LateRange> late;
  double exclusion_threshold = 0.5;

  static PhaseConfig removal_defaults();
  static PhaseConfig harmonization_defaults();
  // 500 steps for text conditions, 200 for sketch / canny.
  static PhaseConfig composition_defaults(ConditionKind kind = ConditionKind::text);

  // Throws ConfigError naming "<section>.<key>".
  void validate(int t_max_absolute, std::string_view section) const;
  LoopSettings loop_settings() const;

  bool operator==(const PhaseConfig&) const = default;
};

}  // namespace latcomp
