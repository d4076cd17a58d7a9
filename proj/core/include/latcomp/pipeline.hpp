#pragma once

#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "latcomp/backend.hpp"
#include "latcomp/errors.hpp"
#include "latcomp/loss_log.hpp"
#include "latcomp/mask.hpp"
#include "latcomp/perceptual.hpp"
#include "latcomp/phase_config.hpp"

namespace latcomp {

// Where the object lands in the background during copy-paste.
struct PlacementSpec {
  enum class Strategy { bbox_fit, explicit_offset };

  Strategy strategy = Strategy::bbox_fit;
  // Explicit placement: top-left corner of the scaled object bounding box and
  // the scale applied to it.
  int offset_y = 0;
  int offset_x = 0;
  double scale = 1.0;

  static PlacementSpec bbox_fit() { return {}; }
  static PlacementSpec at(int offset_y, int offset_x, double scale = 1.0) {
    return {Strategy::explicit_offset, offset_y, offset_x, scale};
  }
  bool operator==(const PlacementSpec&) const = default;
};

struct PasteResult {
  Tensor image;      // I_p
  PixelMask mask;    // M_p
  BoundingBox placed;
};

// Crops the object to bbox(object_mask), scales it (bilinear pixels,
// nearest-neighbour mask) and composites it over `background`. With bbox-fit
// the object keeps its aspect ratio and is centred in bbox(region_mask).
PasteResult paste_object(const Tensor& background, const Tensor& object, const PixelMask& object_mask,
                         const PixelMask& region_mask, const PlacementSpec& placement = {});

struct PhaseResult {
  Tensor image;   // decoded and clamped to [0, 1]
  Tensor latent;  // final optimised latent
  LossLog log;
};

// `extractor` defaults to the toy box pyramid when null.
PhaseResult remove_object(const Tensor& image, const PixelMask& mask, const PhaseConfig& config,
                          const NoisePredictor& backend, const FeatureExtractor* extractor = nullptr);

PhaseResult harmonize(const Tensor& paste_image, const PixelMask& paste_mask, const PhaseConfig& config,
                      const NoisePredictor& backend, const FeatureExtractor* extractor = nullptr);

// Source and target conditions of the editing phase. Text conditions use the
// prompts of the composition PhaseConfig; sketch and canny conditions are
// images turned into features by the backend.
struct CompositionConditions {
  ConditionKind kind = ConditionKind::text;
  Tensor source_image;  // C_o
  Tensor target_image;  // C_t
};

PhaseResult semantic_compose(const Tensor& input, const CompositionConditions& conditions, const PhaseConfig& config,
                             const NoisePredictor& backend);

struct CompositionRequest {
  Tensor background;     // I_s
  PixelMask region_mask; // M_s
  Tensor object;         // I_t
  PixelMask object_mask; // M_t
  std::optional<CompositionConditions> conditions;
  PlacementSpec placement{};
};

struct PipelineConfigs {
  PhaseConfig removal = PhaseConfig::removal_defaults();
  PhaseConfig harmonization = PhaseConfig::harmonization_defaults();
  PhaseConfig composition = PhaseConfig::composition_defaults();
};

struct RunArtifacts {
  std::optional<Tensor> background;     // I_b
  std::optional<Tensor> paste_image;    // I_p
  std::optional<PixelMask> paste_mask;  // M_p
  std::optional<Tensor> harmonized;     // I_c
  std::optional<Tensor> result;         // I_res
  LossLog removal_log;
  LossLog harmonization_log;
  LossLog composition_log;
  bool composed = false;
};

// A phase failed. Carries whatever finished before the failure.
class PipelineError : public Error {
 public:
  PipelineError(std::string phase, const std::string& message, RunArtifacts partial, std::exception_ptr cause)
      : Error(phase + " failed: " + message), phase_(std::move(phase)), partial_(std::move(partial)),
        cause_(std::move(cause)) {}

  const std::string& phase() const noexcept { return phase_; }
  const RunArtifacts& partial() const noexcept { return partial_; }
  std::exception_ptr cause() const noexcept { return cause_; }

 private:
  std::string phase_;
  RunArtifacts partial_;
  std::exception_ptr cause_;
};

struct PipelineHooks {
  const FeatureExtractor* extractor = nullptr;
  // Called after each stage with its name ("removal", "paste", ...).
  std::function<void(std::string_view stage, const RunArtifacts&)> on_stage;
};

// removal -> paste -> harmonization -> composition (only with conditions;
// otherwise I_res = I_c). Throws PipelineError on any stage failure.
RunArtifacts run_pipeline(const CompositionRequest& request, const PipelineConfigs& configs,
                          const NoisePredictor& backend, const PipelineHooks& hooks = {});

// Writes the artifacts present in `artifacts` into `directory` and returns the
// written paths: background.png, paste.png, paste_mask.png, harmonized.png,
// result.png and one <phase>_loss.csv per phase that ran.
std::vector<std::string> save_artifacts(const RunArtifacts& artifacts, const std::string& directory);

// JSON manifest describing a failed run: phase, message and saved files.
void write_error_manifest(const std::string& path, const PipelineError& error,
                          const std::vector<std::string>& saved_files);

struct DensityMap {
  Plane raw;         // mean channel-averaged |eps_hat - eps|, latent resolution
  Plane normalized;  // min-max normalised copy
};

// Per-pixel mean of the channel-averaged noise prediction error over
// `n_samples` draws of (t from t_set, eps).
DensityMap low_density_map(const Tensor& image, const NoisePredictor& backend, const PromptEmbedding& embedding,
                           int n_samples, const std::vector<int>& t_set, Rng& rng);

}  // namespace latcomp
