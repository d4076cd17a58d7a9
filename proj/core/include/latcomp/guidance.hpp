#pragma once

#include <vector>

#include "latcomp/attention.hpp"
#include "latcomp/backend.hpp"
#include "latcomp/mask.hpp"
#include "latcomp/perceptual.hpp"

namespace latcomp {

// eps_u + w (eps_c - eps_u). The other common form (1 + s) eps_c - s eps_u
// corresponds to w = 1 + s.
Tensor cfg_combine(const Tensor& eps_c, const Tensor& eps_u, double w);

enum class GradMode {
  difference,    // sqrt(a) (eps_tgt - eps_src), predictor treated as constant
  mse_backprop,  // exact gradient of ||eps_src - eps_tgt||^2 through the predictor
};

// The guided (CFG) prediction of one branch and what produced it.
struct GuidedBranch {
  const NoisePredictor* backend = nullptr;
  Tensor z_t;
  int t = 0;
  const PromptEmbedding* unconditional = nullptr;
  const PromptEmbedding* conditional = nullptr;
  double cfg_weight = 1.0;
};

// Gradient of the score-distillation difference w.r.t. the optimised latent.
// Both predictions must come from the same t and noise draw. `target` is
// required in mse_backprop mode and describes the optimised branch.
Tensor dds_gradient(const Tensor& eps_src, const Tensor& eps_tgt, double alpha_bar, GradMode mode,
                    const GuidedBranch* target = nullptr);

struct PhaseLossWeights {
  double lambda_per = 0.3;
  double lambda_bak = 0.3;
  double lambda_for = 0.1;
  double background_dds_scale = 0.2;

  bool operator==(const PhaseLossWeights&) const = default;
};

// One optimisation step's shared timestep and noise.
struct NoiseDraw {
  int step = 1;  // 1-based count of the current optimisation step
  int t = 0;
  double alpha_bar = 1.0;
  Tensor noise;
};

struct StepLosses {
  double total = 0.0;
  double dds = 0.0;      // ||eps_src - eps_tgt||^2
  double per_bak = 0.0;  // background (or only) perceptual term, unweighted
  double per_for = 0.0;  // foreground perceptual term, unweighted
};

struct GradientResult {
  Tensor gradient;
  Tensor dds_component;         // after any spatial weighting
  Tensor perceptual_component;  // already multiplied by its lambdas
  StepLosses losses;
};

struct PromptSet {
  PromptEmbedding unconditional;
  PromptEmbedding source;  // P_o
  PromptEmbedding target;  // P_t
};

// Object removal: mask-guided DDS plus background perceptual anchor.
struct RemovalObjective {
  const NoisePredictor* backend = nullptr;
  const FeatureExtractor* extractor = nullptr;
  Tensor source_image;   // I_s
  Tensor source_latent;  // encode(I_s)
  PixelMask mask;        // M_s
  PixelMask keep_mask;   // M_s'
  PromptSet prompts;
  std::vector<TokenMask> exclusion_masks;  // one per attention resolution
  Plane dds_weights;                       // 1 inside resized M_s, background_dds_scale outside
  double cfg_weight = 7.5;
  GradMode mode = GradMode::difference;
  PhaseLossWeights weights{};
};

RemovalObjective make_removal_objective(const NoisePredictor& backend, const FeatureExtractor& extractor,
                                        const Tensor& image, const PixelMask& mask, PromptSet prompts,
                                        double cfg_weight, GradMode mode, const PhaseLossWeights& weights,
                                        double exclusion_threshold);

GradientResult loss_removal_gradient(const RemovalObjective& objective, const Tensor& z, const NoiseDraw& draw);

// Image harmonization: DDS plus separate background and foreground anchors.
struct HarmonizationObjective {
  const NoisePredictor* backend = nullptr;
  const FeatureExtractor* extractor = nullptr;
  Tensor paste_image;   // I_p
  Tensor paste_latent;  // encode(I_p)
  PixelMask mask;       // M_p
  PixelMask keep_mask;  // M_p'
  PromptSet prompts;
  double cfg_weight = 7.5;
  GradMode mode = GradMode::difference;
  PhaseLossWeights weights{};
};

HarmonizationObjective make_harmonization_objective(const NoisePredictor& backend, const FeatureExtractor& extractor,
                                                    const Tensor& image, const PixelMask& mask, PromptSet prompts,
                                                    double cfg_weight, GradMode mode,
                                                    const PhaseLossWeights& weights);

GradientResult loss_harmonization_gradient(const HarmonizationObjective& objective, const Tensor& z,
                                           const NoiseDraw& draw);

// Semantic composition: pure DDS with source-branch KV recording and gated
// target-branch KV replacement.
struct CompositionObjective {
  const NoisePredictor* backend = nullptr;
  Tensor input_latent;  // encode(I_in)
  PromptSet prompts;
  ConditionFeatures source_features;  // f_s
  ConditionFeatures target_features;  // f_t
  ReplacementGate gate{};
  double cfg_weight = 7.5;
  GradMode mode = GradMode::difference;
};

GradientResult loss_composition_gradient(const CompositionObjective& objective, KvCache& cache, const Tensor& z,
                                         const NoiseDraw& draw);

// eps_u + w (eps_c - eps_u) with both calls on the same z_t; separate control
// states for the two calls.
Tensor guided_prediction(const NoisePredictor& backend, const Tensor& z_t, int t, const PromptEmbedding& uncond,
                         const PromptEmbedding& cond, double w, const ConditionFeatures* features = nullptr,
                         AttentionControlState* control_uncond = nullptr,
                         AttentionControlState* control_cond = nullptr);

}  // namespace latcomp
