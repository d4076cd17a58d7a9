#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "latcomp/backend.hpp"

namespace latcomp {

struct ToyAttentionBackendConfig {
  std::uint64_t seed = 0;
  int layer_count = 16;
  int dim = 16;  // query/key projection dimension
  int channels = 3;
  // Token budget of the finest attention grid; the coarse grid halves it per side.
  int max_tokens = 256;
  double gain = 1.0;
  // Residual update per layer: h <- h + mix (attention - h).
  double mix = 0.5;
  // rho in eps = gain sqrt(1 - alpha_bar) (z_t - rho x). Values below 1 make
  // the prediction respond to uniform shifts of z_t.
  double smooth_weight = 0.8;
  // Kernel widths of the attention: content units and grid cells.
  double content_bandwidth = 0.1;
  double position_bandwidth = 1.0;
  // Per-channel bias added to every token, selected by the embedding's tag.
  // Missing or empty entries mean no bias.
  std::map<PromptTag, std::vector<double>> tag_bias;
  double feature_scale = 0.1;
  int t_max = 1000;
};

// Small deterministic predictor built from genuine self-attention layers.
//
// The latent is area-pooled onto two token grids; layers in the outer
// quarters attend over the fine grid, the middle half over the coarse grid.
// Queries and keys are seeded projections of [content, position] arranged so
// that the attention weights form a Gaussian kernel in that space, which makes
// each layer an edge-preserving local average. Values are the tokens
// themselves. After all layers the grids are upsampled and averaged into a
// smoothed estimate x, and
//   eps = gain * sqrt(1 - alpha_bar) * (z_t - rho x).
// The prompt tag selects a per-channel bias added to every token; condition
// features are added per grid.
class ToyAttentionBackend final : public NoisePredictor {
 public:
  explicit ToyAttentionBackend(ToyAttentionBackendConfig config);

  BackendTraits traits() const override;
  const Scheduler& scheduler() const override { return scheduler_; }
  PromptEmbedding embed(std::string_view prompt, PromptTag tag) const override;
  Tensor encode(const Tensor& image) const override;
  Tensor decode(const Tensor& latent) const override;
  Tensor decode_vjp(const Tensor& latent, const Tensor& cotangent) const override;
  Tensor predict_noise(const Tensor& z_t, int t, const PromptEmbedding& emb, const ConditionFeatures* features,
                       AttentionControlState* control) const override;
  std::vector<AttentionLayerInfo> attention_layers(const Shape& latent) const override;
  ConditionFeatures encode_condition(const Tensor& condition, FeatureProvenance provenance,
                                     const Shape& latent) const override;

  const ToyAttentionBackendConfig& config() const noexcept { return config_; }

  struct Grid {
    int height;
    int width;
  };
  // Token grids for a latent of this shape: [fine, coarse] (may coincide).
  std::vector<Grid> grids(const Shape& latent) const;
  int level_of_layer(int layer) const noexcept;

 private:
  struct Layer {
    std::vector<double> w;  // dim x (channels + 2), shared by queries and keys
  };

  std::vector<double> prompt_bias(const PromptEmbedding& emb) const;

  ToyAttentionBackendConfig config_;
  Scheduler scheduler_;
  std::vector<Layer> layers_;
  std::vector<double> feature_projection_;  // channels x 3
};

BackendPtr make_toy_attention_backend(ToyAttentionBackendConfig config = {});

}  // namespace latcomp
