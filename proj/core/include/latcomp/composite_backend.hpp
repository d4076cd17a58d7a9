#pragma once

#include "latcomp/backend.hpp"

namespace latcomp {

// Sum of two predictors sharing one schedule and codec (taken from `prior`).
// Attention control and condition features are forwarded only to the parts
// that support them, so an analytic prior can be paired with an attention
// backend.
class CompositeBackend final : public NoisePredictor {
 public:
  CompositeBackend(BackendPtr prior, BackendPtr attention, double attention_weight = 1.0);

  BackendTraits traits() const override;
  const Scheduler& scheduler() const override { return prior_->scheduler(); }
  PromptEmbedding embed(std::string_view prompt, PromptTag tag) const override;
  Tensor encode(const Tensor& image) const override { return prior_->encode(image); }
  Tensor decode(const Tensor& latent) const override { return prior_->decode(latent); }
  Tensor decode_vjp(const Tensor& latent, const Tensor& cotangent) const override {
    return prior_->decode_vjp(latent, cotangent);
  }
  Tensor predict_noise(const Tensor& z_t, int t, const PromptEmbedding& emb, const ConditionFeatures* features,
                       AttentionControlState* control) const override;
  Tensor predict_noise_vjp(const Tensor& z_t, int t, const PromptEmbedding& emb,
                           const Tensor& cotangent) const override;
  std::vector<AttentionLayerInfo> attention_layers(const Shape& latent) const override;
  ConditionFeatures encode_condition(const Tensor& condition, FeatureProvenance provenance,
                                     const Shape& latent) const override;

  const NoisePredictor& prior() const noexcept { return *prior_; }
  const NoisePredictor& attention() const noexcept { return *attention_; }
  double attention_weight() const noexcept { return attention_weight_; }

 private:
  Tensor predict_part(const NoisePredictor& part, const Tensor& z_t, int t, const PromptEmbedding& emb,
                      const ConditionFeatures* features, AttentionControlState* control) const;

  BackendPtr prior_;
  BackendPtr attention_;
  double attention_weight_;
};

BackendPtr make_composite_backend(BackendPtr prior, BackendPtr attention, double attention_weight = 1.0);

}  // namespace latcomp
