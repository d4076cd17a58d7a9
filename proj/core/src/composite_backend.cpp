#include "latcomp/composite_backend.hpp"

#include "latcomp/errors.hpp"

namespace latcomp {

CompositeBackend::CompositeBackend(BackendPtr prior, BackendPtr attention, double attention_weight)
    : prior_(std::move(prior)), attention_(std::move(attention)), attention_weight_(attention_weight) {
  if (!prior_ || !attention_) throw ConfigError("composite backend needs two parts");
  if (prior_->scheduler().t_max() != attention_->scheduler().t_max()) {
    throw ConfigError("composite parts use different schedules");
  }
  for (int t = 0; t <= prior_->scheduler().t_max(); ++t) {
    if (prior_->scheduler().alpha_bar(t) != attention_->scheduler().alpha_bar(t)) {
      throw ConfigError("composite parts use different schedules");
    }
  }
  if (prior_->traits().compression_factor != attention_->traits().compression_factor) {
    throw ConfigError("composite parts use different latent codecs");
  }
}

BackendTraits CompositeBackend::traits() const {
  const BackendTraits a = prior_->traits();
  const BackendTraits b = attention_->traits();
  return BackendTraits{"composite(" + a.name + "+" + b.name + ")", a.compression_factor,
                       a.feature_injection || b.feature_injection, a.attention_hooks || b.attention_hooks,
                       a.jacobian && b.jacobian};
}

PromptEmbedding CompositeBackend::embed(std::string_view prompt, PromptTag tag) const {
  return prior_->embed(prompt, tag);
}

Tensor CompositeBackend::predict_part(const NoisePredictor& part, const Tensor& z_t, int t,
                                      const PromptEmbedding& emb, const ConditionFeatures* features,
                                      AttentionControlState* control) const {
  const BackendTraits tr = part.traits();
  return part.predict_noise(z_t, t, emb, tr.feature_injection ? features : nullptr,
                            tr.attention_hooks ? control : nullptr);
}

Tensor CompositeBackend::predict_noise(const Tensor& z_t, int t, const PromptEmbedding& emb,
                                       const ConditionFeatures* features, AttentionControlState* control) const {
  Tensor out = predict_part(*prior_, z_t, t, emb, features, control);
  out.add_scaled(predict_part(*attention_, z_t, t, emb, features, control), attention_weight_);
  return out;
}

Tensor CompositeBackend::predict_noise_vjp(const Tensor& z_t, int t, const PromptEmbedding& emb,
                                           const Tensor& cotangent) const {
  Tensor out = prior_->predict_noise_vjp(z_t, t, emb, cotangent);
  out.add_scaled(attention_->predict_noise_vjp(z_t, t, emb, cotangent), attention_weight_);
  return out;
}

std::vector<AttentionLayerInfo> CompositeBackend::attention_layers(const Shape& latent) const {
  auto layers = prior_->attention_layers(latent);
  auto more = attention_->attention_layers(latent);
  layers.insert(layers.end(), more.begin(), more.end());
  return layers;
}

ConditionFeatures CompositeBackend::encode_condition(const Tensor& condition, FeatureProvenance provenance,
                                                     const Shape& latent) const {
  if (attention_->traits().feature_injection) return attention_->encode_condition(condition, provenance, latent);
  return prior_->encode_condition(condition, provenance, latent);
}

BackendPtr make_composite_backend(BackendPtr prior, BackendPtr attention, double attention_weight) {
  return std::make_shared<const CompositeBackend>(std::move(prior), std::move(attention), attention_weight);
}

}  // namespace latcomp
