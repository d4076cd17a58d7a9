#include "latcomp/analytic_backend.hpp"

#include <cmath>

#include "latcomp/errors.hpp"
#include "latcomp/log.hpp"
#include "latcomp/spectral.hpp"

namespace latcomp {
namespace {

constexpr int kEmbeddingLength = 8;
constexpr int kEmbeddingDim = 16;

}  // namespace

AnalyticGaussianBackend::AnalyticGaussianBackend(AnalyticGaussianBackendConfig config)
    : config_(std::move(config)), scheduler_(Scheduler::linear(config_.t_max)) {
  if (!(config_.smoothness >= 0.0) || !std::isfinite(config_.smoothness)) {
    throw ConfigError("smoothness must be a finite value >= 0", "backend.smoothness");
  }
  for (const auto& [tag, mu] : config_.means) require_finite(mu, "prior mean");
}

BackendTraits AnalyticGaussianBackend::traits() const {
  return BackendTraits{"analytic", 1, false, false, true};
}

PromptEmbedding AnalyticGaussianBackend::embed(std::string_view prompt, PromptTag tag) const {
  return hashed_prompt_embedding(prompt, tag, kEmbeddingLength, kEmbeddingDim);
}

Tensor AnalyticGaussianBackend::encode(const Tensor& image) const {
  check_identity_codec_input(image);
  return image;
}

Tensor AnalyticGaussianBackend::decode(const Tensor& latent) const { return latent; }

Tensor AnalyticGaussianBackend::decode_vjp(const Tensor& latent, const Tensor& cotangent) const {
  require_same_shape(latent, cotangent, "decode_vjp");
  return cotangent;
}

double AnalyticGaussianBackend::eigenvalue(double freq_norm2) const noexcept {
  return 1.0 / (1.0 + config_.smoothness * freq_norm2);
}

Tensor AnalyticGaussianBackend::mean(PromptTag tag, const Shape& shape) const {
  auto it = config_.means.find(tag);
  if (it == config_.means.end()) {
    throw ConfigError("no prior mean configured for prompt tag '" + std::string(to_string(tag)) + "'");
  }
  if (it->second.empty()) return Tensor(shape);
  if (it->second.shape() != shape) {
    throw ShapeError("prior mean for '" + std::string(to_string(tag)) + "' has shape " +
                     it->second.shape().to_string() + ", latent is " + shape.to_string());
  }
  return it->second;
}

Tensor AnalyticGaussianBackend::predict_noise(const Tensor& z_t, int t, const PromptEmbedding& emb,
                                              const ConditionFeatures* features,
                                              AttentionControlState* control) const {
  if (features != nullptr && !features->empty()) {
    throw CapabilityError("analytic backend does not accept condition features");
  }
  if (control != nullptr && control->mode != AttentionControlState::Mode::none &&
      !warned_control_.exchange(true)) {
    logger()->warn("analytic backend has no attention layers; attention control is ignored");
  }
  const double a = scheduler_.alpha_bar(t);
  Tensor residual = z_t;
  residual.add_scaled(mean(emb.tag, z_t.shape()), -std::sqrt(a));
  Tensor out = apply_spectral_gain(residual, [&](double k2) { return 1.0 / (a * eigenvalue(k2) + 1.0 - a); });
  out *= std::sqrt(1.0 - a);
  return out;
}

Tensor AnalyticGaussianBackend::predict_noise_vjp(const Tensor& z_t, int t, const PromptEmbedding&,
                                                  const Tensor& cotangent) const {
  require_same_shape(z_t, cotangent, "predict_noise_vjp");
  const double a = scheduler_.alpha_bar(t);
  // The Jacobian is the symmetric operator sqrt(1-a) (a Sigma + (1-a) I)^-1.
  Tensor out = apply_spectral_gain(cotangent, [&](double k2) { return 1.0 / (a * eigenvalue(k2) + 1.0 - a); });
  out *= std::sqrt(1.0 - a);
  return out;
}

Tensor AnalyticGaussianBackend::sample_prior(const Shape& shape, PromptTag tag, Rng& rng) const {
  Tensor white = standard_normal(shape, rng);
  Tensor out = apply_spectral_gain(white, [&](double k2) { return std::sqrt(eigenvalue(k2)); });
  out += mean(tag, shape);
  return out;
}

BackendPtr make_analytic_backend(AnalyticGaussianBackendConfig config) {
  return std::make_shared<const AnalyticGaussianBackend>(std::move(config));
}

}  // namespace latcomp
