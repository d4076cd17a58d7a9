#pragma once

#include <atomic>
#include <map>

#include "latcomp/backend.hpp"

namespace latcomp {

// Gaussian image prior N(mu_tag, Sigma) with Sigma circulant: its eigenvalues
// in the 2-D DFT basis are lambda_k = 1 / (1 + smoothness * |k|^2).
struct AnalyticGaussianBackendConfig {
  double smoothness = 1.0;
  // Prior mean per prompt tag. An empty tensor stands for the zero field.
  std::map<PromptTag, Tensor> means = {
      {PromptTag::unconditional, Tensor{}}, {PromptTag::source, Tensor{}}, {PromptTag::target, Tensor{}}};
  int t_max = 1000;
};

// Predicts the exact posterior-mean noise
//   E[eps | z_t] = sqrt(1 - a) (a Sigma + (1 - a) I)^-1 (z_t - sqrt(a) mu)
// with a = alpha_bar(t). Identity codec, no attention layers.
class AnalyticGaussianBackend final : public NoisePredictor {
 public:
  explicit AnalyticGaussianBackend(AnalyticGaussianBackendConfig config);

  BackendTraits traits() const override;
  const Scheduler& scheduler() const override { return scheduler_; }
  PromptEmbedding embed(std::string_view prompt, PromptTag tag) const override;
  Tensor encode(const Tensor& image) const override;
  Tensor decode(const Tensor& latent) const override;
  Tensor decode_vjp(const Tensor& latent, const Tensor& cotangent) const override;
  Tensor predict_noise(const Tensor& z_t, int t, const PromptEmbedding& emb, const ConditionFeatures* features,
                       AttentionControlState* control) const override;
  Tensor predict_noise_vjp(const Tensor& z_t, int t, const PromptEmbedding& emb,
                           const Tensor& cotangent) const override;

  const AnalyticGaussianBackendConfig& config() const noexcept { return config_; }
  double eigenvalue(double freq_norm2) const noexcept;
  // Mean field for `tag` at `shape` (zeros when unset).
  Tensor mean(PromptTag tag, const Shape& shape) const;
  // Exact draw mu_tag + Sigma^{1/2} n.
  Tensor sample_prior(const Shape& shape, PromptTag tag, Rng& rng) const;

 private:
  AnalyticGaussianBackendConfig config_;
  Scheduler scheduler_;
  mutable std::atomic<bool> warned_control_{false};
};

BackendPtr make_analytic_backend(AnalyticGaussianBackendConfig config = {});

}  // namespace latcomp
