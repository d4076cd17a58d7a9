#include "latcomp/guidance.hpp"

#include <cmath>
#include <set>
#include <utility>

#include "latcomp/errors.hpp"
#include "latcomp/scheduler.hpp"

namespace latcomp {

Tensor cfg_combine(const Tensor& eps_c, const Tensor& eps_u, double w) {
  require_same_shape(eps_c, eps_u, "cfg_combine");
  Tensor out(eps_u.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_u[i] + w * (eps_c[i] - eps_u[i]);
  return out;
}

Tensor dds_gradient(const Tensor& eps_src, const Tensor& eps_tgt, double alpha_bar, GradMode mode,
                    const GuidedBranch* target) {
  require_same_shape(eps_src, eps_tgt, "dds_gradient");
  Tensor residual = eps_tgt - eps_src;
  const double jac = std::sqrt(alpha_bar);  // d z_t / d z
  if (mode == GradMode::difference) {
    residual *= jac;
    return residual;
  }

  if (target == nullptr || target->backend == nullptr || target->unconditional == nullptr ||
      target->conditional == nullptr) {
    throw ConfigError("mse_backprop needs the target branch description", "grad_mode");
  }
  if (!target->backend->traits().jacobian) {
    throw CapabilityError("mse_backprop requires a backend with Jacobian support; '" + target->backend->traits().name +
                          "' has none");
  }
  // d/dz ||eps_src - eps_tgt||^2 = 2 sqrt(a) J^T (eps_tgt - eps_src), J = (1 - w) J_u + w J_c
  const double w = target->cfg_weight;
  Tensor grad = target->backend->predict_noise_vjp(target->z_t, target->t, *target->unconditional, residual);
  grad *= (1.0 - w);
  grad.add_scaled(target->backend->predict_noise_vjp(target->z_t, target->t, *target->conditional, residual), w);
  grad *= 2.0 * jac;
  return grad;
}

Tensor guided_prediction(const NoisePredictor& backend, const Tensor& z_t, int t, const PromptEmbedding& uncond,
                         const PromptEmbedding& cond, double w, const ConditionFeatures* features,
                         AttentionControlState* control_uncond, AttentionControlState* control_cond) {
  const Tensor eps_u = backend.predict_noise(z_t, t, uncond, features, control_uncond);
  const Tensor eps_c = backend.predict_noise(z_t, t, cond, features, control_cond);
  return cfg_combine(eps_c, eps_u, w);
}

namespace {

struct DdsPair {
  Tensor eps_src;
  Tensor eps_tgt;
  Tensor z_t;
};

double dds_loss(const DdsPair& p) { return sum_squares(p.eps_src - p.eps_tgt); }

Tensor pair_gradient(const DdsPair& p, const NoisePredictor& backend, const PromptSet& prompts, double w,
                     const NoiseDraw& draw, GradMode mode) {
  GuidedBranch target{&backend, p.z_t, draw.t, &prompts.unconditional, &prompts.target, w};
  return dds_gradient(p.eps_src, p.eps_tgt, draw.alpha_bar, mode, &target);
}

void require_draw(const Tensor& z, const Tensor& reference, const NoiseDraw& draw) {
  require_same_shape(z, reference, "optimised latent");
  require_same_shape(z, draw.noise, "noise draw");
}

}  // namespace

RemovalObjective make_removal_objective(const NoisePredictor& backend, const FeatureExtractor& extractor,
                                        const Tensor& image, const PixelMask& mask, PromptSet prompts,
                                        double cfg_weight, GradMode mode, const PhaseLossWeights& weights,
                                        double exclusion_threshold) {
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw ShapeError("removal mask resolution does not match the image");
  }
  if (mask.covers_everything()) throw EmptyContextError("mask covers entire image");

  RemovalObjective o;
  o.backend = &backend;
  o.extractor = &extractor;
  o.source_image = image;
  o.source_latent = backend.encode(image);
  o.mask = mask;
  o.keep_mask = mask.complement();
  o.prompts = std::move(prompts);
  o.cfg_weight = cfg_weight;
  o.mode = mode;
  o.weights = weights;

  std::set<std::pair<int, int>> resolutions;
  for (const auto& layer : backend.attention_layers(o.source_latent.shape())) {
    resolutions.insert({layer.grid_height, layer.grid_width});
  }
  for (const auto& [gh, gw] : resolutions) {
    TokenMask tm = build_token_mask(mask, gh, gw, exclusion_threshold);
    if (tm.selected_count() == tm.size()) {
      throw EmptyContextError("mask covers entire image at attention resolution " + std::to_string(gh) + "x" +
                              std::to_string(gw));
    }
    o.exclusion_masks.push_back(std::move(tm));
  }

  const int lh = o.source_latent.height();
  const int lw = o.source_latent.width();
  const TokenMask inside = build_token_mask(mask, lh, lw, 0.5);
  o.dds_weights = Plane(lh, lw);
  for (std::size_t i = 0; i < inside.size(); ++i) {
    o.dds_weights.values[i] = inside.selected[i] ? 1.0 : weights.background_dds_scale;
  }
  return o;
}

GradientResult loss_removal_gradient(const RemovalObjective& o, const Tensor& z, const NoiseDraw& draw) {
  require_draw(z, o.source_latent, draw);
  const NoisePredictor& backend = *o.backend;
  DdsPair p;
  const Tensor zhat_t = add_noise(o.source_latent, draw.noise, draw.alpha_bar);
  p.z_t = add_noise(z, draw.noise, draw.alpha_bar);
  p.eps_src = guided_prediction(backend, zhat_t, draw.t, o.prompts.unconditional, o.prompts.source, o.cfg_weight);

  auto control_u = AttentionControlState::exclude(o.exclusion_masks);
  auto control_c = AttentionControlState::exclude(o.exclusion_masks);
  p.eps_tgt = guided_prediction(backend, p.z_t, draw.t, o.prompts.unconditional, o.prompts.target, o.cfg_weight,
                                nullptr, &control_u, &control_c);

  GradientResult r;
  r.dds_component = hadamard(pair_gradient(p, backend, o.prompts, o.cfg_weight, draw, o.mode), o.dds_weights);

  const Tensor decoded = backend.decode(z);
  const PerceptualTerm per = perceptual_term(o.source_image, decoded, *o.extractor, &o.keep_mask);
  r.perceptual_component = backend.decode_vjp(z, per.gradient);
  r.perceptual_component *= o.weights.lambda_per;

  r.gradient = r.dds_component + r.perceptual_component;
  r.losses.dds = dds_loss(p);
  r.losses.per_bak = per.value;
  r.losses.total = r.losses.dds + o.weights.lambda_per * per.value;
  return r;
}

HarmonizationObjective make_harmonization_objective(const NoisePredictor& backend, const FeatureExtractor& extractor,
                                                    const Tensor& image, const PixelMask& mask, PromptSet prompts,
                                                    double cfg_weight, GradMode mode,
                                                    const PhaseLossWeights& weights) {
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw ShapeError("harmonization mask resolution does not match the image");
  }
  HarmonizationObjective o;
  o.backend = &backend;
  o.extractor = &extractor;
  o.paste_image = image;
  o.paste_latent = backend.encode(image);
  o.mask = mask;
  o.keep_mask = mask.complement();
  o.prompts = std::move(prompts);
  o.cfg_weight = cfg_weight;
  o.mode = mode;
  o.weights = weights;
  return o;
}

GradientResult loss_harmonization_gradient(const HarmonizationObjective& o, const Tensor& z, const NoiseDraw& draw) {
  require_draw(z, o.paste_latent, draw);
  const NoisePredictor& backend = *o.backend;
  DdsPair p;
  const Tensor zhat_t = add_noise(o.paste_latent, draw.noise, draw.alpha_bar);
  p.z_t = add_noise(z, draw.noise, draw.alpha_bar);
  p.eps_src = guided_prediction(backend, zhat_t, draw.t, o.prompts.unconditional, o.prompts.source, o.cfg_weight);
  p.eps_tgt = guided_prediction(backend, p.z_t, draw.t, o.prompts.unconditional, o.prompts.target, o.cfg_weight);

  GradientResult r;
  r.dds_component = pair_gradient(p, backend, o.prompts, o.cfg_weight, draw, o.mode);

  const Tensor decoded = backend.decode(z);
  const PerceptualTerm bak = perceptual_term(o.paste_image, decoded, *o.extractor, &o.keep_mask);
  const PerceptualTerm fore = perceptual_term(o.paste_image, decoded, *o.extractor, &o.mask);
  Tensor image_grad = bak.gradient * o.weights.lambda_bak;
  image_grad.add_scaled(fore.gradient, o.weights.lambda_for);
  r.perceptual_component = backend.decode_vjp(z, image_grad);

  r.gradient = r.dds_component + r.perceptual_component;
  r.losses.dds = dds_loss(p);
  r.losses.per_bak = bak.value;
  r.losses.per_for = fore.value;
  r.losses.total = r.losses.dds + o.weights.lambda_bak * bak.value + o.weights.lambda_for * fore.value;
  return r;
}

GradientResult loss_composition_gradient(const CompositionObjective& o, KvCache& cache, const Tensor& z,
                                         const NoiseDraw& draw) {
  require_draw(z, o.input_latent, draw);
  const NoisePredictor& backend = *o.backend;
  DdsPair p;
  const Tensor zhat_t = add_noise(o.input_latent, draw.noise, draw.alpha_bar);
  p.z_t = add_noise(z, draw.noise, draw.alpha_bar);

  const ConditionFeatures* fs = o.source_features.empty() ? nullptr : &o.source_features;
  const ConditionFeatures* ft = o.target_features.empty() ? nullptr : &o.target_features;

  auto record_u = AttentionControlState::record(cache, CallTag::unconditional, draw.step);
  auto record_c = AttentionControlState::record(cache, CallTag::conditional, draw.step);
  p.eps_src = guided_prediction(backend, zhat_t, draw.t, o.prompts.unconditional, o.prompts.source, o.cfg_weight, fs,
                                &record_u, &record_c);

  auto replace_u = AttentionControlState::replace(cache, o.gate, CallTag::unconditional, draw.step);
  auto replace_c = AttentionControlState::replace(cache, o.gate, CallTag::conditional, draw.step);
  p.eps_tgt = guided_prediction(backend, p.z_t, draw.t, o.prompts.unconditional, o.prompts.target, o.cfg_weight, ft,
                                &replace_u, &replace_c);

  GradientResult r;
  r.dds_component = pair_gradient(p, backend, o.prompts, o.cfg_weight, draw, o.mode);
  r.perceptual_component = Tensor(z.shape());
  r.gradient = r.dds_component;
  r.losses.dds = dds_loss(p);
  r.losses.total = r.losses.dds;
  return r;
}

}  // namespace latcomp
