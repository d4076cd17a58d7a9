#include "latcomp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "latcomp/image_io.hpp"
#include "latcomp/log.hpp"
#include "latcomp/optimizer.hpp"
#include "latcomp/resample.hpp"

namespace latcomp {
namespace {

BoundingBox require_box(const PixelMask& mask, const char* what) {
  const auto box = mask.bounding_box();
  if (!box) throw EmptyMaskError(std::string(what) + " is empty");
  return *box;
}

Tensor crop(const Tensor& image, const BoundingBox& box) {
  Tensor out(Shape{image.channels(), box.height, box.width});
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < box.height; ++y) {
      for (int x = 0; x < box.width; ++x) out(c, y, x) = image(c, box.top + y, box.left + x);
    }
  }
  return out;
}

int scaled_extent(int extent, double scale) { return std::max(1, static_cast<int>(std::lround(extent * scale))); }

PromptSet make_prompts(const NoisePredictor& backend, const PhaseConfig& config) {
  PromptSet p;
  p.unconditional = backend.embed("", PromptTag::unconditional);
  p.source = backend.embed(config.source_prompt, PromptTag::source);
  p.target = backend.embed(config.target_prompt, PromptTag::target);
  return p;
}

const FeatureExtractor& extractor_or_default(const FeatureExtractor* extractor) {
  static const auto fallback = make_toy_pyramid_extractor();
  return extractor != nullptr ? *extractor : *fallback;
}

void check_phase(const PhaseConfig& config, const NoisePredictor& backend) {
  config.validate(backend.scheduler().t_max(), to_string(config.phase));
}

PhaseResult finish(const NoisePredictor& backend, LoopResult loop) {
  PhaseResult r;
  r.image = clamp(backend.decode(loop.z), 0.0, 1.0);
  r.latent = std::move(loop.z);
  r.log = std::move(loop.log);
  return r;
}

}  // namespace

PasteResult paste_object(const Tensor& background, const Tensor& object, const PixelMask& object_mask,
                         const PixelMask& region_mask, const PlacementSpec& placement) {
  if (object_mask.height() != object.height() || object_mask.width() != object.width()) {
    throw ShapeError("object mask resolution does not match the object image");
  }
  if (region_mask.height() != background.height() || region_mask.width() != background.width()) {
    throw ShapeError("region mask resolution does not match the background");
  }
  if (object.channels() != background.channels()) throw ShapeError("object and background channel counts differ");
  const BoundingBox src = require_box(object_mask, "object mask");
  const BoundingBox region = require_box(region_mask, "region mask");

  BoundingBox dst;
  if (placement.strategy == PlacementSpec::Strategy::bbox_fit) {
    const double scale = std::min(static_cast<double>(region.height) / src.height,
                                  static_cast<double>(region.width) / src.width);
    dst.height = std::min(region.height, scaled_extent(src.height, scale));
    dst.width = std::min(region.width, scaled_extent(src.width, scale));
    dst.top = region.top + (region.height - dst.height) / 2;
    dst.left = region.left + (region.width - dst.width) / 2;
  } else {
    if (!(placement.scale > 0.0) || !std::isfinite(placement.scale)) {
      throw ConfigError("must be > 0", "io.scale");
    }
    dst.height = scaled_extent(src.height, placement.scale);
    dst.width = scaled_extent(src.width, placement.scale);
    dst.top = placement.offset_y;
    dst.left = placement.offset_x;
    if (dst.top < 0 || dst.left < 0 || dst.top + dst.height > background.height() ||
        dst.left + dst.width > background.width()) {
      throw ConfigError("pasted object (" + std::to_string(dst.height) + "x" + std::to_string(dst.width) + " at " +
                            std::to_string(dst.top) + "," + std::to_string(dst.left) + ") leaves the image bounds",
                        "io.placement");
    }
  }

  Tensor pixels = crop(object, src);
  if (dst.height != src.height || dst.width != src.width) {
    pixels = bilinear_resize(pixels, dst.height, dst.width);
  }

  PasteResult out;
  out.image = background;
  out.placed = dst;
  Plane footprint(background.height(), background.width());
  for (int y = 0; y < dst.height; ++y) {
    const int sy = src.top + static_cast<int>(std::floor((y + 0.5) * src.height / dst.height));
    for (int x = 0; x < dst.width; ++x) {
      const int sx = src.left + static_cast<int>(std::floor((x + 0.5) * src.width / dst.width));
      if (object_mask.at(sy, sx) <= 0.5) continue;
      footprint.at(dst.top + y, dst.left + x) = 1.0;
      for (int c = 0; c < background.channels(); ++c) out.image(c, dst.top + y, dst.left + x) = pixels(c, y, x);
    }
  }
  out.mask = PixelMask(std::move(footprint));
  return out;
}

PhaseResult remove_object(const Tensor& image, const PixelMask& mask, const PhaseConfig& config,
                          const NoisePredictor& backend, const FeatureExtractor* extractor) {
  check_phase(config, backend);
  const RemovalObjective objective =
      make_removal_objective(backend, extractor_or_default(extractor), image, mask, make_prompts(backend, config),
                             config.cfg_weight, config.grad_mode, config.weights, config.exclusion_threshold);
  auto step = [&](const Tensor& z, const NoiseDraw& d) { return loss_removal_gradient(objective, z, d); };
  return finish(backend, optimize_latent(objective.source_latent, step, config.loop_settings(), backend.scheduler()));
}

PhaseResult harmonize(const Tensor& paste_image, const PixelMask& paste_mask, const PhaseConfig& config,
                      const NoisePredictor& backend, const FeatureExtractor* extractor) {
  check_phase(config, backend);
  const HarmonizationObjective objective =
      make_harmonization_objective(backend, extractor_or_default(extractor), paste_image, paste_mask,
                                   make_prompts(backend, config), config.cfg_weight, config.grad_mode, config.weights);
  auto step = [&](const Tensor& z, const NoiseDraw& d) { return loss_harmonization_gradient(objective, z, d); };
  return finish(backend, optimize_latent(objective.paste_latent, step, config.loop_settings(), backend.scheduler()));
}

PhaseResult semantic_compose(const Tensor& input, const CompositionConditions& conditions, const PhaseConfig& config,
                             const NoisePredictor& backend) {
  check_phase(config, backend);
  CompositionObjective objective;
  objective.backend = &backend;
  objective.input_latent = backend.encode(input);
  objective.prompts = make_prompts(backend, config);
  objective.gate = config.gate;
  objective.cfg_weight = config.cfg_weight;
  objective.mode = config.grad_mode;

  if (conditions.kind == ConditionKind::sketch || conditions.kind == ConditionKind::canny) {
    const auto provenance = conditions.kind == ConditionKind::sketch ? FeatureProvenance::sketch
                                                                     : FeatureProvenance::canny;
    const Shape latent = objective.input_latent.shape();
    objective.source_features = backend.encode_condition(conditions.source_image, provenance, latent);
    objective.target_features = backend.encode_condition(conditions.target_image, provenance, latent);
  } else if (conditions.kind == ConditionKind::none) {
    throw ConfigError("composition needs text, sketch or canny conditions", "composition.condition");
  }

  KvCache cache;
  auto step = [&](const Tensor& z, const NoiseDraw& d) { return loss_composition_gradient(objective, cache, z, d); };
  return finish(backend, optimize_latent(objective.input_latent, step, config.loop_settings(), backend.scheduler()));
}

RunArtifacts run_pipeline(const CompositionRequest& request, const PipelineConfigs& configs,
                          const NoisePredictor& backend, const PipelineHooks& hooks) {
  RunArtifacts art;
  auto notify = [&](std::string_view stage) {
    if (hooks.on_stage) hooks.on_stage(stage, art);
  };
  auto guarded = [&](const char* stage, auto&& body) {
    try {
      body();
    } catch (const std::exception& e) {
      logger()->error("{} stage failed: {}", stage, e.what());
      throw PipelineError(stage, e.what(), art, std::current_exception());
    }
    notify(stage);
  };

  guarded("removal", [&] {
    PhaseResult r = remove_object(request.background, request.region_mask, configs.removal, backend, hooks.extractor);
    art.background = std::move(r.image);
    art.removal_log = std::move(r.log);
  });
  guarded("paste", [&] {
    PasteResult p =
        paste_object(*art.background, request.object, request.object_mask, request.region_mask, request.placement);
    art.paste_image = std::move(p.image);
    art.paste_mask = std::move(p.mask);
  });
  guarded("harmonization", [&] {
    PhaseResult r = harmonize(*art.paste_image, *art.paste_mask, configs.harmonization, backend, hooks.extractor);
    art.harmonized = std::move(r.image);
    art.harmonization_log = std::move(r.log);
  });
  if (request.conditions && request.conditions->kind != ConditionKind::none) {
    guarded("composition", [&] {
      PhaseResult r = semantic_compose(*art.harmonized, *request.conditions, configs.composition, backend);
      art.result = std::move(r.image);
      art.composition_log = std::move(r.log);
      art.composed = true;
    });
  } else {
    art.result = art.harmonized;
    notify("composition");
  }
  return art;
}

std::vector<std::string> save_artifacts(const RunArtifacts& art, const std::string& directory) {
  namespace fs = std::filesystem;
  std::vector<std::string> written;
  auto path_of = [&](const char* name) { return (fs::path(directory) / name).string(); };
  auto image = [&](const std::optional<Tensor>& t, const char* name) {
    if (!t) return;
    write_image(path_of(name), *t);
    written.push_back(path_of(name));
  };
  auto log = [&](const LossLog& l, const char* name) {
    if (l.empty()) return;
    l.flush(path_of(name));
    written.push_back(path_of(name));
  };
  image(art.background, "background.png");
  image(art.paste_image, "paste.png");
  if (art.paste_mask) {
    write_mask(path_of("paste_mask.png"), *art.paste_mask);
    written.push_back(path_of("paste_mask.png"));
  }
  image(art.harmonized, "harmonized.png");
  image(art.result, "result.png");
  log(art.removal_log, "removal_loss.csv");
  log(art.harmonization_log, "harmonization_loss.csv");
  log(art.composition_log, "composition_loss.csv");
  return written;
}

void write_error_manifest(const std::string& path, const PipelineError& error,
                          const std::vector<std::string>& saved_files) {
  nlohmann::json doc;
  doc["status"] = "failed";
  doc["phase"] = error.phase();
  doc["message"] = error.what();
  doc["saved_artifacts"] = saved_files;
  write_text_atomic(path, doc.dump(2) + "\n");
}

DensityMap low_density_map(const Tensor& image, const NoisePredictor& backend, const PromptEmbedding& embedding,
                           int n_samples, const std::vector<int>& t_set, Rng& rng) {
  if (n_samples < 1) throw ConfigError("must be >= 1", "samples");
  if (t_set.empty()) throw ConfigError("timestep set is empty", "t_set");
  const Scheduler& scheduler = backend.scheduler();
  for (int t : t_set) scheduler.alpha_bar(t);  // range check before any work

  const Tensor z = backend.encode(image);
  const int h = z.height();
  const int w = z.width();
  const int channels = z.channels();
  DensityMap out;
  out.raw = Plane(h, w);
  std::uniform_int_distribution<std::size_t> pick(0, t_set.size() - 1);
  for (int n = 0; n < n_samples; ++n) {
    const int t = t_set[pick(rng)];
    const double a = scheduler.alpha_bar(t);
    const Tensor eps = standard_normal(z.shape(), rng);
    const Tensor eps_hat = backend.predict_noise(add_noise(z, eps, a), t, embedding);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double err = 0.0;
        for (int c = 0; c < channels; ++c) err += std::abs(eps_hat(c, y, x) - eps(c, y, x));
        out.raw.at(y, x) += err / channels;
      }
    }
  }
  for (double& v : out.raw.values) v /= n_samples;
  out.normalized = normalize_min_max(out.raw);
  return out;
}

}  // namespace latcomp
