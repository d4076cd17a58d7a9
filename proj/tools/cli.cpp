#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

#include "latcomp/config.hpp"
#include "latcomp/errors.hpp"
#include "latcomp/image_io.hpp"
#include "latcomp/log.hpp"
#include "latcomp/pipeline.hpp"

namespace latcomp::cli {
namespace {

// Default timestep set of the diagnostic map.
const std::vector<int> kDiagnoseTimesteps = {100, 300, 500};

// A flag that overrides one or more config keys when given.
struct Binding {
  CLI::Option* option = nullptr;
  std::vector<std::string> keys;
  std::string value;
};

struct Session {
  std::string config_path;
  std::string backend;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::optional<int> resolution;
  bool dry_run = false;
  int verbose = 0;
  bool quiet = false;
  std::deque<Binding> bindings;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

using Clock = std::chrono::steady_clock;

std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

void bind(Session& s, CLI::App* app, const std::string& flag, std::vector<std::string> keys,
          const std::string& help) {
  static const RunConfig defaults;
  Binding& b = s.bindings.emplace_back();
  b.keys = std::move(keys);
  b.option = app->add_option(flag, b.value, help)->default_str(unquote(config_value(defaults, b.keys.front())));
}

RunConfig resolve(Session& s) {
  RunConfig cfg = s.config_path.empty() ? RunConfig{} : read_config(s.config_path);
  for (const auto& assignment : s.sets) apply_override(cfg, assignment);
  for (const auto& b : s.bindings) {
    if (b.option->count() == 0) continue;
    for (const auto& key : b.keys) apply_override(cfg, key + "=" + b.value);
  }
  if (!s.backend.empty()) cfg.backend.kind = s.backend;
  if (s.seed) {
    cfg.removal.seed = cfg.harmonization.seed = cfg.composition.seed = *s.seed;
  }
  if (s.resolution) cfg.io.resolution = *s.resolution;
  validate_config(cfg);
  *s.out << "# resolved configuration\n" << dump_config(cfg) << "# end configuration\n";
  return cfg;
}

const std::string& require_input(const std::string& value, const std::string& key, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("required (pass ") + flag + ")", key);
  return value;
}

std::string format_losses(const LossLog& log) {
  if (log.empty()) return "n/a";
  const LossRow& r = log.rows().back();
  std::ostringstream ss;
  ss.precision(6);
  ss << "total=" << r.total << " dds=" << r.dds;
  return ss.str();
}

void summary(Session& s, const std::string& command, const std::vector<std::string>& outputs,
             const std::string& losses, Clock::time_point start) {
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  std::ostringstream ss;
  ss.precision(3);
  ss << std::fixed << seconds;
  std::string joined;
  for (const auto& o : outputs) joined += (joined.empty() ? "" : ",") + o;
  *s.out << command << ": outputs=" << joined << " final_losses[" << losses << "] wall=" << ss.str() << "s\n";
}

void describe_phase(Session& s, const char* name, const PhaseConfig& p) {
  *s.out << "plan: " << name << " steps=" << p.steps << " t=[" << p.timesteps.t_min << "," << p.timesteps.t_max
         << "]";
  if (p.late) {
    *s.out << " late_t=[" << p.late->range.t_min << "," << p.late->range.t_max << "] for final "
           << p.late->final_steps;
  }
  *s.out << " lr=" << p.learning_rate << " cfg=" << p.cfg_weight << "\n";
}

PlacementSpec placement_of(const RunConfig& cfg) {
  if (cfg.io.placement == "explicit") return PlacementSpec::at(cfg.io.offset_y, cfg.io.offset_x, cfg.io.scale);
  return PlacementSpec::bbox_fit();
}

CompositionConditions conditions_of(const RunConfig& cfg, int resolution) {
  CompositionConditions c;
  c.kind = cfg.composition_extra.condition;
  if (c.kind == ConditionKind::sketch || c.kind == ConditionKind::canny) {
    c.source_image = read_image(cfg.composition_extra.source_condition, resolution);
    c.target_image = read_image(cfg.composition_extra.target_condition, resolution);
  }
  return c;
}

// Common phase flags bound to `section`.
void add_phase_flags(Session& s, CLI::App* app, const std::string& section) {
  bind(s, app, "--lr", {section + ".learning_rate"}, "Adam learning rate");
  bind(s, app, "--t-min", {section + ".t_min"}, "Smallest sampled timestep");
  bind(s, app, "--t-max", {section + ".t_max"}, "Largest sampled timestep");
  bind(s, app, "--cfg", {section + ".cfg_weight"}, "Classifier-free guidance weight");
  bind(s, app, "--grad-mode", {section + ".grad_mode"}, "difference or mse_backprop");
  bind(s, app, "--source-prompt", {section + ".source_prompt"}, "Source prompt P_o");
  bind(s, app, "--target-prompt", {section + ".target_prompt"}, "Target prompt P_t");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Session s;
  s.out = &out;
  s.err = &err;

  CLI::App app{"Zero-shot image composition by latent optimisation under a frozen diffusion prior", "latcomp"};
  app.require_subcommand(1);
  app.add_option("-c,--config", s.config_path, "Run configuration file (TOML subset)");
  app.add_option("--backend", s.backend, "analytic | toy-attention | composite | adapter:<name>[:args]")
      ->default_str("analytic");
  app.add_option("--seed", s.seed, "Seed for every phase");
  app.add_option("--set", s.sets, "Override any config key: section.key=value (repeatable)");
  app.add_option("--resolution", s.resolution, "Working resolution for loaded images")->default_str("512");
  app.add_flag("--dry-run", s.dry_run, "Validate and print the resolved plan without computing");
  app.add_flag("-v,--verbose", s.verbose, "More logging (repeat for per-step logs)");
  app.add_flag("-q,--quiet", s.quiet, "Only log errors");
  app.footer(std::string("Adapter backends read their location from $") + kAdapterEnvVar + ".");

  std::string out_path, mask_out, log_path, image_path, mask_path, object_path, object_mask_path, region_mask_path,
      diag_prompt;
  int samples = 1000;
  std::vector<int> timesteps = kDiagnoseTimesteps;

  // remove
  CLI::App* remove = app.add_subcommand("remove", "Erase the masked object from an image");
  bind(s, remove, "--image", {"io.background"}, "Source image I_s");
  bind(s, remove, "--mask", {"io.background_mask"}, "Region mask M_s");
  remove->add_option("--out", out_path, "Output image I_b")->required();
  remove->add_option("--log", log_path, "Per-step loss CSV");
  bind(s, remove, "--steps", {"removal.steps"}, "Optimisation steps");
  bind(s, remove, "--lambda-per", {"removal.lambda_per"}, "Background perceptual weight");
  bind(s, remove, "--background-scale", {"removal.background_dds_scale"}, "DDS weight outside the mask");
  bind(s, remove, "--exclusion-threshold", {"removal.exclusion_threshold"}, "Token exclusion threshold");
  add_phase_flags(s, remove, "removal");

  // paste
  CLI::App* paste = app.add_subcommand("paste", "Copy-paste the object into the background");
  paste->add_option("--background", image_path, "Background image I_b")->required();
  paste->add_option("--object", object_path, "Object image I_t")->required();
  paste->add_option("--object-mask", object_mask_path, "Object mask M_t")->required();
  paste->add_option("--region-mask", region_mask_path, "Region mask M_s")->required();
  paste->add_option("--out", out_path, "Output copy-paste image I_p")->required();
  paste->add_option("--mask-out", mask_out, "Output pasted mask M_p (default <out>_mask.png)");
  bind(s, paste, "--placement", {"io.placement"}, "bbox-fit or explicit");
  bind(s, paste, "--offset-y", {"io.offset_y"}, "Explicit placement: top row");
  bind(s, paste, "--offset-x", {"io.offset_x"}, "Explicit placement: left column");
  bind(s, paste, "--scale", {"io.scale"}, "Explicit placement: scale");

  // harmonize
  CLI::App* harm = app.add_subcommand("harmonize", "Harmonise a copy-paste image");
  harm->add_option("--image", image_path, "Copy-paste image I_p")->required();
  harm->add_option("--mask", mask_path, "Pasted mask M_p")->required();
  harm->add_option("--out", out_path, "Output image I_c")->required();
  harm->add_option("--log", log_path, "Per-step loss CSV");
  bind(s, harm, "--steps", {"harmonization.steps"}, "Optimisation steps");
  bind(s, harm, "--lambda-bak", {"harmonization.lambda_bak"}, "Background perceptual weight");
  bind(s, harm, "--lambda-for", {"harmonization.lambda_for"}, "Foreground perceptual weight");
  add_phase_flags(s, harm, "harmonization");

  // compose
  CLI::App* compose = app.add_subcommand("compose", "Semantic composition under text, sketch or canny conditions");
  compose->add_option("--image", image_path, "Input image I_p or I_c")->required();
  compose->add_option("--out", out_path, "Output image I_res")->required();
  compose->add_option("--log", log_path, "Per-step loss CSV");
  bind(s, compose, "--condition", {"composition.condition"}, "none | text | sketch | canny");
  bind(s, compose, "--source-condition", {"composition.source_condition"}, "Source condition image C_o");
  bind(s, compose, "--target-condition", {"composition.target_condition"}, "Target condition image C_t");
  bind(s, compose, "--steps-text", {"composition.steps_text"}, "Steps for text conditions");
  bind(s, compose, "--steps-sketch", {"composition.steps_sketch"}, "Steps for sketch / canny conditions");
  bind(s, compose, "--gate-step", {"composition.gate_step"}, "Replacement gate: step threshold T");
  bind(s, compose, "--gate-layer", {"composition.gate_layer"}, "Replacement gate: layer threshold L");
  add_phase_flags(s, compose, "composition");

  // pipeline
  CLI::App* pipe = app.add_subcommand("pipeline", "Removal, paste, harmonisation and optional composition");
  bind(s, pipe, "--background", {"io.background"}, "Background image I_s");
  bind(s, pipe, "--background-mask", {"io.background_mask"}, "Region mask M_s");
  bind(s, pipe, "--object", {"io.object"}, "Object image I_t");
  bind(s, pipe, "--object-mask", {"io.object_mask"}, "Object mask M_t");
  bind(s, pipe, "--out-dir", {"io.output_dir"}, "Artifact directory");
  bind(s, pipe, "--placement", {"io.placement"}, "bbox-fit or explicit");

  // diagnose
  CLI::App* diag = app.add_subcommand("diagnose", "Low-density map: mean noise-prediction error per pixel");
  diag->add_option("--image", image_path, "Image to analyse")->required();
  diag->add_option("--out", out_path, "Heatmap PNG (min-max normalised)")->required();
  diag->add_option("--samples", samples, "Noise draws")->capture_default_str();
  diag->add_option("--timesteps", timesteps, "Timesteps to draw from")->delimiter(',')->default_str("100,300,500");
  diag->add_option("--prompt", diag_prompt, "Prompt of the prediction (default unconditional)");

  for (CLI::App* sub : {remove, paste, harm, compose, pipe, diag}) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    err << app.help();
    return 1;
  }

  auto log = logger();
  log->set_level(s.quiet ? spdlog::level::err
                         : s.verbose >= 2 ? spdlog::level::debug
                                          : s.verbose == 1 ? spdlog::level::info : spdlog::level::warn);
  const auto start = Clock::now();

  try {
    const RunConfig cfg = resolve(s);
    const int res = cfg.io.resolution;

    if (remove->parsed()) {
      const std::string& image = require_input(cfg.io.background, "io.background", "--image");
      const std::string& mask = require_input(cfg.io.background_mask, "io.background_mask", "--mask");
      if (s.dry_run) {
        describe_phase(s, "removal", cfg.removal);
        return 0;
      }
      const BackendPtr backend = make_backend(cfg.backend);
      const Tensor img = read_image(image, res);
      const PixelMask m = read_mask(mask, img.height(), img.width());
      const PhaseResult r = remove_object(img, m, cfg.removal, *backend);
      write_image(out_path, r.image);
      std::vector<std::string> outputs{out_path};
      if (!log_path.empty()) {
        r.log.flush(log_path);
        outputs.push_back(log_path);
      }
      summary(s, "remove", outputs, format_losses(r.log), start);
    } else if (paste->parsed()) {
      if (s.dry_run) {
        out << "plan: paste placement=" << cfg.io.placement << "\n";
        return 0;
      }
      const Tensor background = read_image(image_path, res);
      const Tensor object = read_image(object_path, res);
      const PixelMask object_mask = read_mask(object_mask_path, object.height(), object.width());
      const PixelMask region = read_mask(region_mask_path, background.height(), background.width());
      const PasteResult p = paste_object(background, object, object_mask, region, placement_of(cfg));
      if (mask_out.empty()) {
        const std::filesystem::path o(out_path);
        mask_out = (o.parent_path() / (o.stem().string() + "_mask.png")).string();
      }
      write_image(out_path, p.image);
      write_mask(mask_out, p.mask);
      summary(s, "paste", {out_path, mask_out}, "n/a", start);
    } else if (harm->parsed()) {
      if (s.dry_run) {
        describe_phase(s, "harmonization", cfg.harmonization);
        return 0;
      }
      const BackendPtr backend = make_backend(cfg.backend);
      const Tensor img = read_image(image_path, res);
      const PixelMask m = read_mask(mask_path, img.height(), img.width());
      const PhaseResult r = harmonize(img, m, cfg.harmonization, *backend);
      write_image(out_path, r.image);
      std::vector<std::string> outputs{out_path};
      if (!log_path.empty()) {
        r.log.flush(log_path);
        outputs.push_back(log_path);
      }
      summary(s, "harmonize", outputs, format_losses(r.log), start);
    } else if (compose->parsed()) {
      if (cfg.composition_extra.condition == ConditionKind::none) {
        throw ConfigError("compose needs --condition text, sketch or canny", "composition.condition");
      }
      if (s.dry_run) {
        describe_phase(s, "composition", cfg.composition_phase());
        return 0;
      }
      const BackendPtr backend = make_backend(cfg.backend);
      const Tensor img = read_image(image_path, res);
      const PhaseResult r = semantic_compose(img, conditions_of(cfg, res), cfg.composition_phase(), *backend);
      write_image(out_path, r.image);
      std::vector<std::string> outputs{out_path};
      if (!log_path.empty()) {
        r.log.flush(log_path);
        outputs.push_back(log_path);
      }
      summary(s, "compose", outputs, format_losses(r.log), start);
    } else if (pipe->parsed()) {
      CompositionRequest request;
      const std::string& bg = require_input(cfg.io.background, "io.background", "--background");
      const std::string& bg_mask = require_input(cfg.io.background_mask, "io.background_mask", "--background-mask");
      const std::string& obj = require_input(cfg.io.object, "io.object", "--object");
      const std::string& obj_mask = require_input(cfg.io.object_mask, "io.object_mask", "--object-mask");
      const bool compose_phase = cfg.composition_extra.condition != ConditionKind::none;
      if (s.dry_run) {
        describe_phase(s, "removal", cfg.removal);
        out << "plan: paste placement=" << cfg.io.placement << "\n";
        describe_phase(s, "harmonization", cfg.harmonization);
        if (compose_phase) {
          describe_phase(s, "composition", cfg.composition_phase());
        } else {
          out << "plan: composition skipped (no conditions)\n";
        }
        return 0;
      }
      const BackendPtr backend = make_backend(cfg.backend);
      request.background = read_image(bg, res);
      request.region_mask = read_mask(bg_mask, request.background.height(), request.background.width());
      request.object = read_image(obj, res);
      request.object_mask = read_mask(obj_mask, request.object.height(), request.object.width());
      request.placement = placement_of(cfg);
      if (compose_phase) request.conditions = conditions_of(cfg, res);

      PipelineConfigs configs{cfg.removal, cfg.harmonization, cfg.composition_phase()};
      RunArtifacts art;
      try {
        art = run_pipeline(request, configs, *backend);
      } catch (const PipelineError& e) {
        const auto saved = save_artifacts(e.partial(), cfg.io.output_dir);
        const std::string manifest = (std::filesystem::path(cfg.io.output_dir) / "error_manifest.json").string();
        write_error_manifest(manifest, e, saved);
        err << "error: " << e.what() << "\n" << "partial artifacts and " << manifest << " written\n";
        return 2;
      }
      const auto saved = save_artifacts(art, cfg.io.output_dir);
      const LossLog& last = art.composed ? art.composition_log : art.harmonization_log;
      summary(s, "pipeline", saved, format_losses(last), start);
    } else if (diag->parsed()) {
      if (samples < 1) throw ConfigError("must be >= 1", "samples");
      if (s.dry_run) {
        out << "plan: diagnose samples=" << samples << "\n";
        return 0;
      }
      const BackendPtr backend = make_backend(cfg.backend);
      const Tensor img = read_image(image_path, res);
      Rng rng(s.seed.value_or(0));
      const PromptEmbedding emb = backend->embed(diag_prompt, PromptTag::unconditional);
      const DensityMap map = low_density_map(img, *backend, emb, samples, timesteps, rng);
      write_heatmap(out_path, map.raw);
      const auto [lo, hi] = std::minmax_element(map.raw.values.begin(), map.raw.values.end());
      std::ostringstream range;
      range << "raw_min=" << *lo << " raw_max=" << *hi << " (png is min-max normalised)";
      summary(s, "diagnose", {out_path}, range.str(), start);
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace latcomp::cli
