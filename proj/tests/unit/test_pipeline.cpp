#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include <nlohmann/json.hpp>

#include "latcomp/analytic_backend.hpp"
#include "latcomp/errors.hpp"
#include "latcomp/image_io.hpp"
#include "latcomp/optimizer.hpp"
#include "latcomp/pipeline.hpp"
#include "latcomp/toy_attention_backend.hpp"
#include "dense_prior.hpp"
#include "test_support.hpp"

using namespace latcomp;
using latcomp::testing::box_mask;
using latcomp::testing::random_tensor;

namespace {

GradientResult constant_gradient(const Tensor& z, double g) {
  GradientResult r;
  r.gradient = Tensor(z.shape(), g);
  r.losses.total = g;
  return r;
}

// Forwards to a wrapped backend and notes every (step, layer) at which a
// replace-mode call would substitute cached keys and values.
class GateProbe final : public NoisePredictor {
 public:
  explicit GateProbe(BackendPtr inner) : inner_(std::move(inner)) {}

  BackendTraits traits() const override { return inner_->traits(); }
  const Scheduler& scheduler() const override { return inner_->scheduler(); }
  PromptEmbedding embed(std::string_view p, PromptTag tag) const override { return inner_->embed(p, tag); }
  Tensor encode(const Tensor& image) const override { return inner_->encode(image); }
  Tensor decode(const Tensor& latent) const override { return inner_->decode(latent); }
  Tensor decode_vjp(const Tensor& latent, const Tensor& cot) const override { return inner_->decode_vjp(latent, cot); }
  std::vector<AttentionLayerInfo> attention_layers(const Shape& s) const override { return inner_->attention_layers(s); }
  ConditionFeatures encode_condition(const Tensor& c, FeatureProvenance p, const Shape& s) const override {
    return inner_->encode_condition(c, p, s);
  }

  Tensor predict_noise(const Tensor& z_t, int t, const PromptEmbedding& emb, const ConditionFeatures* features,
                       AttentionControlState* control) const override {
    if (control != nullptr && control->mode == AttentionControlState::Mode::replace) {
      control->kv_hook = [this, control](int layer, TokenTensor&, TokenTensor&) {
        if (!should_replace(control->gate, control->current_step, layer)) return;
        const auto& entry = control->cache->read(layer, control->call_tag);
        if (entry.step == control->current_step) active.insert({control->current_step, layer});
      };
    }
    return inner_->predict_noise(z_t, t, emb, features, control);
  }

  mutable std::set<std::pair<int, int>> active;

 private:
  BackendPtr inner_;
};

}  // namespace

TEST_SUITE("timestep sampling") {
  TEST_CASE("default phase ranges") {
    CHECK(PhaseConfig::removal_defaults().timesteps == TimestepRange{50, 400});
    CHECK(PhaseConfig::harmonization_defaults().timesteps == TimestepRange{50, 950});
  }

  TEST_CASE("draws are uniform over the inclusive range") {
    const TimestepRange range{50, 400};
    Rng rng(123);
    std::vector<int> counts(351, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
      const int t = sample_timestep(range, rng);
      REQUIRE(t >= 50);
      REQUIRE(t <= 400);
      ++counts[static_cast<std::size_t>(t - 50)];
    }
    const double expected = static_cast<double>(draws) / 351.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // Upper 1% point of the chi-square distribution with 350 degrees of freedom.
    CHECK(chi2 < 414.47);
    CHECK(counts.front() > 0);
    CHECK(counts.back() > 0);
  }

  TEST_CASE("empty range and determinism") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_timestep({10, 9}, rng), ConfigError);
    Rng a(9), b(9);
    for (int i = 0; i < 100; ++i) CHECK(sample_timestep({0, 1000}, a) == sample_timestep({0, 1000}, b));
  }
}

TEST_SUITE("optimize_latent") {
  const Scheduler sched = Scheduler::linear();

  TEST_CASE("zero gradient keeps the latent") {
    const Tensor init = random_tensor({3, 4, 4}, 1);
    LoopSettings s;
    s.steps = 25;
    const LoopResult r = optimize_latent(init, [](const Tensor& z, const NoiseDraw&) { return constant_gradient(z, 0.0); }, s, sched);
    CHECK(r.z == init);
    CHECK(r.log.size() == 25);
  }

  TEST_CASE("first adaptive-moment step") {
    OptState state(Tensor({1, 1, 1}, 0.0));
    state.apply(Tensor({1, 1, 1}, 1.0), AdamSettings{});
    CHECK(state.z[0] == doctest::Approx(-0.05 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(state.step == 1);
    // Constant gradients keep the bias-corrected step at -lr.
    state.apply(Tensor({1, 1, 1}, 1.0), AdamSettings{});
    CHECK(state.z[0] == doctest::Approx(-0.1).epsilon(1e-7));
  }

  TEST_CASE("same seed gives identical trajectories and logs") {
    const Tensor init = random_tensor({3, 4, 4}, 2);
    auto fn = [](const Tensor& z, const NoiseDraw& d) {
      GradientResult r;
      r.gradient = z * 0.1 + d.noise * static_cast<double>(d.t) * 1e-3;
      r.losses.total = sum_squares(z);
      return r;
    };
    LoopSettings s;
    s.steps = 30;
    s.seed = 77;
    const LoopResult a = optimize_latent(init, fn, s, sched);
    const LoopResult b = optimize_latent(init, fn, s, sched);
    CHECK(a.z == b.z);
    CHECK(a.log.rows() == b.log.rows());
    s.seed = 78;
    CHECK_FALSE(optimize_latent(init, fn, s, sched).z == a.z);
  }

  TEST_CASE("late range covers the final steps") {
    LoopSettings s;
    s.steps = 500;
    s.timesteps = {50, 950};
    s.late = LateRange{{50, 100}, 50};
    CHECK(active_range(s, 450) == TimestepRange{50, 950});
    CHECK(active_range(s, 451) == TimestepRange{50, 100});
    CHECK(active_range(s, 500) == TimestepRange{50, 100});
    const LoopResult r = optimize_latent(Tensor({1, 2, 2}), [](const Tensor& z, const NoiseDraw&) { return constant_gradient(z, 0.0); }, s, sched);
    for (const auto& row : r.log.rows()) {
      if (row.step > 450) {
        CHECK(row.t >= 50);
        CHECK(row.t <= 100);
      }
    }
  }

  TEST_CASE("non-finite gradients abort") {
    LoopSettings s;
    s.steps = 5;
    auto fn = [](const Tensor& z, const NoiseDraw& d) { return constant_gradient(z, d.step == 3 ? NAN : 1.0); };
    CHECK_THROWS_AS(optimize_latent(Tensor({1, 2, 2}), fn, s, sched), NonFiniteError);
    s.steps = 0;
    CHECK_THROWS_AS(optimize_latent(Tensor({1, 2, 2}), fn, s, sched), ConfigError);
  }
}

TEST_SUITE("paste_object") {
  TEST_CASE("equal boxes paste by translation") {
    const Tensor bg(Shape{3, 12, 12}, 0.25);
    const Tensor obj = random_tensor({3, 10, 10}, 3, 0.0, 1.0);
    const PixelMask om = box_mask(10, 10, 1, 2, 4, 3);
    const PixelMask region = box_mask(12, 12, 6, 7, 4, 3);
    const PasteResult r = paste_object(bg, obj, om, region);
    CHECK(r.placed == BoundingBox{6, 7, 4, 3});
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 3; ++x) CHECK(r.image(c, 6 + y, 7 + x) == obj(c, 1 + y, 2 + x));
      }
    }
    CHECK(r.mask.area() == 12);
  }

  TEST_CASE("halving transports the mask by nearest neighbour") {
    // 8x8 object box with an L-shaped mask into a 4x4 region: output cell
    // (y, x) samples source (2y + 1, 2x + 1).
    Plane om(8, 8);
    for (int y = 0; y < 8; ++y) om.at(y, 0) = om.at(y, 1) = 1.0;
    for (int x = 0; x < 8; ++x) om.at(6, x) = om.at(7, x) = 1.0;
    om.at(0, 7) = 1.0;  // keeps the bounding box 8x8
    const Tensor obj(Shape{3, 8, 8}, 0.9);
    const Tensor bg(Shape{3, 8, 8}, 0.1);
    const PasteResult r = paste_object(bg, obj, PixelMask(om), box_mask(8, 8, 2, 2, 4, 4));
    CHECK(r.placed == BoundingBox{2, 2, 4, 4});
    Plane want(8, 8);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) want.at(2 + y, 2 + x) = om.at(2 * y + 1, 2 * x + 1);
    }
    CHECK(r.mask.plane() == want);
    CHECK(r.mask.area() == 7);
  }

  TEST_CASE("compositing identity") {
    const Tensor bg = random_tensor({3, 16, 16}, 4, 0.0, 1.0);
    const Tensor obj = random_tensor({3, 16, 16}, 5, 0.0, 1.0);
    const PasteResult r = paste_object(bg, obj, box_mask(16, 16, 3, 3, 9, 6), box_mask(16, 16, 2, 4, 10, 10));
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
          if (r.mask.at(y, x) < 0.5) CHECK(r.image(c, y, x) == bg(c, y, x));
        }
      }
    }
    // Aspect ratio 9:6 scaled by 10/9 and centred horizontally.
    CHECK(r.placed == BoundingBox{2, 5, 10, 7});
    CHECK(r.mask.area() == 70);
  }

  TEST_CASE("explicit placement and errors") {
    const Tensor bg(Shape{3, 10, 10}, 0.0);
    const Tensor obj(Shape{3, 10, 10}, 1.0);
    const PixelMask om = box_mask(10, 10, 0, 0, 4, 4);
    const PixelMask region = box_mask(10, 10, 0, 0, 2, 2);
    const PasteResult r = paste_object(bg, obj, om, region, PlacementSpec::at(5, 6, 0.5));
    CHECK(r.placed == BoundingBox{5, 6, 2, 2});
    CHECK_THROWS_AS(paste_object(bg, obj, om, region, PlacementSpec::at(8, 0, 1.0)), ConfigError);
    CHECK_THROWS_AS(paste_object(bg, obj, PixelMask::filled(10, 10, 0.0), region), EmptyMaskError);
    CHECK_THROWS_AS(paste_object(bg, obj, om, PixelMask::filled(10, 10, 0.0)), EmptyMaskError);
  }
}

TEST_SUITE("phases") {
  TEST_CASE("removal with an empty mask keeps the image") {
    const auto backend = make_toy_attention_backend();
    const Tensor image = random_tensor({3, 16, 16}, 10, 0.0, 1.0);
    PhaseConfig cfg = PhaseConfig::removal_defaults();
    cfg.steps = 40;
    const PhaseResult r = remove_object(image, PixelMask::filled(16, 16, 0.0), cfg, *backend);
    CHECK(mean_abs_diff(r.image, image) <= 1e-3);
    CHECK(r.log.size() == 40);
  }

  TEST_CASE("removal flattens a square bump toward the smooth field") {
    const int n = 32;
    const Tensor smooth = testing::smooth_field(n, 0.1, 0.05, 4.0, 3);
    Tensor image = smooth;
    const BoundingBox square{n / 4, n / 4, n / 2, n / 2};
    for (int c = 0; c < 3; ++c) {
      for (int y = square.top; y < square.top + square.height; ++y) {
        for (int x = square.left; x < square.left + square.width; ++x) image(c, y, x) += 0.8;
      }
    }
    const PixelMask mask = box_mask(n, n, square.top - 1, square.left - 1, square.height + 2, square.width + 2);
    const Plane band = testing::boundary_band(square, n, n, 2);
    const auto backend = make_toy_attention_backend();
    const PhaseResult r = remove_object(image, mask, PhaseConfig::removal_defaults(), *backend);
    const double before = testing::masked_mean_abs_diff(image, smooth, band);
    const double after = testing::masked_mean_abs_diff(r.image, smooth, band);
    MESSAGE("band error " << before << " -> " << after);
    CHECK(after <= 0.5 * before);
  }

  TEST_CASE("an all-covering mask is rejected") {
    const auto backend = make_toy_attention_backend();
    CHECK_THROWS_AS(remove_object(Tensor({3, 8, 8}, 0.5), PixelMask::filled(8, 8, 1.0), PhaseConfig::removal_defaults(), *backend),
                    EmptyContextError);
  }

  TEST_CASE("harmonizing a prior sample moves no more than a perceptual-only control") {
    const auto backend = std::make_shared<AnalyticGaussianBackend>(AnalyticGaussianBackendConfig{2.0});
    Rng rng(11);
    const Tensor sample = clamp(backend->sample_prior({3, 16, 16}, PromptTag::unconditional, rng) * 0.1 + Tensor({3, 16, 16}, 0.5), 0.0, 1.0);
    const PixelMask mask = box_mask(16, 16, 4, 4, 8, 8);
    PhaseConfig cfg = PhaseConfig::harmonization_defaults();
    cfg.steps = 60;
    const PhaseResult r = harmonize(sample, mask, cfg, *backend);

    const BoxPyramidExtractor fx;
    const auto objective = make_harmonization_objective(
        *backend, fx, sample, mask,
        {backend->embed("", PromptTag::unconditional), backend->embed(cfg.source_prompt, PromptTag::source),
         backend->embed(cfg.target_prompt, PromptTag::target)},
        cfg.cfg_weight, cfg.grad_mode, cfg.weights);
    auto perceptual_only = [&](const Tensor& z, const NoiseDraw& d) {
      GradientResult g = loss_harmonization_gradient(objective, z, d);
      g.gradient = g.perceptual_component;
      return g;
    };
    const LoopResult control = optimize_latent(sample, perceptual_only, cfg.loop_settings(), backend->scheduler());
    const double change = mean_abs_diff(r.image, sample);
    const double control_change = mean_abs_diff(clamp(control.z, 0.0, 1.0), sample);
    CHECK(change <= 2.0 * control_change + 1e-12);
    CHECK(std::all_of(r.image.values().begin(), r.image.values().end(), [](double v) { return v >= 0.0 && v <= 1.0; }));
  }

  TEST_CASE("identical text conditions leave the input bitwise unchanged") {
    const auto backend = make_toy_attention_backend();
    const Tensor input = random_tensor({3, 16, 16}, 12, 0.0, 1.0);
    PhaseConfig cfg = PhaseConfig::composition_defaults();
    cfg.steps = 12;
    cfg.late = LateRange{{50, 100}, 4};
    cfg.source_prompt = cfg.target_prompt = "a cat";
    const PhaseResult r = semantic_compose(input, {ConditionKind::text, {}, {}}, cfg, *backend);
    CHECK(r.image == input);
    CHECK(r.log.rows().back().dds == 0.0);
  }

  TEST_CASE("the replacement gate fires on steps 401 to 500 above layer 10") {
    ToyAttentionBackendConfig tc;
    tc.tag_bias[PromptTag::target] = {0.05, 0.0, 0.0};
    GateProbe probe(make_toy_attention_backend(tc));
    const Tensor input = random_tensor({3, 8, 8}, 13, 0.0, 1.0);
    const PhaseConfig cfg = PhaseConfig::composition_defaults(ConditionKind::text);
    REQUIRE(cfg.steps == 500);
    semantic_compose(input, {ConditionKind::text, {}, {}}, cfg, probe);
    std::set<std::pair<int, int>> want;
    for (int step = 401; step <= 500; ++step) {
      for (int layer = 11; layer < 16; ++layer) want.insert({step, layer});
    }
    CHECK(probe.active == want);
  }

  TEST_CASE("composition needs conditions") {
    const auto backend = make_toy_attention_backend();
    CHECK_THROWS_AS(semantic_compose(Tensor({3, 8, 8}, 0.5), {ConditionKind::none, {}, {}},
                                     PhaseConfig::composition_defaults(), *backend),
                    ConfigError);
  }

  TEST_CASE("sketch conditions run through condition features") {
    ToyAttentionBackendConfig tc;
    const auto backend = make_toy_attention_backend(tc);
    const Tensor input = random_tensor({3, 16, 16}, 14, 0.0, 1.0);
    PhaseConfig cfg = PhaseConfig::composition_defaults(ConditionKind::sketch);
    CHECK(cfg.steps == 200);
    cfg.steps = 10;
    cfg.late = LateRange{{50, 100}, 3};
    const CompositionConditions cond{ConditionKind::sketch, random_tensor({3, 16, 16}, 15, 0.0, 1.0),
                                     random_tensor({3, 16, 16}, 16, 0.0, 1.0)};
    const PhaseResult r = semantic_compose(input, cond, cfg, *backend);
    CHECK(r.log.size() == 10);
    CHECK(mean_abs_diff(r.image, input) > 0.0);
  }
}

TEST_SUITE("run_pipeline") {
  CompositionRequest small_request() {
    CompositionRequest req;
    req.background = testing::smooth_field(16, 0.4, 0.05, 2.0, 1);
    req.region_mask = box_mask(16, 16, 5, 5, 6, 6);
    req.object = random_tensor({3, 16, 16}, 20, 0.0, 1.0);
    req.object_mask = box_mask(16, 16, 2, 3, 10, 8);
    return req;
  }

  PipelineConfigs quick_configs() {
    PipelineConfigs c;
    c.removal.steps = 8;
    c.harmonization.steps = 8;
    c.composition.steps = 8;
    c.composition.late = LateRange{{50, 100}, 2};
    return c;
  }

  TEST_CASE("without conditions the result is the harmonized image") {
    const auto backend = make_toy_attention_backend();
    std::vector<std::string> stages;
    PipelineHooks hooks;
    hooks.on_stage = [&](std::string_view s, const RunArtifacts&) { stages.emplace_back(s); };
    const RunArtifacts art = run_pipeline(small_request(), quick_configs(), *backend, hooks);
    REQUIRE(art.result.has_value());
    CHECK(*art.result == *art.harmonized);
    CHECK_FALSE(art.composed);
    CHECK(art.composition_log.empty());
    CHECK(stages == std::vector<std::string>{"removal", "paste", "harmonization", "composition"});
  }

  TEST_CASE("runs are deterministic") {
    const auto backend = make_toy_attention_backend();
    CompositionRequest req = small_request();
    req.conditions = CompositionConditions{ConditionKind::text, {}, {}};
    auto cfg = quick_configs();
    cfg.composition.target_prompt = "a red object";
    const RunArtifacts a = run_pipeline(req, cfg, *backend);
    const RunArtifacts b = run_pipeline(req, cfg, *backend);
    CHECK(a.composed);
    CHECK(*a.background == *b.background);
    CHECK(*a.result == *b.result);
    CHECK(a.removal_log.rows() == b.removal_log.rows());
  }

  TEST_CASE("failures carry partial artifacts and a manifest") {
    const auto backend = make_toy_attention_backend();
    CompositionRequest req = small_request();
    req.object_mask = PixelMask::filled(16, 16, 0.0);
    try {
      run_pipeline(req, quick_configs(), *backend);
      FAIL("expected a pipeline error");
    } catch (const PipelineError& e) {
      CHECK(e.phase() == "paste");
      CHECK(e.partial().background.has_value());
      CHECK_FALSE(e.partial().harmonized.has_value());
      const auto dir = testing::scratch_dir("pipeline_partial");
      const auto saved = save_artifacts(e.partial(), dir.string());
      CHECK(saved.size() == 2);
      write_error_manifest((dir / "error_manifest.json").string(), e, saved);
      const auto doc = nlohmann::json::parse(testing::read_bytes(dir / "error_manifest.json"));
      CHECK(doc["phase"] == "paste");
      CHECK(doc["saved_artifacts"].size() == 2);
    }

    req = small_request();
    req.region_mask = PixelMask::filled(16, 16, 1.0);
    CHECK_THROWS_WITH_AS(run_pipeline(req, quick_configs(), *backend), doctest::Contains("mask covers entire image"),
                         PipelineError);
  }

  TEST_CASE("artifacts are written") {
    const auto backend = make_toy_attention_backend();
    const RunArtifacts art = run_pipeline(small_request(), quick_configs(), *backend);
    const auto dir = testing::scratch_dir("pipeline_artifacts");
    const auto saved = save_artifacts(art, dir.string());
    for (const char* name : {"background.png", "paste.png", "paste_mask.png", "harmonized.png", "result.png",
                             "removal_loss.csv", "harmonization_loss.csv"}) {
      CHECK(std::filesystem::exists(dir / name));
    }
    CHECK(saved.size() == 7);
  }
}

TEST_SUITE("low_density_map") {
  TEST_CASE("a prior sample matches the closed-form expected map") {
    // For fixed z the per-pixel error eps_hat - eps is Gaussian with mean
    // sqrt(a (1 - a)) M^-1 z and covariance B B^T, B = (1 - a) M^-1 - I,
    // M = a Sigma + (1 - a) I, so every cell has a folded-normal expectation.
    const int n = 16;
    const double beta = 4.0;
    const std::vector<int> t_set{100, 300, 500};
    const int samples = 1000;
    const auto backend = std::make_shared<AnalyticGaussianBackend>(AnalyticGaussianBackendConfig{beta});
    Rng rng(31);
    const Tensor z = backend->sample_prior({3, n, n}, PromptTag::unconditional, rng);
    const DensityMap map =
        low_density_map(z, *backend, backend->embed("", PromptTag::unconditional), samples, t_set, rng);

    const int N = n * n;
    const Eigen::MatrixXd sigma = testing::dense_prior_covariance(n, beta);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(N, N);
    std::vector<double> expected(N, 0.0), second(N, 0.0);
    for (int t : t_set) {
      const double a = backend->scheduler().alpha_bar(t);
      const Eigen::MatrixXd m_inv = (a * sigma + (1 - a) * eye).inverse();
      const Eigen::MatrixXd b = (1 - a) * m_inv - eye;
      const Eigen::VectorXd spread = (b * b.transpose()).diagonal().cwiseSqrt();
      for (int c = 0; c < 3; ++c) {
        Eigen::VectorXd zc(N);
        for (int i = 0; i < N; ++i) zc(i) = z[static_cast<std::size_t>(c * N + i)];
        const Eigen::VectorXd mean = std::sqrt(a * (1 - a)) * (m_inv * zc);
        for (int i = 0; i < N; ++i) {
          expected[i] += testing::folded_normal_mean(mean(i), spread(i)) / (3.0 * t_set.size());
          second[i] += (mean(i) * mean(i) + spread(i) * spread(i)) / (3.0 * t_set.size());
        }
      }
    }
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
      const double se = std::sqrt(second[i] / samples);
      worst = std::max(worst, std::abs(map.raw.values[i] - expected[i]) / se);
    }
    CHECK(worst <= 4.0);

    std::vector<double> cells = map.raw.values;
    std::sort(cells.begin(), cells.end());
    MESSAGE("max/median of one prior draw: " << cells.back() / (0.5 * (cells[127] + cells[128])));
    CHECK(*std::min_element(map.normalized.values.begin(), map.normalized.values.end()) == 0.0);
    CHECK(*std::max_element(map.normalized.values.begin(), map.normalized.values.end()) == 1.0);
  }

  TEST_CASE("sample count and timestep set are validated") {
    const auto backend = make_analytic_backend();
    Rng rng(1);
    const auto emb = backend->embed("", PromptTag::unconditional);
    CHECK_THROWS_AS(low_density_map(Tensor({3, 4, 4}), *backend, emb, 0, {100}, rng), ConfigError);
    CHECK_THROWS_AS(low_density_map(Tensor({3, 4, 4}), *backend, emb, 10, {}, rng), ConfigError);
    CHECK_THROWS_AS(low_density_map(Tensor({3, 4, 4}), *backend, emb, 10, {2000}, rng), RangeError);
  }
}
