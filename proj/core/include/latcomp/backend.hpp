#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "latcomp/attention.hpp"
#include "latcomp/scheduler.hpp"
#include "latcomp/tensor.hpp"

namespace latcomp {

enum class PromptTag { unconditional, source, target };

std::string_view to_string(PromptTag tag) noexcept;

struct PromptEmbedding {
  std::vector<std::vector<double>> tokens;  // sequence of d-dimensional vectors
  PromptTag tag = PromptTag::unconditional;
  std::string text;
};

enum class FeatureProvenance { none, sketch, canny, external };

// Additive guidance features, one tensor per attention resolution of the
// predictor that produced them.
struct ConditionFeatures {
  FeatureProvenance provenance = FeatureProvenance::none;
  std::vector<Tensor> levels;

  bool empty() const noexcept { return provenance == FeatureProvenance::none || levels.empty(); }
};

struct AttentionLayerInfo {
  int index = 0;
  int grid_height = 0;
  int grid_width = 0;
};

// What a backend declares to the optimisation pipeline.
struct BackendTraits {
  std::string name;
  int compression_factor = 1;
  bool feature_injection = false;
  bool attention_hooks = false;
  bool jacobian = false;
};

// Frozen conditional noise predictor together with its schedule, latent codec
// and embedding provider. Implementations are immutable after construction
// and safe for concurrent const use.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  virtual BackendTraits traits() const = 0;
  virtual const Scheduler& scheduler() const = 0;
  virtual PromptEmbedding embed(std::string_view prompt, PromptTag tag) const = 0;

  // image: 3 x H x W in [0, 1]; H and W divisible by the compression factor.
  virtual Tensor encode(const Tensor& image) const = 0;
  virtual Tensor decode(const Tensor& latent) const = 0;
  // Pullback of `cotangent` (image space) through decode at `latent`.
  virtual Tensor decode_vjp(const Tensor& latent, const Tensor& cotangent) const = 0;

  // `control` is only honoured by backends with attention hooks.
  virtual Tensor predict_noise(const Tensor& z_t, int t, const PromptEmbedding& emb,
                               const ConditionFeatures* features = nullptr,
                               AttentionControlState* control = nullptr) const = 0;

  // J^T cotangent for J = d predict_noise / d z_t. Throws CapabilityError
  // unless traits().jacobian.
  virtual Tensor predict_noise_vjp(const Tensor& z_t, int t, const PromptEmbedding& emb,
                                   const Tensor& cotangent) const;

  virtual std::vector<AttentionLayerInfo> attention_layers(const Shape& latent) const;

  // Translates a condition image (sketch, edge map) into injectable features.
  virtual ConditionFeatures encode_condition(const Tensor& condition, FeatureProvenance provenance,
                                             const Shape& latent) const;

  Shape latent_shape(int image_height, int image_width) const;
};

using BackendPtr = std::shared_ptr<const NoisePredictor>;

// Deterministic embedding derived from a hash of the prompt text; the empty
// prompt maps to all-zero tokens.
PromptEmbedding hashed_prompt_embedding(std::string_view prompt, PromptTag tag, int length, int dim);

// Identity codec check shared by the desk-scale backends.
void check_identity_codec_input(const Tensor& image);

// --- plug-in adapters -------------------------------------------------------

// Name of the environment variable through which adapter plug-ins locate
// weights or credentials. The library never reads its content.
inline constexpr const char* kAdapterEnvVar = "LATCOMP_ADAPTER_HOME";

using AdapterFactory = std::function<BackendPtr(std::string_view args)>;

// Registers a factory reachable as "adapter:<name>[:args]".
void register_adapter(const std::string& name, AdapterFactory factory);
// `spec` is the part after "adapter:". Throws ConfigError for unknown names.
BackendPtr load_adapter(std::string_view spec);
std::vector<std::string> registered_adapters();

}  // namespace latcomp
