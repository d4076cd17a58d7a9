#include "latcomp/backend.hpp"

#include <map>
#include <mutex>

#include "latcomp/errors.hpp"
#include "latcomp/noise.hpp"

namespace latcomp {

std::string_view to_string(PromptTag tag) noexcept {
  switch (tag) {
    case PromptTag::unconditional: return "unconditional";
    case PromptTag::source: return "source";
    case PromptTag::target: return "target";
  }
  return "unknown";
}

Tensor NoisePredictor::predict_noise_vjp(const Tensor&, int, const PromptEmbedding&, const Tensor&) const {
  throw CapabilityError("backend '" + traits().name + "' does not provide noise-prediction Jacobians");
}

std::vector<AttentionLayerInfo> NoisePredictor::attention_layers(const Shape&) const { return {}; }

ConditionFeatures NoisePredictor::encode_condition(const Tensor&, FeatureProvenance, const Shape&) const {
  throw CapabilityError("backend '" + traits().name + "' does not support condition features");
}

Shape NoisePredictor::latent_shape(int image_height, int image_width) const {
  const int f = traits().compression_factor;
  if (image_height % f != 0 || image_width % f != 0) {
    throw ShapeError("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                     " not divisible by compression factor " + std::to_string(f));
  }
  return encode(Tensor(Shape{3, image_height, image_width})).shape();
}

namespace {

std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

PromptEmbedding hashed_prompt_embedding(std::string_view prompt, PromptTag tag, int length, int dim) {
  PromptEmbedding emb;
  emb.tag = tag;
  emb.text = std::string(prompt);
  emb.tokens.assign(static_cast<std::size_t>(length), std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  if (prompt.empty()) return emb;
  Rng rng(fnv1a(prompt));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& token : emb.tokens) {
    for (double& v : token) v = normal(rng);
  }
  return emb;
}

void check_identity_codec_input(const Tensor& image) {
  if (image.channels() != 3) throw ShapeError("images must have 3 channels, got " + image.shape().to_string());
  require_finite(image, "image");
}

namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, AdapterFactory, std::less<>> factories;
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_adapter(const std::string& name, AdapterFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
}

BackendPtr load_adapter(std::string_view spec) {
  const auto colon = spec.find(':');
  const std::string_view name = spec.substr(0, colon);
  const std::string_view args = colon == std::string_view::npos ? std::string_view{} : spec.substr(colon + 1);
  AdapterFactory factory;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.factories.find(name);
    if (it == r.factories.end()) {
      throw ConfigError("no adapter registered under '" + std::string(name) + "'", "backend.kind");
    }
    factory = it->second;
  }
  return factory(args);
}

std::vector<std::string> registered_adapters() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, _] : r.factories) names.push_back(name);
  return names;
}

}  // namespace latcomp
