#include "latcomp/toy_attention_backend.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "latcomp/errors.hpp"
#include "latcomp/noise.hpp"
#include "latcomp/resample.hpp"

namespace latcomp {
namespace {

constexpr int kPositional = 2;  // grid row and column
constexpr int kEmbeddingLength = 8;
constexpr int kEmbeddingDim = 16;

std::vector<double> gaussian_matrix(Rng& rng, int rows, int cols, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> m(static_cast<std::size_t>(rows) * cols);
  for (double& v : m) v = scale * normal(rng);
  return m;
}

// tokens (n x channels) from a (channels x gh x gw) tensor
TokenTensor to_tokens(const Tensor& grid) {
  const int n = grid.height() * grid.width();
  TokenTensor out(1, n, grid.channels());
  for (int c = 0; c < grid.channels(); ++c) {
    auto ch = grid.channel(c);
    for (int i = 0; i < n; ++i) out.at(0, i, c) = ch[i];
  }
  return out;
}

Tensor from_tokens(const TokenTensor& tokens, int height, int width) {
  Tensor out(Shape{tokens.dim, height, width});
  for (int c = 0; c < tokens.dim; ++c) {
    auto ch = out.channel(c);
    for (int i = 0; i < tokens.seq; ++i) ch[i] = tokens.at(0, i, c);
  }
  return out;
}

// Query and key tokens whose scaled dot product is a Gaussian kernel:
//   q_i . k_j / sqrt(dim + 1) = u_i . u_j - |u_j|^2 / 2,  u = W f,
// which equals -|u_i - u_j|^2 / 2 up to a per-query constant that softmax
// removes. f holds content over `content_bw` and grid position over `pos_bw`.
struct KernelTokens {
  TokenTensor q;
  TokenTensor k;
};

KernelTokens kernel_tokens(const TokenTensor& h, int gw, const std::vector<double>& w, int dim, double content_bw,
                           double pos_bw) {
  const int c = h.dim;
  const int in_dim = c + kPositional;
  const double root = std::sqrt(static_cast<double>(dim + 1));
  KernelTokens out{TokenTensor(1, h.seq, dim + 1), TokenTensor(1, h.seq, dim + 1)};
  std::vector<double> f(static_cast<std::size_t>(in_dim));
  for (int i = 0; i < h.seq; ++i) {
    for (int ch = 0; ch < c; ++ch) f[ch] = h.at(0, i, ch) / content_bw;
    f[c] = (i / gw) / pos_bw;
    f[c + 1] = (i % gw) / pos_bw;
    double norm2 = 0.0;
    for (int o = 0; o < dim; ++o) {
      const double* row = &w[static_cast<std::size_t>(o) * in_dim];
      double u = 0.0;
      for (int j = 0; j < in_dim; ++j) u += row[j] * f[j];
      out.q.at(0, i, o) = root * u;
      out.k.at(0, i, o) = u;
      norm2 += u * u;
    }
    out.q.at(0, i, dim) = root;
    out.k.at(0, i, dim) = -0.5 * norm2;
  }
  return out;
}

}  // namespace

ToyAttentionBackend::ToyAttentionBackend(ToyAttentionBackendConfig config)
    : config_(config), scheduler_(Scheduler::linear(config.t_max)) {
  if (config_.layer_count < 1) throw ConfigError("layer_count must be >= 1", "backend.layer_count");
  if (config_.dim < 1) throw ConfigError("dim must be >= 1", "backend.dim");
  if (config_.channels < 1) throw ConfigError("channels must be >= 1", "backend.channels");
  if (config_.max_tokens < 1) throw ConfigError("max_tokens must be >= 1", "backend.max_tokens");
  if (!(config_.mix > 0.0 && config_.mix <= 1.0)) throw ConfigError("mix must lie in (0, 1]", "backend.mix");
  if (!(config_.content_bandwidth > 0.0)) throw ConfigError("content_bandwidth must be > 0", "backend.content_bandwidth");
  if (!(config_.position_bandwidth > 0.0)) {
    throw ConfigError("position_bandwidth must be > 0", "backend.position_bandwidth");
  }
  if (!(config_.smooth_weight >= 0.0 && config_.smooth_weight <= 1.0)) {
    throw ConfigError("smooth_weight must lie in [0, 1]", "backend.smooth_weight");
  }
  for (const auto& [tag, bias] : config_.tag_bias) {
    if (!bias.empty() && bias.size() != static_cast<std::size_t>(config_.channels)) {
      throw ConfigError("bias for tag '" + std::string(to_string(tag)) + "' needs one value per channel",
                        "backend.tag_bias");
    }
  }

  Rng rng(config_.seed);
  const int c = config_.channels;
  // Gaussian rows scaled by 1/sqrt(dim) preserve squared distances on average.
  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));
  for (int l = 0; l < config_.layer_count; ++l) {
    layers_.push_back(Layer{gaussian_matrix(rng, config_.dim, c + kPositional, scale)});
  }
  feature_projection_ = gaussian_matrix(rng, c, 3, 1.0);
}

BackendTraits ToyAttentionBackend::traits() const {
  return BackendTraits{"toy-attention", 1, true, true, false};
}

PromptEmbedding ToyAttentionBackend::embed(std::string_view prompt, PromptTag tag) const {
  return hashed_prompt_embedding(prompt, tag, kEmbeddingLength, kEmbeddingDim);
}

Tensor ToyAttentionBackend::encode(const Tensor& image) const {
  check_identity_codec_input(image);
  if (config_.channels != 3) throw ShapeError("toy attention identity codec requires channels = 3");
  return image;
}

Tensor ToyAttentionBackend::decode(const Tensor& latent) const { return latent; }

Tensor ToyAttentionBackend::decode_vjp(const Tensor& latent, const Tensor& cotangent) const {
  require_same_shape(latent, cotangent, "decode_vjp");
  return cotangent;
}

int ToyAttentionBackend::level_of_layer(int layer) const noexcept {
  const int n = config_.layer_count;
  const int quarter = n / 4;
  return (layer >= quarter && layer < n - quarter) ? 1 : 0;
}

std::vector<ToyAttentionBackend::Grid> ToyAttentionBackend::grids(const Shape& latent) const {
  const int h = latent.height;
  const int w = latent.width;
  if (h < 1 || w < 1) throw ShapeError("latent must be at least 1x1");
  const int g = std::gcd(h, w);
  int f0 = g;
  for (int f = 1; f <= g; ++f) {
    if (g % f == 0 && (h / f) * (w / f) <= config_.max_tokens) {
      f0 = f;
      break;
    }
  }
  const int f1 = (g % (2 * f0) == 0) ? 2 * f0 : f0;
  return {Grid{h / f0, w / f0}, Grid{h / f1, w / f1}};
}

std::vector<AttentionLayerInfo> ToyAttentionBackend::attention_layers(const Shape& latent) const {
  const auto g = grids(latent);
  std::vector<AttentionLayerInfo> out;
  for (int l = 0; l < config_.layer_count; ++l) {
    const Grid& grid = g[static_cast<std::size_t>(level_of_layer(l))];
    out.push_back({l, grid.height, grid.width});
  }
  return out;
}

std::vector<double> ToyAttentionBackend::prompt_bias(const PromptEmbedding& emb) const {
  const auto it = config_.tag_bias.find(emb.tag);
  if (it == config_.tag_bias.end() || it->second.empty()) {
    return std::vector<double>(static_cast<std::size_t>(config_.channels), 0.0);
  }
  return it->second;
}

ConditionFeatures ToyAttentionBackend::encode_condition(const Tensor& condition, FeatureProvenance provenance,
                                                        const Shape& latent) const {
  if (condition.channels() != 3) throw ShapeError("condition image must have 3 channels");
  ConditionFeatures out;
  out.provenance = provenance;
  const int c = config_.channels;
  for (const Grid& g : grids(latent)) {
    const Tensor pooled = area_resize(condition, g.height, g.width);
    Tensor feat(Shape{c, g.height, g.width});
    for (int o = 0; o < c; ++o) {
      for (int k = 0; k < 3; ++k) {
        const double wgt = config_.feature_scale * feature_projection_[static_cast<std::size_t>(o) * 3 + k];
        auto dst = feat.channel(o);
        auto src = pooled.channel(k);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += wgt * src[i];
      }
    }
    out.levels.push_back(std::move(feat));
  }
  return out;
}

Tensor ToyAttentionBackend::predict_noise(const Tensor& z_t, int t, const PromptEmbedding& emb,
                                          const ConditionFeatures* features, AttentionControlState* control) const {
  if (z_t.channels() != config_.channels) {
    throw ShapeError("toy attention backend expects " + std::to_string(config_.channels) + " channels, got " +
                     z_t.shape().to_string());
  }
  const double a = scheduler_.alpha_bar(t);
  const auto g = grids(z_t.shape());
  const bool use_features = features != nullptr && !features->empty();
  if (use_features && features->levels.size() != g.size()) {
    throw ShapeError("condition features carry " + std::to_string(features->levels.size()) +
                     " levels, backend uses " + std::to_string(g.size()));
  }
  const auto bias = prompt_bias(emb);

  std::set<int> used;
  for (int l = 0; l < config_.layer_count; ++l) used.insert(level_of_layer(l));

  std::vector<TokenTensor> hidden(g.size());
  std::vector<double> content_bw(g.size(), config_.content_bandwidth);
  for (int r : used) {
    // Widen the content kernel by the noise left after pooling.
    const double area = static_cast<double>(z_t.height()) * z_t.width() / (g[r].height * g[r].width);
    content_bw[r] = std::sqrt(config_.content_bandwidth * config_.content_bandwidth + 2.0 * (1.0 - a) / area);
    Tensor pooled = area_resize(z_t, g[r].height, g[r].width);
    if (use_features) {
      const Tensor& f = features->levels[static_cast<std::size_t>(r)];
      if (f.shape() != pooled.shape()) {
        throw ShapeError("condition feature level " + std::to_string(r) + " has shape " + f.shape().to_string() +
                         ", expected " + pooled.shape().to_string());
      }
      pooled += f;
    }
    for (int c = 0; c < config_.channels; ++c) {
      for (double& v : pooled.channel(c)) v += bias[c];
    }
    hidden[r] = to_tokens(pooled);
  }

  for (int l = 0; l < config_.layer_count; ++l) {
    const int r = level_of_layer(l);
    const Layer& layer = layers_[static_cast<std::size_t>(l)];
    TokenTensor& h = hidden[r];
    const KernelTokens qk =
        kernel_tokens(h, g[r].width, layer.w, config_.dim, content_bw[r], config_.position_bandwidth);
    const TokenTensor attended = controlled_attention(control, l, g[r].height, g[r].width, qk.q, qk.k, h);
    for (std::size_t i = 0; i < h.values.size(); ++i) h.values[i] += config_.mix * (attended.values[i] - h.values[i]);
  }

  Tensor smoothed(z_t.shape());
  for (int r : used) {
    smoothed += nearest_resize(from_tokens(hidden[r], g[r].height, g[r].width), z_t.height(), z_t.width());
  }
  smoothed *= 1.0 / static_cast<double>(used.size());

  Tensor out = z_t;
  out.add_scaled(smoothed, -config_.smooth_weight);
  out *= config_.gain * std::sqrt(1.0 - a);
  return out;
}

BackendPtr make_toy_attention_backend(ToyAttentionBackendConfig config) {
  return std::make_shared<const ToyAttentionBackend>(config);
}

}  // namespace latcomp
