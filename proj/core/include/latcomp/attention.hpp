#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "latcomp/mask.hpp"

namespace latcomp {

// batch x seq x dim array for attention queries, keys and values.
struct TokenTensor {
  int batch = 0;
  int seq = 0;
  int dim = 0;
  std::vector<double> values;

  TokenTensor() = default;
  TokenTensor(int b, int l, int d, double fill = 0.0);

  double& at(int b, int i, int k) noexcept { return values[(static_cast<std::size_t>(b) * seq + i) * dim + k]; }
  double at(int b, int i, int k) const noexcept {
    return values[(static_cast<std::size_t>(b) * seq + i) * dim + k];
  }
  bool operator==(const TokenTensor&) const = default;
};

// Softmax(Q K^T / sqrt(d)) over the key axis; shape batch x l_q x l_k.
TokenTensor attention_weights(const TokenTensor& q, const TokenTensor& k);
// Softmax(Q K^T / sqrt(d)) V
TokenTensor scaled_dot_attention(const TokenTensor& q, const TokenTensor& k, const TokenTensor& v);

// Flattened token-space view of a pixel mask at one attention resolution.
// selected[i] is true when the token lies in the region to discard.
struct TokenMask {
  std::vector<bool> selected;
  int height = 0;
  int width = 0;
  double threshold = 0.5;

  std::size_t size() const noexcept { return selected.size(); }
  std::size_t selected_count() const noexcept;
};

// Area-average resize to h x w, row-major flatten, select where v > threshold.
TokenMask build_token_mask(const PixelMask& mask, int height, int width, double threshold);
TokenMask build_token_mask(const Plane& mask, int height, int width, double threshold);

// Keeps the rows of K and V whose token is not selected, in order.
std::pair<TokenTensor, TokenTensor> exclude_kv(const TokenTensor& k, const TokenTensor& v,
                                               const TokenMask& mask);

// KV replacement fires strictly after `step_threshold` optimisation steps and
// strictly above `layer_threshold`.
struct ReplacementGate {
  int step_threshold = 400;
  int layer_threshold = 10;

  bool operator==(const ReplacementGate&) const = default;
};

bool should_replace(const ReplacementGate& gate, int step, int layer) noexcept;

// Which predictor call of a guided pair an entry belongs to.
enum class CallTag { unconditional, conditional };

class KvCache {
 public:
  struct Entry {
    TokenTensor k;
    TokenTensor v;
    int step = 0;
  };

  // Stores copies. Writing the same (layer, tag) twice within one step throws StateError.
  void record(int layer, CallTag tag, int step, const TokenTensor& k, const TokenTensor& v);
  // Throws AbsentEntryError when nothing was recorded for (layer, tag).
  const Entry& read(int layer, CallTag tag) const;
  bool contains(int layer, CallTag tag) const;
  std::size_t size() const noexcept { return entries_.size(); }
  void clear() noexcept { entries_.clear(); }

 private:
  std::map<std::pair<int, CallTag>, Entry> entries_;
};

// Per-call attention control threaded through a predictor. The referenced
// cache is owned by the optimisation loop.
struct AttentionControlState {
  enum class Mode { none, exclude, record, replace };

  Mode mode = Mode::none;
  std::vector<TokenMask> exclusion_masks;  // one per attention resolution
  KvCache* cache = nullptr;
  ReplacementGate gate{};
  CallTag call_tag = CallTag::conditional;
  int current_step = 0;
  // Observes or rewrites K and V of every layer before the mode is applied.
  std::function<void(int layer, TokenTensor& k, TokenTensor& v)> kv_hook;

  static AttentionControlState none();
  static AttentionControlState exclude(std::vector<TokenMask> masks);
  static AttentionControlState record(KvCache& cache, CallTag tag, int step);
  static AttentionControlState replace(KvCache& cache, const ReplacementGate& gate, CallTag tag, int step);
};

// Attention for layer `layer` whose tokens form a grid_h x grid_w grid.
// A null state behaves like Mode::none.
TokenTensor controlled_attention(AttentionControlState* state, int layer, int grid_h, int grid_w,
                                 const TokenTensor& q, const TokenTensor& k, const TokenTensor& v);

}  // namespace latcomp
