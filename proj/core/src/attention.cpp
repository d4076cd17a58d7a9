#include "latcomp/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latcomp/errors.hpp"
#include "latcomp/resample.hpp"

namespace latcomp {

TokenTensor::TokenTensor(int b, int l, int d, double fill)
    : batch(b), seq(l), dim(d),
      values(static_cast<std::size_t>(b) * static_cast<std::size_t>(l) * static_cast<std::size_t>(d), fill) {}

namespace {

void check_qkv(const TokenTensor& q, const TokenTensor& k, const TokenTensor& v) {
  if (k.seq == 0) throw EmptyContextError("attention over an empty key sequence");
  if (q.dim <= 0) throw ShapeError("attention requires d > 0");
  if (q.batch != k.batch || k.batch != v.batch) throw ShapeError("attention batch mismatch");
  if (q.dim != k.dim) throw ShapeError("query/key dimension mismatch");
  if (k.seq != v.seq) throw ShapeError("key/value sequence length mismatch");
}

}  // namespace

TokenTensor attention_weights(const TokenTensor& q, const TokenTensor& k) {
  if (k.seq == 0) throw EmptyContextError("attention over an empty key sequence");
  if (q.dim <= 0 || q.dim != k.dim || q.batch != k.batch) throw ShapeError("query/key shape mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim));
  TokenTensor w(q.batch, q.seq, k.seq);
  for (int b = 0; b < q.batch; ++b) {
    for (int i = 0; i < q.seq; ++i) {
      double peak = -INFINITY;
      for (int j = 0; j < k.seq; ++j) {
        double logit = 0.0;
        for (int c = 0; c < q.dim; ++c) logit += q.at(b, i, c) * k.at(b, j, c);
        logit *= scale;
        w.at(b, i, j) = logit;
        peak = std::max(peak, logit);
      }
      double total = 0.0;
      for (int j = 0; j < k.seq; ++j) {
        const double e = std::exp(w.at(b, i, j) - peak);
        w.at(b, i, j) = e;
        total += e;
      }
      for (int j = 0; j < k.seq; ++j) w.at(b, i, j) /= total;
    }
  }
  return w;
}

TokenTensor scaled_dot_attention(const TokenTensor& q, const TokenTensor& k, const TokenTensor& v) {
  check_qkv(q, k, v);
  const TokenTensor w = attention_weights(q, k);
  TokenTensor out(q.batch, q.seq, v.dim);
  for (int b = 0; b < q.batch; ++b) {
    for (int i = 0; i < q.seq; ++i) {
      for (int j = 0; j < k.seq; ++j) {
        const double a = w.at(b, i, j);
        for (int c = 0; c < v.dim; ++c) out.at(b, i, c) += a * v.at(b, j, c);
      }
    }
  }
  return out;
}

std::size_t TokenMask::selected_count() const noexcept {
  return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true));
}

TokenMask build_token_mask(const Plane& mask, int height, int width, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("threshold must lie in [0, 1]", "exclusion_threshold");
  }
  if (height < 1 || width < 1) throw ShapeError("token grid must be at least 1x1");
  const Plane resized = area_resize(mask, height, width);
  TokenMask out;
  out.height = height;
  out.width = width;
  out.threshold = threshold;
  out.selected.resize(resized.size());
  for (std::size_t i = 0; i < resized.size(); ++i) out.selected[i] = resized.values[i] > threshold;
  return out;
}

TokenMask build_token_mask(const PixelMask& mask, int height, int width, double threshold) {
  return build_token_mask(mask.plane(), height, width, threshold);
}

std::pair<TokenTensor, TokenTensor> exclude_kv(const TokenTensor& k, const TokenTensor& v,
                                               const TokenMask& mask) {
  if (mask.size() != static_cast<std::size_t>(k.seq) || k.seq != v.seq) {
    throw ShapeError("token mask length " + std::to_string(mask.size()) + " does not match key length " +
                     std::to_string(k.seq));
  }
  const int kept = k.seq - static_cast<int>(mask.selected_count());
  if (kept == 0) throw EmptyContextError("mask covers entire image: no attention context left");
  TokenTensor k2(k.batch, kept, k.dim);
  TokenTensor v2(v.batch, kept, v.dim);
  for (int b = 0; b < k.batch; ++b) {
    int row = 0;
    for (int i = 0; i < k.seq; ++i) {
      if (mask.selected[i]) continue;
      for (int c = 0; c < k.dim; ++c) k2.at(b, row, c) = k.at(b, i, c);
      for (int c = 0; c < v.dim; ++c) v2.at(b, row, c) = v.at(b, i, c);
      ++row;
    }
  }
  return {std::move(k2), std::move(v2)};
}

bool should_replace(const ReplacementGate& gate, int step, int layer) noexcept {
  return step > gate.step_threshold && layer > gate.layer_threshold;
}

void KvCache::record(int layer, CallTag tag, int step, const TokenTensor& k, const TokenTensor& v) {
  auto it = entries_.find({layer, tag});
  if (it != entries_.end()) {
    if (it->second.step == step) {
      throw StateError("KV cache entry for layer " + std::to_string(layer) + " written twice in step " +
                       std::to_string(step));
    }
    it->second = Entry{k, v, step};
    return;
  }
  entries_.emplace(std::make_pair(layer, tag), Entry{k, v, step});
}

const KvCache::Entry& KvCache::read(int layer, CallTag tag) const {
  auto it = entries_.find({layer, tag});
  if (it == entries_.end()) {
    throw AbsentEntryError("no KV cache entry for layer " + std::to_string(layer) + " (" +
                           (tag == CallTag::conditional ? "conditional" : "unconditional") + " call)");
  }
  return it->second;
}

bool KvCache::contains(int layer, CallTag tag) const { return entries_.count({layer, tag}) > 0; }

AttentionControlState AttentionControlState::none() { return {}; }

AttentionControlState AttentionControlState::exclude(std::vector<TokenMask> masks) {
  AttentionControlState s;
  s.mode = Mode::exclude;
  s.exclusion_masks = std::move(masks);
  return s;
}

AttentionControlState AttentionControlState::record(KvCache& cache, CallTag tag, int step) {
  AttentionControlState s;
  s.mode = Mode::record;
  s.cache = &cache;
  s.call_tag = tag;
  s.current_step = step;
  return s;
}

AttentionControlState AttentionControlState::replace(KvCache& cache, const ReplacementGate& gate, CallTag tag,
                                                     int step) {
  AttentionControlState s;
  s.mode = Mode::replace;
  s.cache = &cache;
  s.gate = gate;
  s.call_tag = tag;
  s.current_step = step;
  return s;
}

TokenTensor controlled_attention(AttentionControlState* state, int layer, int grid_h, int grid_w,
                                 const TokenTensor& q, const TokenTensor& k, const TokenTensor& v) {
  if (state == nullptr) return scaled_dot_attention(q, k, v);
  if (state->kv_hook) {
    TokenTensor k2 = k;
    TokenTensor v2 = v;
    state->kv_hook(layer, k2, v2);
    AttentionControlState inner = *state;
    inner.kv_hook = nullptr;
    return controlled_attention(&inner, layer, grid_h, grid_w, q, k2, v2);
  }

  switch (state->mode) {
    case AttentionControlState::Mode::none:
      return scaled_dot_attention(q, k, v);
    case AttentionControlState::Mode::exclude: {
      auto it = std::find_if(state->exclusion_masks.begin(), state->exclusion_masks.end(),
                             [&](const TokenMask& m) { return m.height == grid_h && m.width == grid_w; });
      if (it == state->exclusion_masks.end()) {
        throw ConfigError("no exclusion mask for attention resolution " + std::to_string(grid_h) + "x" +
                          std::to_string(grid_w));
      }
      auto [k2, v2] = exclude_kv(k, v, *it);
      return scaled_dot_attention(q, k2, v2);
    }
    case AttentionControlState::Mode::record:
      if (state->cache == nullptr) throw StateError("record mode without a KV cache");
      state->cache->record(layer, state->call_tag, state->current_step, k, v);
      return scaled_dot_attention(q, k, v);
    case AttentionControlState::Mode::replace: {
      if (state->cache == nullptr) throw StateError("replace mode without a KV cache");
      if (!should_replace(state->gate, state->current_step, layer)) return scaled_dot_attention(q, k, v);
      const KvCache::Entry& entry = state->cache->read(layer, state->call_tag);
      if (entry.step != state->current_step) {
        throw AbsentEntryError("KV cache entry for layer " + std::to_string(layer) + " is from step " +
                               std::to_string(entry.step) + ", expected " + std::to_string(state->current_step));
      }
      return scaled_dot_attention(q, entry.k, entry.v);
    }
  }
  return scaled_dot_attention(q, k, v);
}

}  // namespace latcomp
