#pragma once

// Transformer building blocks bound to a sharing plan.  Layer structs hold
// Tensor handles, so slots tied to one group literally hold the same
// tensors: one optimizer step moves every bound site, and backward()
// accumulates all site gradients into the single group tensor.
//
// Layers are pre-norm residual.  The interleaved decoder layer runs
// self-attention, lightweight FFN, cross-attention, lightweight FFN, with
// both FFN executions reading the same slot pair.

#include <cmath>
#include <map>
#include <utility>

#include "edgeformer/plan.hpp"
#include "edgeformer/tensor.hpp"

namespace edgeformer {

template <typename T>
struct AttnWeights {
  Tensor<T> wq, wk, wv, wo;  // each d x d
  Tensor<T> bq, bk, bv, bo;  // each d
  Tensor<T> ln_g, ln_b;      // pre-norm affine for this sublayer
};

template <typename T>
struct FfnWeights {
  Tensor<T> w1, b1;      // d x h, h
  Tensor<T> w2, b2;      // h x d, d
  Tensor<T> ln_g, ln_b;  // pre-norm affine
};

// Per-encoder-layer free parameters added by layer adaptation.  Handles are
// undefined when the mechanism is off.
template <typename T>
struct LayerAdaptation {
  Tensor<T> q_a, q_b;  // LoRA on W^Q: contribution x*B*A, A r x d, B d x r
  Tensor<T> v_a, v_b;  // LoRA on W^V
  Tensor<T> prompt;    // L x d learnable key/value-side tokens
};

template <typename T>
struct EncoderLayer {
  AttnWeights<T> attn;
  FfnWeights<T> ffn;
  LayerAdaptation<T> la;
};

template <typename T>
struct DecoderLayer {
  AttnWeights<T> self_attn;
  AttnWeights<T> cross_attn;
  FfnWeights<T> ffn_a;
  FfnWeights<T> ffn_b;  // interleaved second execution; unused for vanilla
};

template <typename T>
struct Model {
  ModelConfig config;
  SharingPlan plan;
  AdaptationSpec adaptation;  // mode None until adaptation is applied
  std::uint64_t init_seed = 0;

  Tensor<T> embedding;  // V x d, tied: source embed, target embed, output projection
  Tensor<T> positional;  // max_len x d, fixed sinusoidal table (not a parameter)
  Tensor<T> enc_ln_g, enc_ln_b;  // terminal encoder norm
  Tensor<T> dec_ln_g, dec_ln_b;  // terminal decoder norm
  std::vector<EncoderLayer<T>> encoder;
  std::vector<DecoderLayer<T>> decoder;

  // Every trainable leaf exactly once, in allocation order.  The optimizer
  // and the checkpoint walk this list.
  std::vector<std::pair<std::string, Tensor<T>>> named_params;

  Tensor<T>* find_param(const std::string& name) {
    for (auto& [n, t] : named_params)
      if (n == name) return &t;
    return nullptr;
  }
};

// ---- initialization -------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> scaled_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                         std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto t = Tensor<T>::zeros(std::move(shape), true);
  for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = T(dist(rng));
  return t;
}

template <typename T>
Tensor<T> sinusoidal_table(int max_len, int d) {
  auto pe = Tensor<T>::zeros({std::size_t(max_len), std::size_t(d)});
  for (int pos = 0; pos < max_len; ++pos)
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, double(i) / d);
      pe.at(pos, i) = T(std::sin(angle));
      if (i + 1 < d) pe.at(pos, i + 1) = T(std::cos(angle));
    }
  return pe;
}

}  // namespace detail

// Allocates each (group, section) once, drawing weight matrices from a
// scaled-uniform distribution in first-use order (encoder before decoder,
// ascending layer, self/cross/ffn within a layer), then wires every slot's
// handles to its group's tensors.  Biases start at zero, norms at identity.
template <typename T>
Model<T> bind_model(const ModelConfig& config, const SharingPlan& plan, std::uint64_t seed) {
  config.validate();
  if (auto errors = validate_plan(plan, config); !errors.empty()) {
    std::string msg = "bind_model: plan failed validation:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }

  Model<T> m;
  m.config = config;
  m.plan = plan;
  m.init_seed = seed;
  std::mt19937_64 rng(seed);
  const std::size_t d = std::size_t(config.d_model);

  m.embedding = detail::scaled_uniform<T>({std::size_t(config.vocab_size), d},
                                          std::size_t(config.vocab_size), d, rng);
  m.named_params.emplace_back("embedding", m.embedding);
  m.positional = detail::sinusoidal_table<T>(config.max_len, config.d_model);

  std::map<std::string, AttnWeights<T>> attn_store;  // "group\x1fsection" -> tensors
  std::map<std::string, FfnWeights<T>> ffn_store;

  auto attn_for = [&](const std::string& group, const SectionSpec& sec) -> AttnWeights<T>& {
    const std::string key = group + "\x1f" + sec.key;
    auto it = attn_store.find(key);
    if (it != attn_store.end()) return it->second;
    AttnWeights<T> w;
    w.wq = detail::scaled_uniform<T>({d, d}, d, d, rng);
    w.wk = detail::scaled_uniform<T>({d, d}, d, d, rng);
    w.wv = detail::scaled_uniform<T>({d, d}, d, d, rng);
    w.wo = detail::scaled_uniform<T>({d, d}, d, d, rng);
    w.bq = Tensor<T>::zeros({d}, true);
    w.bk = Tensor<T>::zeros({d}, true);
    w.bv = Tensor<T>::zeros({d}, true);
    w.bo = Tensor<T>::zeros({d}, true);
    w.ln_g = Tensor<T>::filled({d}, T(1), true);
    w.ln_b = Tensor<T>::zeros({d}, true);
    const std::string base = "g/" + group + "." + sec.key + ".";
    m.named_params.emplace_back(base + "wq", w.wq);
    m.named_params.emplace_back(base + "wk", w.wk);
    m.named_params.emplace_back(base + "wv", w.wv);
    m.named_params.emplace_back(base + "wo", w.wo);
    m.named_params.emplace_back(base + "bq", w.bq);
    m.named_params.emplace_back(base + "bk", w.bk);
    m.named_params.emplace_back(base + "bv", w.bv);
    m.named_params.emplace_back(base + "bo", w.bo);
    m.named_params.emplace_back(base + "ln_g", w.ln_g);
    m.named_params.emplace_back(base + "ln_b", w.ln_b);
    return attn_store.emplace(key, w).first->second;
  };
  auto ffn_for = [&](const std::string& group, const SectionSpec& sec) -> FfnWeights<T>& {
    const std::string key = group + "\x1f" + sec.key;
    auto it = ffn_store.find(key);
    if (it != ffn_store.end()) return it->second;
    const std::size_t h = std::size_t(sec.d_hidden);
    FfnWeights<T> w;
    w.w1 = detail::scaled_uniform<T>({d, h}, d, h, rng);
    w.w2 = detail::scaled_uniform<T>({h, d}, h, d, rng);
    w.b1 = Tensor<T>::zeros({h}, true);
    w.b2 = Tensor<T>::zeros({d}, true);
    w.ln_g = Tensor<T>::filled({d}, T(1), true);
    w.ln_b = Tensor<T>::zeros({d}, true);
    const std::string base = "g/" + group + "." + sec.key + ".";
    m.named_params.emplace_back(base + "w1", w.w1);
    m.named_params.emplace_back(base + "b1", w.b1);
    m.named_params.emplace_back(base + "w2", w.w2);
    m.named_params.emplace_back(base + "b2", w.b2);
    m.named_params.emplace_back(base + "ln_g", w.ln_g);
    m.named_params.emplace_back(base + "ln_b", w.ln_b);
    return ffn_store.emplace(key, w).first->second;
  };

  std::map<std::string, std::string> slot_to_group;
  for (const auto& b : expand_bindings(plan, config)) slot_to_group[b.slot] = b.group;
  auto resolve = [&](const std::string& slot) -> std::pair<const GroupSpec*, const SectionSpec*> {
    const std::string& gname = slot_to_group.at(slot);
    const GroupSpec* g = plan.find_group(gname);
    const SectionSpec* s = resolve_section(*g, parse_slot(slot).role);
    return {g, s};
  };

  m.encoder.resize(config.enc_layers);
  m.decoder.resize(config.dec_layers);
  for (int i = 1; i <= config.enc_layers; ++i) {
    auto [ga, sa] = resolve(slot_name(true, i, "attn"));
    m.encoder[i - 1].attn = attn_for(ga->name, *sa);
    auto [gf, sf] = resolve(slot_name(true, i, "ffn"));
    m.encoder[i - 1].ffn = ffn_for(gf->name, *sf);
  }
  for (int j = 1; j <= config.dec_layers; ++j) {
    auto [gs, ss] = resolve(slot_name(false, j, "self"));
    m.decoder[j - 1].self_attn = attn_for(gs->name, *ss);
    auto [gc, sc] = resolve(slot_name(false, j, "cross"));
    m.decoder[j - 1].cross_attn = attn_for(gc->name, *sc);
    if (config.decoder_style == DecoderStyle::Vanilla) {
      auto [gf, sf] = resolve(slot_name(false, j, "ffn"));
      m.decoder[j - 1].ffn_a = ffn_for(gf->name, *sf);
    } else {
      auto [gfa, sfa] = resolve(slot_name(false, j, "ffn_a"));
      m.decoder[j - 1].ffn_a = ffn_for(gfa->name, *sfa);
      auto [gfb, sfb] = resolve(slot_name(false, j, "ffn_b"));
      m.decoder[j - 1].ffn_b = ffn_for(gfb->name, *sfb);
    }
  }

  m.enc_ln_g = Tensor<T>::filled({d}, T(1), true);
  m.enc_ln_b = Tensor<T>::zeros({d}, true);
  m.dec_ln_g = Tensor<T>::filled({d}, T(1), true);
  m.dec_ln_b = Tensor<T>::zeros({d}, true);
  m.named_params.emplace_back("final/enc.ln_g", m.enc_ln_g);
  m.named_params.emplace_back("final/enc.ln_b", m.enc_ln_b);
  m.named_params.emplace_back("final/dec.ln_g", m.dec_ln_g);
  m.named_params.emplace_back("final/dec.ln_b", m.dec_ln_b);
  return m;
}

// ---- forward pieces -------------------------------------------------------

// Optional training-time dropout stream.  Null means inference.
template <typename T>
struct ForwardCtx {
  double dropout_rate = 0.0;
  std::mt19937_64* rng = nullptr;

  Tensor<T> drop(const Tensor<T>& x) const {
    if (!rng || dropout_rate == 0.0) return x;
    return dropout(x, dropout_rate, *rng);
  }
};

template <typename T>
Tensor<T> project(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_row_bias(matmul(x, w), b);
}

// Softmax(q kᵀ/√d_k) v per head over pre-split q/k/v of width d, then the
// output projection.  q/k/v are the already-projected full-width tensors so
// callers can substitute cached rows.
template <typename T>
Tensor<T> attention_mix(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                        const AttnMask& mask, const AttnWeights<T>& w,
                        const ForwardCtx<T>& ctx) {
  const std::size_t dk = q.shape()[1] / std::size_t(heads);
  const T inv_sqrt_dk = T(1) / std::sqrt(T(dk));
  std::vector<Tensor<T>> ctx_heads;
  ctx_heads.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    auto qh = slice_cols(q, h * dk, dk);
    auto kh = slice_cols(k, h * dk, dk);
    auto vh = slice_cols(v, h * dk, dk);
    auto scores = scale(matmul_nt(qh, kh), inv_sqrt_dk);
    auto probs = ctx.drop(softmax_rows(scores, &mask));
    ctx_heads.push_back(matmul(probs, vh));
  }
  return project(concat_cols(ctx_heads), w.wo, w.bo);
}

// Full attention module: pre-norm on the query side is the caller's job;
// this takes normalized inputs and applies the four projections.
template <typename T>
Tensor<T> multi_head_attention(const AttnWeights<T>& w, const Tensor<T>& q_in,
                               const Tensor<T>& k_in, const Tensor<T>& v_in, int heads,
                               const AttnMask& mask, const ForwardCtx<T>& ctx = {}) {
  if (q_in.cols() != k_in.cols() || k_in.shape() != v_in.shape())
    shape_fail("multi_head_attention", q_in.shape(), k_in.shape());
  auto q = project(q_in, w.wq, w.bq);
  auto k = project(k_in, w.wk, w.bk);
  auto v = project(v_in, w.wv, w.bv);
  return attention_mix(q, k, v, heads, mask, w, ctx);
}

template <typename T>
Tensor<T> feed_forward(const FfnWeights<T>& w, const Tensor<T>& x,
                       const ForwardCtx<T>& ctx = {}) {
  auto hidden = ctx.drop(relu(project(x, w.w1, w.b1)));
  return project(hidden, w.w2, w.b2);
}

// Query projection with the layer's LoRA contribution, when present:
// x(W + B·A) computed as xW + (xB)A.
template <typename T>
Tensor<T> project_adapted(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                          const Tensor<T>& lora_b, const Tensor<T>& lora_a) {
  auto base = project(x, w, b);
  if (!lora_b.defined()) return base;
  return add(base, matmul(matmul(x, lora_b), lora_a));
}

template <typename T>
Tensor<T> encoder_layer_forward(const EncoderLayer<T>& layer, const Tensor<T>& x,
                                const std::vector<std::uint8_t>& src_key_ok, int heads,
                                const ForwardCtx<T>& ctx = {}) {
  const std::size_t n = x.shape()[0];
  auto h = layer_norm_rows(x, layer.attn.ln_g, layer.attn.ln_b);

  Tensor<T> kv_in = h;
  std::vector<std::uint8_t> key_ok = src_key_ok;
  if (layer.la.prompt.defined() && layer.la.prompt.shape()[0] > 0) {
    // Prompt tokens join the keys/values of this layer only; queries and
    // output length are untouched.  Prompt keys are visible to every query.
    kv_in = concat_rows(layer.la.prompt, h);
    std::vector<std::uint8_t> with_prompt(layer.la.prompt.shape()[0], 1);
    with_prompt.insert(with_prompt.end(), src_key_ok.begin(), src_key_ok.end());
    key_ok = std::move(with_prompt);
  }
  AttnMask mask = AttnMask::keys_visible(n, key_ok);

  auto q = project_adapted(h, layer.attn.wq, layer.attn.bq, layer.la.q_b, layer.la.q_a);
  auto k = project(kv_in, layer.attn.wk, layer.attn.bk);
  auto v = project_adapted(kv_in, layer.attn.wv, layer.attn.bv, layer.la.v_b, layer.la.v_a);
  auto x1 = add(x, attention_mix(q, k, v, heads, mask, layer.attn, ctx));

  auto h2 = layer_norm_rows(x1, layer.ffn.ln_g, layer.ffn.ln_b);
  return add(x1, feed_forward(layer.ffn, h2, ctx));
}

template <typename T>
Tensor<T> decoder_layer_forward(const DecoderLayer<T>& layer, const Tensor<T>& y,
                                const Tensor<T>& enc_h,
                                const std::vector<std::uint8_t>& src_key_ok, int heads,
                                DecoderStyle style, const ForwardCtx<T>& ctx = {}) {
  const std::size_t n_t = y.shape()[0];
  AttnMask causal = AttnMask::causal(n_t);
  AttnMask cross_mask = AttnMask::keys_visible(n_t, src_key_ok);

  auto h = layer_norm_rows(y, layer.self_attn.ln_g, layer.self_attn.ln_b);
  auto y1 = add(y, multi_head_attention(layer.self_attn, h, h, h, heads, causal, ctx));

  if (style == DecoderStyle::Vanilla) {
    auto hc = layer_norm_rows(y1, layer.cross_attn.ln_g, layer.cross_attn.ln_b);
    auto y2 = add(y1, multi_head_attention(layer.cross_attn, hc, enc_h, enc_h, heads, cross_mask, ctx));
    auto hf = layer_norm_rows(y2, layer.ffn_a.ln_g, layer.ffn_a.ln_b);
    return add(y2, feed_forward(layer.ffn_a, hf, ctx));
  }

  auto ha = layer_norm_rows(y1, layer.ffn_a.ln_g, layer.ffn_a.ln_b);
  auto y2 = add(y1, feed_forward(layer.ffn_a, ha, ctx));
  auto hc = layer_norm_rows(y2, layer.cross_attn.ln_g, layer.cross_attn.ln_b);
  auto y3 = add(y2, multi_head_attention(layer.cross_attn, hc, enc_h, enc_h, heads, cross_mask, ctx));
  auto hb = layer_norm_rows(y3, layer.ffn_b.ln_g, layer.ffn_b.ln_b);
  return add(y3, feed_forward(layer.ffn_b, hb, ctx));
}

// ---- whole-model forward ----------------------------------------------------

namespace detail {

inline void check_tokens(const std::vector<std::int32_t>& ids, const ModelConfig& c,
                         const char* which) {
  if ((int)ids.size() > c.max_len)
    throw std::invalid_argument(std::string(which) + " length " + std::to_string(ids.size()) +
                                " exceeds max_len " + std::to_string(c.max_len));
  for (std::int32_t id : ids)
    if (id < 0 || id >= c.vocab_size)
      throw std::invalid_argument(std::string(which) + " token id " + std::to_string(id) +
                                  " outside vocab of size " + std::to_string(c.vocab_size));
}

}  // namespace detail

template <typename T>
Tensor<T> embed_tokens(const Model<T>& m, const std::vector<std::int32_t>& ids,
                       const ForwardCtx<T>& ctx = {}, std::size_t pos_offset = 0) {
  auto x = scale(embedding_rows(m.embedding, ids), T(std::sqrt(double(m.config.d_model))));
  std::vector<std::int32_t> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = std::int32_t(pos_offset + i);
  return ctx.drop(add(x, embedding_rows(m.positional, positions)));
}

inline std::vector<std::uint8_t> pad_key_mask(const std::vector<std::int32_t>& src) {
  std::vector<std::uint8_t> ok(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) ok[i] = src[i] == kPadId ? 0 : 1;
  return ok;
}

// Source tokens -> final encoder states (n_src x d).
template <typename T>
Tensor<T> encode(const Model<T>& m, const std::vector<std::int32_t>& src,
                 const ForwardCtx<T>& ctx = {}) {
  detail::check_tokens(src, m.config, "source");
  auto key_ok = pad_key_mask(src);
  auto x = embed_tokens(m, src, ctx);
  for (const auto& layer : m.encoder)
    x = encoder_layer_forward(layer, x, key_ok, m.config.heads, ctx);
  return layer_norm_rows(x, m.enc_ln_g, m.enc_ln_b);
}

// Decoder stack over a full target prefix (training path; no cache).
template <typename T>
Tensor<T> decode_full(const Model<T>& m, const Tensor<T>& enc_h,
                      const std::vector<std::uint8_t>& src_key_ok,
                      const std::vector<std::int32_t>& tgt_in, const ForwardCtx<T>& ctx = {}) {
  detail::check_tokens(tgt_in, m.config, "target");
  if (tgt_in.empty()) throw std::invalid_argument("target prefix must contain at least BOS");
  auto y = embed_tokens(m, tgt_in, ctx);
  for (const auto& layer : m.decoder)
    y = decoder_layer_forward(layer, y, enc_h, src_key_ok, m.config.heads,
                              m.config.decoder_style, ctx);
  return layer_norm_rows(y, m.dec_ln_g, m.dec_ln_b);
}

// Pre-softmax logits over the tied vocabulary, one row per target position.
template <typename T>
Tensor<T> output_logits(const Model<T>& m, const Tensor<T>& dec_h) {
  return matmul_nt(dec_h, m.embedding);
}

// src + BOS-shifted target prefix -> logits [n_t x V].
template <typename T>
Tensor<T> model_forward(const Model<T>& m, const std::vector<std::int32_t>& src,
                        const std::vector<std::int32_t>& tgt_in, const ForwardCtx<T>& ctx = {}) {
  auto enc_h = encode(m, src, ctx);
  auto dec_h = decode_full(m, enc_h, pad_key_mask(src), tgt_in, ctx);
  return output_logits(m, dec_h);
}

}  // namespace edgeformer
