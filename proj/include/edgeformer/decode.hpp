#pragma once

// Greedy and beam-search decoding over an incremental per-layer key/value
// cache.  Every kernel in the stack is row-independent and the masked
// softmax excludes hidden keys exactly, so feeding one token at a time
// reproduces a full-prefix recompute bit for bit.

#include <algorithm>
#include <cmath>
#include <limits>

#include "edgeformer/model.hpp"

namespace edgeformer {

// Accumulated decoding context for one target stream.  Self-attention K/V
// rows grow as tokens are fed; cross-attention K/V are fixed projections of
// the encoder states, computed once.  Copies share prefix tensors safely:
// rows are never mutated, only re-concatenated into fresh tensors.
template <typename T>
struct DecodeState {
  const Model<T>* model = nullptr;
  std::vector<std::uint8_t> src_key_ok;
  std::vector<Tensor<T>> self_k, self_v;    // per decoder layer
  std::vector<Tensor<T>> cross_k, cross_v;  // per decoder layer
  std::size_t len = 0;                      // target rows consumed so far
};

template <typename T>
DecodeState<T> init_decode(const Model<T>& m, const std::vector<std::int32_t>& src) {
  NoGradGuard ng;
  DecodeState<T> st;
  st.model = &m;
  st.src_key_ok = pad_key_mask(src);
  auto enc_h = encode(m, src);
  st.self_k.resize(m.decoder.size());
  st.self_v.resize(m.decoder.size());
  st.cross_k.reserve(m.decoder.size());
  st.cross_v.reserve(m.decoder.size());
  for (const auto& layer : m.decoder) {
    st.cross_k.push_back(project(enc_h, layer.cross_attn.wk, layer.cross_attn.bk));
    st.cross_v.push_back(project(enc_h, layer.cross_attn.wv, layer.cross_attn.bv));
  }
  return st;
}

// Appends target rows (BOS first, then generated tokens) and returns the
// final-norm decoder states for just those rows.
template <typename T>
Tensor<T> decode_step(DecodeState<T>& st, const std::vector<std::int32_t>& new_tokens) {
  NoGradGuard ng;
  const Model<T>& m = *st.model;
  detail::check_tokens(new_tokens, m.config, "target");
  if (new_tokens.empty()) throw std::invalid_argument("decode_step needs at least one token");
  if (st.len + new_tokens.size() > std::size_t(m.config.max_len))
    throw std::invalid_argument("decoded length " + std::to_string(st.len + new_tokens.size()) +
                                " exceeds max_len " + std::to_string(m.config.max_len));

  const std::size_t n_new = new_tokens.size();
  auto y = embed_tokens(m, new_tokens, {}, st.len);
  AttnMask self_mask = AttnMask::causal_rows(st.len, n_new, st.len + n_new);
  AttnMask cross_mask = AttnMask::keys_visible(n_new, st.src_key_ok);

  for (std::size_t l = 0; l < m.decoder.size(); ++l) {
    const auto& layer = m.decoder[l];
    auto h = layer_norm_rows(y, layer.self_attn.ln_g, layer.self_attn.ln_b);
    auto q = project(h, layer.self_attn.wq, layer.self_attn.bq);
    auto kn = project(h, layer.self_attn.wk, layer.self_attn.bk);
    auto vn = project(h, layer.self_attn.wv, layer.self_attn.bv);
    st.self_k[l] = st.self_k[l].defined() ? concat_rows(st.self_k[l], kn) : kn;
    st.self_v[l] = st.self_v[l].defined() ? concat_rows(st.self_v[l], vn) : vn;
    auto y1 = add(y, attention_mix(q, st.self_k[l], st.self_v[l], m.config.heads, self_mask,
                                   layer.self_attn, {}));

    auto cross = [&](const Tensor<T>& x) {
      auto hc = layer_norm_rows(x, layer.cross_attn.ln_g, layer.cross_attn.ln_b);
      auto qc = project(hc, layer.cross_attn.wq, layer.cross_attn.bq);
      return add(x, attention_mix(qc, st.cross_k[l], st.cross_v[l], m.config.heads, cross_mask,
                                  layer.cross_attn, {}));
    };
    auto ffn = [&](const Tensor<T>& x, const FfnWeights<T>& w) {
      auto hf = layer_norm_rows(x, w.ln_g, w.ln_b);
      return add(x, feed_forward(w, hf));
    };

    if (m.config.decoder_style == DecoderStyle::Vanilla)
      y = ffn(cross(y1), layer.ffn_a);
    else
      y = ffn(cross(ffn(y1, layer.ffn_a)), layer.ffn_b);
  }
  st.len += n_new;
  return layer_norm_rows(y, m.dec_ln_g, m.dec_ln_b);
}

namespace detail {

template <typename T>
std::int32_t argmax_row(const Tensor<T>& logits, std::size_t row) {
  std::int32_t best = 0;
  for (std::size_t v = 1; v < logits.shape()[1]; ++v)
    if (logits.at(row, v) > logits.at(row, best)) best = std::int32_t(v);
  return best;
}

template <typename T>
std::vector<double> log_softmax_row(const Tensor<T>& logits, std::size_t row) {
  const std::size_t v = logits.shape()[1];
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, double(logits.at(row, j)));
  double z = 0;
  for (std::size_t j = 0; j < v; ++j) z += std::exp(double(logits.at(row, j)) - mx);
  const double lse = mx + std::log(z);
  std::vector<double> lp(v);
  for (std::size_t j = 0; j < v; ++j) lp[j] = double(logits.at(row, j)) - lse;
  return lp;
}

template <typename T>
int decode_cap(const Model<T>& m, int max_steps) {
  const int room = m.config.max_len - 1;  // BOS occupies one target row
  return max_steps > 0 ? std::min(max_steps, room) : room;
}

}  // namespace detail

// Emitted length used for score normalization: generated tokens plus the
// closing EOS when one was produced, floored at one emission.
inline double length_normalized(double logprob, std::size_t emissions, double alpha) {
  return logprob / std::pow(double(std::max<std::size_t>(emissions, 1)), alpha);
}

template <typename T>
std::vector<std::int32_t> greedy_decode(const Model<T>& m, const std::vector<std::int32_t>& src,
                                        int max_steps = 0) {
  NoGradGuard ng;
  const int cap = detail::decode_cap(m, max_steps);
  auto st = init_decode(m, src);
  std::vector<std::int32_t> out;
  std::int32_t last = kBosId;
  while (int(out.size()) < cap) {
    auto logits = output_logits(m, decode_step(st, {last}));
    const std::int32_t choice = detail::argmax_row(logits, 0);
    if (choice == kEosId) break;
    out.push_back(choice);
    last = choice;
  }
  return out;
}

struct BeamHyp {
  std::vector<std::int32_t> tokens;  // generated tokens, no BOS/EOS
  double logprob = 0.0;              // summed token log-probs, EOS included when finished
  double score = 0.0;                // length-normalized logprob
  bool finished = false;             // ended by emitting EOS
};

// Ranked hypotheses, best first.  Ties break toward the lexicographically
// smaller token sequence so results are reproducible.
template <typename T>
std::vector<BeamHyp> beam_decode_scored(const Model<T>& m, const std::vector<std::int32_t>& src,
                                        int beam_width, double alpha = 0.6, int max_steps = 0) {
  NoGradGuard ng;
  if (beam_width < 1)
    throw ConfigError("beam width must be at least 1, got " + std::to_string(beam_width));
  if (alpha < 0) throw ConfigError("length normalization exponent must be >= 0");
  const int cap = detail::decode_cap(m, max_steps);
  const std::size_t vocab = std::size_t(m.config.vocab_size);

  struct Live {
    BeamHyp hyp;
    DecodeState<T> state;
    std::int32_t last = kBosId;
  };
  std::vector<Live> live;
  live.push_back({BeamHyp{}, init_decode(m, src), kBosId});
  std::vector<BeamHyp> finished;

  for (int step = 0; step < cap && !live.empty(); ++step) {
    struct Cand {
      double total;
      std::int32_t tok;
      std::size_t parent;
    };
    std::vector<Cand> cands;
    cands.reserve(live.size() * vocab);
    for (std::size_t b = 0; b < live.size(); ++b) {
      auto logits = output_logits(m, decode_step(live[b].state, {live[b].last}));
      auto lp = detail::log_softmax_row(logits, 0);
      for (std::size_t v = 0; v < vocab; ++v)
        cands.push_back({live[b].hyp.logprob + lp[v], std::int32_t(v), b});
    }
    const std::size_t keep = std::min<std::size_t>(beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.total != b.total) return a.total > b.total;
                        if (a.tok != b.tok) return a.tok < b.tok;
                        return a.parent < b.parent;
                      });

    std::vector<Live> next;
    next.reserve(keep);
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      const Live& parent = live[cand.parent];
      if (cand.tok == kEosId) {
        BeamHyp done = parent.hyp;
        done.logprob = cand.total;
        done.finished = true;
        done.score = length_normalized(done.logprob, done.tokens.size() + 1, alpha);
        finished.push_back(std::move(done));
      } else {
        Live child;
        child.hyp = parent.hyp;
        child.hyp.tokens.push_back(cand.tok);
        child.hyp.logprob = cand.total;
        child.state = parent.state;  // shares prefix tensors, diverges from here
        child.last = cand.tok;
        next.push_back(std::move(child));
      }
    }
    live = std::move(next);

    // Log-probabilities only fall and the normalizer is largest at the cap,
    // so this bounds every live continuation from above.
    if (!finished.empty() && !live.empty()) {
      double best_done = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_done = std::max(best_done, f.score);
      double best_possible = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) {
        const double bound = l.hyp.logprob < 0
                                 ? length_normalized(l.hyp.logprob, std::size_t(cap), alpha)
                                 : length_normalized(l.hyp.logprob, l.hyp.tokens.size() + 1, alpha);
        best_possible = std::max(best_possible, bound);
      }
      if (best_done >= best_possible) break;
    }
  }

  for (auto& l : live) {
    l.hyp.score = length_normalized(l.hyp.logprob, l.hyp.tokens.size(), alpha);
    finished.push_back(std::move(l.hyp));
  }
  std::sort(finished.begin(), finished.end(), [](const BeamHyp& a, const BeamHyp& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  });
  return finished;
}

template <typename T>
std::vector<std::int32_t> beam_decode(const Model<T>& m, const std::vector<std::int32_t>& src,
                                      int beam_width, double alpha = 0.6, int max_steps = 0) {
  return beam_decode_scored(m, src, beam_width, alpha, max_steps).front().tokens;
}

}  // namespace edgeformer
