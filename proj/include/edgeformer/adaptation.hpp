#pragma once

// Encoder-side layer adaptation: per-layer trainable parameters layered on
// top of a bound model, leaving the shared group tensors untouched.  Every
// mechanism is exact-identity at initialization, so an adapted model scores
// sequences identically to its base until the new parameters move.

#include "edgeformer/model.hpp"

namespace edgeformer {

namespace detail {

template <typename T>
void require_unadapted(const Model<T>& m) {
  if (m.adaptation.mode != AdaptMode::None)
    throw ConfigError("model already carries " + to_string(m.adaptation.mode) +
                      " layer adaptation; adaptation can be applied once");
}

}  // namespace detail

// Gives every encoder layer private copies of all its bias vectors: the
// attention q/k/v/o biases, both FFN biases, and both pre-norm biases.
// Norm gains and weight matrices stay shared.  Decoder slots bound to the
// same groups keep reading the shared biases.
template <typename T>
void apply_bias_la(Model<T>& m) {
  detail::require_unadapted(m);
  for (std::size_t i = 0; i < m.encoder.size(); ++i) {
    auto& layer = m.encoder[i];
    const std::string base = "la/enc" + std::to_string(i + 1) + ".";
    auto privatize = [&](Tensor<T>& slot_bias, const std::string& name) {
      Tensor<T> copy = slot_bias.clone();
      copy.set_requires_grad(true);
      slot_bias = copy;
      m.named_params.emplace_back(base + name, copy);
    };
    privatize(layer.attn.bq, "attn.bq");
    privatize(layer.attn.bk, "attn.bk");
    privatize(layer.attn.bv, "attn.bv");
    privatize(layer.attn.bo, "attn.bo");
    privatize(layer.attn.ln_b, "attn.ln_b");
    privatize(layer.ffn.b1, "ffn.b1");
    privatize(layer.ffn.b2, "ffn.b2");
    privatize(layer.ffn.ln_b, "ffn.ln_b");
  }
  m.adaptation = AdaptationSpec{AdaptMode::Bias, 0, 0};
}

// Adds rank-r adapters to W^Q and W^V of every encoder layer.  The adapted
// projection is x(W + B A) with B (d x r) zero-initialized and A (r x d)
// scaled-uniform, so the update starts at exactly zero.
template <typename T>
void apply_adapter_la(Model<T>& m, int rank, std::uint64_t seed) {
  detail::require_unadapted(m);
  AdaptationSpec spec{AdaptMode::Adapter, rank, 0};
  spec.validate(m.config);
  std::mt19937_64 rng(seed);
  const std::size_t d = std::size_t(m.config.d_model);
  const std::size_t r = std::size_t(rank);
  for (std::size_t i = 0; i < m.encoder.size(); ++i) {
    auto& la = m.encoder[i].la;
    const std::string base = "la/enc" + std::to_string(i + 1) + ".";
    la.q_b = Tensor<T>::zeros({d, r}, true);
    la.q_a = detail::scaled_uniform<T>({r, d}, r, d, rng);
    la.v_b = Tensor<T>::zeros({d, r}, true);
    la.v_a = detail::scaled_uniform<T>({r, d}, r, d, rng);
    m.named_params.emplace_back(base + "attn.q_b", la.q_b);
    m.named_params.emplace_back(base + "attn.q_a", la.q_a);
    m.named_params.emplace_back(base + "attn.v_b", la.v_b);
    m.named_params.emplace_back(base + "attn.v_a", la.v_a);
  }
  m.adaptation = spec;
}

// Gives every encoder layer L trainable prompt rows that are prepended to
// that layer's key/value input (queries and sequence length are untouched).
// L = 0 leaves the computation graph exactly as it was.
template <typename T>
void apply_prompt_la(Model<T>& m, int prompt_len, std::uint64_t seed) {
  detail::require_unadapted(m);
  AdaptationSpec spec{AdaptMode::Prompt, 0, prompt_len};
  spec.validate(m.config);
  std::mt19937_64 rng(seed);
  const std::size_t d = std::size_t(m.config.d_model);
  if (prompt_len > 0) {
    for (std::size_t i = 0; i < m.encoder.size(); ++i) {
      auto& la = m.encoder[i].la;
      la.prompt = detail::scaled_uniform<T>({std::size_t(prompt_len), d}, d, d, rng);
      m.named_params.emplace_back("la/enc" + std::to_string(i + 1) + ".prompt", la.prompt);
    }
  }
  m.adaptation = spec;
}

template <typename T>
void apply_adaptation(Model<T>& m, const AdaptationSpec& spec, std::uint64_t seed) {
  spec.validate(m.config);
  switch (spec.mode) {
    case AdaptMode::None:
      return;
    case AdaptMode::Bias:
      apply_bias_la(m);
      return;
    case AdaptMode::Adapter:
      apply_adapter_la(m, spec.rank, seed);
      return;
    case AdaptMode::Prompt:
      apply_prompt_la(m, spec.prompt_len, seed);
      return;
  }
}

// One-call construction: bind the plan, then apply the requested adaptation
// with an independent stream derived from the same seed.
template <typename T>
Model<T> build_model(const ModelConfig& config, const SharingPlan& plan,
                     const AdaptationSpec& adaptation, std::uint64_t seed) {
  Model<T> m = bind_model<T>(config, plan, seed);
  apply_adaptation(m, adaptation, seed ^ 0x9e3779b97f4a7c15ULL);
  return m;
}

// Total elements across adaptation parameters (names under "la/").
template <typename T>
std::size_t adaptation_param_count(const Model<T>& m) {
  std::size_t n = 0;
  for (const auto& [name, t] : m.named_params)
    if (name.rfind("la/", 0) == 0) n += t.numel();
  return n;
}

// Total elements across all trainable parameters except the embedding.
template <typename T>
std::size_t bound_param_count(const Model<T>& m) {
  std::size_t n = 0;
  for (const auto& [name, t] : m.named_params)
    if (name != "embedding") n += t.numel();
  return n;
}

}  // namespace edgeformer
