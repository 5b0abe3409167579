#pragma once

// Architecture hyperparameters and their JSON form.  Config parsing is
// strict: unknown keys are rejected so a typo cannot silently run a
// different experiment.

#include <nlohmann/json.hpp>
#include <set>
#include <string>

#include "edgeformer/tensor.hpp"

namespace edgeformer {

using json = nlohmann::json;

enum class DecoderStyle { Vanilla, Interleaved };

inline std::string to_string(DecoderStyle s) {
  return s == DecoderStyle::Vanilla ? "vanilla" : "interleaved";
}

inline DecoderStyle decoder_style_from_string(const std::string& s) {
  if (s == "vanilla") return DecoderStyle::Vanilla;
  if (s == "interleaved") return DecoderStyle::Interleaved;
  throw ConfigError("decoder_style: expected \"vanilla\" or \"interleaved\", got \"" + s + "\"");
}

struct ModelConfig {
  int enc_layers = 12;
  int dec_layers = 2;
  int d_model = 512;
  int heads = 8;
  int d_encffn = 2048;
  int d_decffn = 128;
  int vocab_size = 32000;
  int max_len = 256;
  DecoderStyle decoder_style = DecoderStyle::Interleaved;
  double dropout = 0.0;

  int head_dim() const { return d_model / heads; }

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive, got " + std::to_string(v));
    };
    positive(enc_layers, "enc_layers");
    positive(dec_layers, "dec_layers");
    positive(d_model, "d_model");
    positive(heads, "heads");
    positive(d_encffn, "d_encffn");
    positive(d_decffn, "d_decffn");
    positive(max_len, "max_len");
    if (vocab_size < 3)
      throw ConfigError("model.vocab_size must cover the reserved pad/bos/eos ids, got " +
                        std::to_string(vocab_size));
    if (d_model % heads != 0)
      throw ConfigError("model.d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
    if (decoder_style == DecoderStyle::Interleaved && d_decffn >= d_model)
      throw ConfigError("interleaved decoder requires d_decffn < d_model, got d_decffn=" +
                        std::to_string(d_decffn) + ", d_model=" + std::to_string(d_model));
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("model.dropout must be in [0, 1), got " + std::to_string(dropout));
  }
};

// Reserved token ids shared by every synthetic task and the decoder.
constexpr std::int32_t kPadId = 0;
constexpr std::int32_t kBosId = 1;
constexpr std::int32_t kEosId = 2;
constexpr std::int32_t kNumReservedIds = 3;

// ---- layer adaptation spec -------------------------------------------------

enum class AdaptMode { None, Bias, Adapter, Prompt };

inline std::string to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::None: return "none";
    case AdaptMode::Bias: return "bias";
    case AdaptMode::Adapter: return "adapter";
    case AdaptMode::Prompt: return "prompt";
  }
  return "?";
}

inline AdaptMode adapt_mode_from_string(const std::string& s) {
  if (s == "none") return AdaptMode::None;
  if (s == "bias") return AdaptMode::Bias;
  if (s == "adapter") return AdaptMode::Adapter;
  if (s == "prompt") return AdaptMode::Prompt;
  throw ConfigError("adaptation.mode must be none, bias, adapter, or prompt; got \"" + s + "\"");
}

struct AdaptationSpec {
  AdaptMode mode = AdaptMode::None;
  int rank = 32;       // adapter: LoRA rank r on encoder W^Q and W^V
  int prompt_len = 8;  // prompt: learnable tokens per encoder layer

  void validate(const ModelConfig& c) const {
    if (mode == AdaptMode::Adapter && (rank < 1 || rank >= c.d_model))
      throw ConfigError("adaptation.rank must satisfy 0 < r < d_model, got r=" +
                        std::to_string(rank) + ", d_model=" + std::to_string(c.d_model));
    if (mode == AdaptMode::Prompt && prompt_len < 0)
      throw ConfigError("adaptation.prompt_len must be nonnegative, got " +
                        std::to_string(prompt_len));
  }
};

// ---- strict JSON helpers -------------------------------------------------

inline void require_object(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
}

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(ctx + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
T get_required(const json& j, const std::string& key, const std::string& ctx) {
  if (!j.contains(key)) throw ConfigError(ctx + ": missing required key \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + "." + key + ": wrong type");
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + "." + key + ": wrong type");
  }
}

inline ModelConfig model_config_from_json(const json& j) {
  require_object(j, "model");
  reject_unknown_keys(j,
                      {"enc_layers", "dec_layers", "d_model", "heads", "d_encffn", "d_decffn",
                       "vocab_size", "max_len", "decoder_style", "dropout"},
                      "model");
  ModelConfig c;
  c.enc_layers = get_or(j, "enc_layers", c.enc_layers, "model");
  c.dec_layers = get_or(j, "dec_layers", c.dec_layers, "model");
  c.d_model = get_or(j, "d_model", c.d_model, "model");
  c.heads = get_or(j, "heads", c.heads, "model");
  c.decoder_style = decoder_style_from_string(
      get_or<std::string>(j, "decoder_style", to_string(c.decoder_style), "model"));
  // FFN sizes default to the vanilla-Transformer 4d (encoder) and the
  // interleaved d/4 (decoder) when not given explicitly.
  c.d_encffn = get_or(j, "d_encffn", 4 * c.d_model, "model");
  c.d_decffn = get_or(j, "d_decffn",
                      c.decoder_style == DecoderStyle::Interleaved ? c.d_model / 4 : 4 * c.d_model,
                      "model");
  c.vocab_size = get_or(j, "vocab_size", c.vocab_size, "model");
  c.max_len = get_or(j, "max_len", c.max_len, "model");
  c.dropout = get_or(j, "dropout", c.dropout, "model");
  c.validate();
  return c;
}

inline AdaptationSpec adaptation_from_json(const json& j) {
  require_object(j, "adaptation");
  reject_unknown_keys(j, {"mode", "rank", "prompt_len"}, "adaptation");
  AdaptationSpec a;
  a.mode = adapt_mode_from_string(get_or<std::string>(j, "mode", "none", "adaptation"));
  a.rank = get_or(j, "rank", a.rank, "adaptation");
  a.prompt_len = get_or(j, "prompt_len", a.prompt_len, "adaptation");
  return a;
}

inline json adaptation_to_json(const AdaptationSpec& a) {
  return json{{"mode", to_string(a.mode)}, {"rank", a.rank}, {"prompt_len", a.prompt_len}};
}

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"enc_layers", c.enc_layers},
              {"dec_layers", c.dec_layers},
              {"d_model", c.d_model},
              {"heads", c.heads},
              {"d_encffn", c.d_encffn},
              {"d_decffn", c.d_decffn},
              {"vocab_size", c.vocab_size},
              {"max_len", c.max_len},
              {"decoder_style", to_string(c.decoder_style)},
              {"dropout", c.dropout}};
}

}  // namespace edgeformer
