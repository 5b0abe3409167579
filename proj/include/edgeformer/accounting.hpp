#pragma once

// Exact parameter counting and MAC-counted FLOPS estimation.
//
// Two parameter totals are reported.  params_formula counts weight
// matrices only (each shared group once, plus adaptation weight blocks) —
// the level at which the published per-layer/whole-model figures are
// computed.  params_total additionally counts biases, layer norms, and
// untied bias copies.  Embeddings are excluded from both.
//
// FLOPS convention: one multiply-accumulate = one FLOP.  A projection of
// an n-token sequence by a P-parameter weight matrix costs P*n; each
// attention module adds 2*n_q*n_k*d for scores and mixing; shared weights
// are charged per execution; the output projection adds tgt_len*d*vocab;
// embeddings, biases, and norms are not charged.

#include <iomanip>
#include <sstream>

#include "edgeformer/plan.hpp"

namespace edgeformer {

constexpr long long kParamBudget = 10'000'000;
constexpr long long kFlopsBudget = 2'000'000'000;

struct LayerCost {
  std::string label;
  long long params = 0;  // formula-level, per single layer
  long long flops = 0;
};

struct CostReport {
  long long params_formula = 0;
  long long params_total = 0;
  long long la_params = 0;
  long long flops = 0;
  int src_len = 0, tgt_len = 0, vocab = 0;
  std::vector<LayerCost> per_layer;
  std::map<std::string, int> loads;
  bool params_within_budget = false;
  bool flops_within_budget = false;
};

namespace detail {

// Per-execution FLOPS of one attention module: four n-dependent
// projections plus scores and mixing.  For cross-attention K/V project
// n_kv tokens while Q/O project n_q.
inline long long attention_flops(int d, long long n_q, long long n_kv) {
  const long long proj = (long long)d * d * (2 * n_q + 2 * n_kv);
  return proj + 2 * n_q * n_kv * d;
}

inline long long ffn_flops(int d, int hidden, long long n) { return 2LL * d * hidden * n; }

}  // namespace detail

inline long long encoder_layer_params(const ModelConfig& c) {
  return 4LL * c.d_model * c.d_model + 2LL * c.d_model * c.d_encffn;
}

inline long long decoder_layer_params(const ModelConfig& c) {
  // Self and cross attention (8d^2) plus FFN weights; the interleaved
  // layer's two lightweight FFN executions share one weight pair.
  return 8LL * c.d_model * c.d_model + 2LL * c.d_model * c.d_decffn;
}

inline long long encoder_layer_flops(const ModelConfig& c, int src_len) {
  return detail::attention_flops(c.d_model, src_len, src_len) +
         detail::ffn_flops(c.d_model, c.d_encffn, src_len);
}

inline long long decoder_layer_flops(const ModelConfig& c, int src_len, int tgt_len) {
  long long f = detail::attention_flops(c.d_model, tgt_len, tgt_len) +
                detail::attention_flops(c.d_model, tgt_len, src_len);
  const int ffn_execs = c.decoder_style == DecoderStyle::Interleaved ? 2 : 1;
  f += ffn_execs * detail::ffn_flops(c.d_model, c.d_decffn, tgt_len);
  return f;
}

// Adaptation parameter deltas (encoder layers only).
inline long long adaptation_weight_params(const ModelConfig& c, const AdaptationSpec& a) {
  switch (a.mode) {
    case AdaptMode::Adapter:
      return (long long)c.enc_layers * 2 * 2 * c.d_model * a.rank;  // B and A on W^Q and W^V
    case AdaptMode::Prompt:
      return (long long)c.enc_layers * a.prompt_len * c.d_model;
    default:
      return 0;
  }
}

inline long long encoder_layer_bias_params(const ModelConfig& c) {
  // q/k/v/o projection biases, FFN b1/b2, and both sublayer LN biases.
  return 4LL * c.d_model + c.d_encffn + c.d_model + 2LL * c.d_model;
}

inline long long adaptation_total_params(const ModelConfig& c, const AdaptationSpec& a) {
  if (a.mode == AdaptMode::Bias) return (long long)c.enc_layers * encoder_layer_bias_params(c);
  return adaptation_weight_params(c, a);
}

inline long long adaptation_flops(const ModelConfig& c, const AdaptationSpec& a, int src_len) {
  switch (a.mode) {
    case AdaptMode::Adapter:
      // x*B then (xB)*A on two projections per encoder layer.
      return (long long)c.enc_layers * 2 * 2 * src_len * c.d_model * a.rank;
    case AdaptMode::Prompt:
      // K/V projections over L extra rows, plus wider score/mix products.
      return (long long)c.enc_layers *
             (2LL * a.prompt_len * c.d_model * c.d_model + 2LL * src_len * a.prompt_len * c.d_model);
    default:
      return 0;
  }
}

inline CostReport cost_report(const ModelConfig& c, const SharingPlan& plan,
                              const AdaptationSpec& adapt, int src_len = 30, int tgt_len = 30,
                              int vocab = 32'000) {
  if (src_len <= 0 || tgt_len <= 0 || vocab <= 0)
    throw ConfigError("cost report lengths and vocab must be positive");
  CostReport r;
  r.src_len = src_len;
  r.tgt_len = tgt_len;
  r.vocab = vocab;

  long long group_weights = 0, group_aux = 0;
  for (const auto& g : plan.groups) {
    group_weights += g.weight_params();
    group_aux += g.aux_params();
  }
  const long long terminal_norms = 4LL * c.d_model;  // encoder + decoder final LN
  r.la_params = adaptation_total_params(c, adapt);
  r.params_formula = group_weights + adaptation_weight_params(c, adapt);
  r.params_total = r.params_formula + group_aux + terminal_norms +
                   (adapt.mode == AdaptMode::Bias ? r.la_params : 0);

  const long long enc_flops = encoder_layer_flops(c, src_len);
  const long long dec_flops = decoder_layer_flops(c, src_len, tgt_len);
  const long long out_proj = (long long)tgt_len * c.d_model * vocab;
  r.flops = c.enc_layers * enc_flops + c.dec_layers * dec_flops + out_proj +
            adaptation_flops(c, adapt, src_len);

  r.per_layer.push_back({"encoder layer", encoder_layer_params(c), enc_flops});
  r.per_layer.push_back({c.decoder_style == DecoderStyle::Interleaved
                             ? "decoder layer (interleaved)"
                             : "decoder layer (vanilla)",
                         decoder_layer_params(c), dec_flops});
  r.loads = plan.load_report();
  r.params_within_budget = r.params_formula <= kParamBudget;
  r.flops_within_budget = r.flops <= kFlopsBudget;
  return r;
}

inline CostReport count_params(const ModelConfig& c, const SharingPlan& plan,
                               const AdaptationSpec& adapt) {
  return cost_report(c, plan, adapt);
}

inline CostReport estimate_flops(const ModelConfig& c, const SharingPlan& plan,
                                 const AdaptationSpec& adapt, int src_len, int tgt_len,
                                 int vocab) {
  return cost_report(c, plan, adapt, src_len, tgt_len, vocab);
}

inline bool budget_check(const CostReport& r, std::vector<std::string>* reasons = nullptr) {
  bool pass = true;
  if (!r.params_within_budget) {
    pass = false;
    if (reasons)
      reasons->push_back("params_formula " + std::to_string(r.params_formula) + " exceeds " +
                         std::to_string(kParamBudget));
  }
  if (!r.flops_within_budget) {
    pass = false;
    if (reasons)
      reasons->push_back("flops " + std::to_string(r.flops) + " exceeds " +
                         std::to_string(kFlopsBudget));
  }
  return pass;
}

// ---- rendering ----------------------------------------------------------

inline std::string group_digits(long long v) {
  std::string raw = std::to_string(v);
  std::string out;
  int count = 0;
  for (auto it = raw.rbegin(); it != raw.rend(); ++it) {
    if (count && count % 3 == 0 && *it != '-') out.push_back(',');
    out.push_back(*it);
    ++count;
  }
  return std::string(out.rbegin(), out.rend());
}

inline std::string render_report_table(const CostReport& r) {
  std::ostringstream os;
  os << std::left;
  os << std::setw(34) << "quantity" << std::right << std::setw(18) << "value" << "\n";
  os << std::string(52, '-') << "\n";
  auto row = [&](const std::string& k, const std::string& v) {
    os << std::left << std::setw(34) << k << std::right << std::setw(18) << v << "\n";
  };
  for (const auto& l : r.per_layer) {
    row(l.label + " params", group_digits(l.params));
    row(l.label + " flops", group_digits(l.flops));
  }
  row("params (formula)", group_digits(r.params_formula));
  row("params (total)", group_digits(r.params_total));
  if (r.la_params) row("adaptation params", group_digits(r.la_params));
  row("flops @" + std::to_string(r.src_len) + "/" + std::to_string(r.tgt_len) + "/v" +
          std::to_string(r.vocab),
      group_digits(r.flops));
  os << std::string(52, '-') << "\n";
  os << "load:";
  for (const auto& [g, n] : r.loads) os << " " << g << "=" << n;
  os << "\n";
  std::vector<std::string> reasons;
  const bool pass = budget_check(r, &reasons);
  os << "budget (<=" << group_digits(kParamBudget) << " params, <=" << group_digits(kFlopsBudget)
     << " flops): " << (pass ? "PASS" : "FAIL") << "\n";
  for (const auto& why : reasons) os << "  " << why << "\n";
  return os.str();
}

inline std::string render_report_machine(const CostReport& r) {
  std::ostringstream os;
  os << "params.formula=" << r.params_formula << "\n";
  os << "params.total=" << r.params_total << "\n";
  os << "params.adaptation=" << r.la_params << "\n";
  os << "flops.total=" << r.flops << "\n";
  os << "flops.src_len=" << r.src_len << "\n";
  os << "flops.tgt_len=" << r.tgt_len << "\n";
  os << "flops.vocab=" << r.vocab << "\n";
  for (const auto& [g, n] : r.loads) os << "load." << g << "=" << n << "\n";
  os << "budget.params=" << (r.params_within_budget ? "pass" : "fail") << "\n";
  os << "budget.flops=" << (r.flops_within_budget ? "pass" : "fail") << "\n";
  return os.str();
}

}  // namespace edgeformer
