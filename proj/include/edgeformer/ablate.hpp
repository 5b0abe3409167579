#pragma once

// Sweep driver behind the `ablate` command.  Each row carries two scales:
// the accounting scale reproduces the published parameter/FLOPS arithmetic,
// and a structurally matching toy scale is what actually trains.  A row
// whose configuration fails to validate is reported and skipped; the sweep
// always runs to completion.

#include <iomanip>

#include "edgeformer/accounting.hpp"
#include "edgeformer/adaptation.hpp"
#include "edgeformer/train.hpp"

namespace edgeformer {

struct AblationRowSpec {
  std::string label;
  ModelConfig scale_config;  // counted, never trained
  std::string scale_preset = "custom";
  json scale_custom = json::object();
  ModelConfig toy_config;  // trained
  std::string toy_preset = "custom";
  json toy_custom = json::object();
};

struct AblationRow {
  std::string label;
  bool valid = false;
  std::string error;  // set when !valid
  long long params = 0;
  long long flops = 0;
  std::map<std::string, int> loads;
  bool trained = false;
  double median_accuracy = 0.0;
  std::vector<double> seed_accuracies;
};

namespace detail {

inline ModelConfig ablation_full_scale() {
  ModelConfig c;  // 12+2 at d=512 with the interleaved decoder
  return c;
}

inline ModelConfig ablation_toy_scale() {
  ModelConfig c;
  c.enc_layers = 12;
  c.dec_layers = 2;
  c.d_model = 16;
  c.heads = 2;
  c.d_encffn = 64;
  c.d_decffn = 4;
  c.vocab_size = 12;
  c.max_len = 16;
  c.decoder_style = DecoderStyle::Interleaved;
  return c;
}

inline json assign_spec(const std::vector<int>& assign) {
  return json{{"enc_ffn_assign", assign}, {"decoder", "edgeformer"}};
}

}  // namespace detail

// The FFN-load ablation: group counts 2/3/4 with balanced loads, then the
// two imbalanced two-group splits.  FFN width shrinks as the group count
// grows so the weight totals stay at the published matched budget.
inline std::vector<AblationRowSpec> ffn_load_sweep() {
  struct Shape {
    const char* label;
    int scale_ffn, toy_ffn;
    std::vector<int> assign;
  };
  const std::vector<Shape> shapes{
      {"ffn2-load-6-6", 2048, 64, {1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2}},
      {"ffn3-load-4-4-4", 1536, 48, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3}},
      {"ffn4-load-3-3-3-3", 1024, 32, {1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4}},
      {"ffn2-load-1-11", 2048, 64, {1, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2}},
      {"ffn2-load-11-1", 2048, 64, {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2}},
  };
  std::vector<AblationRowSpec> rows;
  for (const auto& s : shapes) {
    AblationRowSpec r;
    r.label = s.label;
    r.scale_config = detail::ablation_full_scale();
    r.scale_config.d_encffn = s.scale_ffn;
    r.scale_custom = detail::assign_spec(s.assign);
    r.toy_config = detail::ablation_toy_scale();
    r.toy_config.d_encffn = s.toy_ffn;
    r.toy_custom = detail::assign_spec(s.assign);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Where to spend sharing in a 6+6 stack: cycle the encoder and keep the
// decoder private, or keep the encoder private and collapse the decoder
// into one universal layer.
inline std::vector<AblationRowSpec> enc_dec_sweep() {
  ModelConfig scale;
  scale.enc_layers = 6;
  scale.dec_layers = 6;
  scale.d_decffn = 2048;
  scale.decoder_style = DecoderStyle::Vanilla;

  ModelConfig toy = detail::ablation_toy_scale();
  toy.enc_layers = 6;
  toy.dec_layers = 6;
  toy.d_decffn = 64;
  toy.decoder_style = DecoderStyle::Vanilla;

  AblationRowSpec enc_shared;
  enc_shared.label = "enc-shared-6+6";
  enc_shared.scale_config = scale;
  enc_shared.scale_custom =
      json{{"enc_attn_cycle", 2}, {"enc_ffn_cycle", 2}, {"decoder", "private"}};
  enc_shared.toy_config = toy;
  enc_shared.toy_custom = enc_shared.scale_custom;

  AblationRowSpec dec_shared;
  dec_shared.label = "dec-shared-6+6";
  dec_shared.scale_config = scale;
  dec_shared.scale_custom =
      json{{"enc_attn_cycle", 6}, {"enc_ffn_cycle", 6}, {"decoder", "universal"}};
  dec_shared.toy_config = toy;
  dec_shared.toy_custom = dec_shared.scale_custom;

  return {enc_shared, dec_shared};
}

struct AblationProtocol {
  TaskKind task = TaskKind::Cipher;
  int steps = 400;
  int seeds = 1;
  int train_samples = 512;
  int eval_samples = 96;
  double lr_peak = 3e-3;
  int warmup_steps = 200;
  int batch_size = 16;
};

// Trains one toy configuration once and reports final token accuracy.
template <typename T>
double ablation_run_one(const AblationRowSpec& spec, const AblationProtocol& proto,
                        std::uint64_t seed) {
  auto plan = build_plan(spec.toy_config, spec.toy_preset, &spec.toy_custom);
  auto model = bind_model<T>(spec.toy_config, plan, seed);

  TaskSpec task;
  task.kind = proto.task;
  task.vocab_size = spec.toy_config.vocab_size;
  task.min_len = 1;
  task.max_len = 8;
  auto data = generate_task(task, std::size_t(proto.train_samples), seed);
  auto eval_data = generate_task(task, std::size_t(proto.eval_samples), seed,
                                 std::uint64_t(proto.train_samples));

  TrainConfig cfg;
  cfg.lr_peak = proto.lr_peak;
  cfg.warmup_steps = proto.warmup_steps;
  cfg.batch_size = proto.batch_size;
  cfg.max_steps = proto.steps;
  cfg.dropout = 0.0;
  cfg.seed = seed;
  Adam<T> opt(model.named_params, cfg);
  std::mt19937_64 dropout_rng(seed);
  for (int s = 0; s < proto.steps; ++s) train_step(model, opt, data, s, dropout_rng);
  return evaluate(model, eval_data).token_accuracy;
}

template <typename T>
AblationRow run_ablation_row(const AblationRowSpec& spec, const AblationProtocol& proto) {
  AblationRow row;
  row.label = spec.label;
  try {
    spec.scale_config.validate();
    auto scale_plan = build_plan(spec.scale_config, spec.scale_preset, &spec.scale_custom);
    auto report = cost_report(spec.scale_config, scale_plan, {});
    row.params = report.params_formula;
    row.flops = report.flops;
    row.loads = report.loads;

    for (int s = 1; s <= proto.seeds; ++s)
      row.seed_accuracies.push_back(ablation_run_one<T>(spec, proto, std::uint64_t(s)));
    if (!row.seed_accuracies.empty()) {
      auto sorted = row.seed_accuracies;
      std::sort(sorted.begin(), sorted.end());
      row.median_accuracy = sorted[sorted.size() / 2];
      row.trained = true;
    }
    row.valid = true;
  } catch (const ConfigError& e) {
    row.error = e.what();
  }
  return row;
}

template <typename T>
std::vector<AblationRow> run_ablation(const std::vector<AblationRowSpec>& specs,
                                      const AblationProtocol& proto,
                                      std::ostream* progress = nullptr) {
  std::vector<AblationRow> rows;
  for (const auto& spec : specs) {
    if (progress) *progress << "ablate: running " << spec.label << "\n" << std::flush;
    rows.push_back(run_ablation_row<T>(spec, proto));
  }
  return rows;
}

inline std::string render_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "config" << std::right << std::setw(14) << "params"
     << std::setw(16) << "flops" << std::setw(12) << "median_acc" << "  notes\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(22) << r.label;
    if (!r.valid) {
      os << "  INVALID: " << r.error << "\n";
      continue;
    }
    os << std::right << std::setw(14) << group_digits(r.params) << std::setw(16)
       << group_digits(r.flops) << std::setw(12) << std::fixed << std::setprecision(4)
       << r.median_accuracy << "  ";
    bool first = true;
    for (const auto& [g, n] : r.loads) {
      if (!first) os << " ";
      os << g << ":" << n;
      first = false;
    }
    os << "\n";
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

inline std::string render_ablation_machine(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  for (const auto& r : rows) {
    os << "ablate config=" << r.label;
    if (!r.valid) {
      os << " status=invalid\n";
      continue;
    }
    os << " status=ok params=" << r.params << " flops=" << r.flops;
    os << " median_acc=" << std::setprecision(10) << r.median_accuracy;
    os << " accs=";
    for (std::size_t i = 0; i < r.seed_accuracies.size(); ++i)
      os << (i ? "," : "") << std::setprecision(10) << r.seed_accuracies[i];
    os << "\n";
  }
  return os.str();
}

}  // namespace edgeformer
