// Command-line driver: `report` prints cost accounting for a configuration,
// `train` runs the training loop described by a config document, `decode`
// translates token-id lines with a trained checkpoint, and `ablate` runs
// the built-in sharing sweeps.  Exit codes: 0 success, 1 configuration
// error, 2 runtime error.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "edgeformer/ablate.hpp"
#include "edgeformer/accounting.hpp"
#include "edgeformer/checkpoint.hpp"
#include "edgeformer/decode.hpp"
#include "edgeformer/runconfig.hpp"

namespace ef = edgeformer;
using json = ef::json;

namespace {

struct ReportOptions {
  std::string preset = "edgeformer";
  std::string layers;
  std::string style;
  std::string plan_custom;
  int d_model = 0;
  int heads = 0;
  int encffn = 0;
  int decffn = 0;
  std::string adapt = "none";
  int rank = 32;
  int prompt_len = 8;
  int src_len = 30;
  int tgt_len = 30;
  int vocab = 32'000;
  bool machine = false;
};

struct TrainOptions {
  std::string config_path;
  std::string resume_path;
};

struct DecodeOptions {
  std::string checkpoint_path;
  std::string config_path;
  std::string input_path = "-";
  std::string output_path = "-";
  int beam = 5;
  double alpha = 0.6;
  int max_steps = 0;
};

struct AblateOptions {
  std::string sweep = "all";
  std::string task = "cipher";
  int steps = 400;
  int seeds = 1;
  bool machine = false;
  bool quiet = false;
};

void parse_layers(const std::string& text, ef::ModelConfig& c) {
  const auto plus = text.find('+');
  std::size_t enc_end = 0, dec_end = 0;
  int enc = 0, dec = 0;
  try {
    enc = std::stoi(text, &enc_end);
    if (plus != std::string::npos) dec = std::stoi(text.substr(plus + 1), &dec_end);
  } catch (const std::exception&) {
    enc_end = 0;
  }
  if (plus == std::string::npos || enc_end != plus || dec_end != text.size() - plus - 1)
    throw ef::ConfigError("--layers expects ENC+DEC (e.g. 12+2), got \"" + text + "\"");
  c.enc_layers = enc;
  c.dec_layers = dec;
}

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ef::ConfigError(what + " is not valid JSON: " + e.what());
  }
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ef::ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_json_text(buf.str(), path);
}

int run_report(const ReportOptions& o) {
  ef::ModelConfig c;
  if (o.style.empty()) {
    c.decoder_style = o.preset == "edgeformer" ? ef::DecoderStyle::Interleaved
                                               : ef::DecoderStyle::Vanilla;
  } else {
    c.decoder_style = ef::decoder_style_from_string(o.style);
  }
  c.d_decffn = c.decoder_style == ef::DecoderStyle::Interleaved ? c.d_model / 4 : 4 * c.d_model;
  if (!o.layers.empty()) parse_layers(o.layers, c);
  if (o.d_model) {
    c.d_model = o.d_model;
    c.d_encffn = 4 * c.d_model;
    c.d_decffn = c.decoder_style == ef::DecoderStyle::Interleaved ? c.d_model / 4 : 4 * c.d_model;
  }
  if (o.heads) c.heads = o.heads;
  if (o.encffn) c.d_encffn = o.encffn;
  if (o.decffn) c.d_decffn = o.decffn;
  c.validate();

  json custom = json::object();
  if (!o.plan_custom.empty()) custom = parse_json_text(o.plan_custom, "--plan-custom");
  auto plan = ef::build_plan(c, o.preset, &custom);

  ef::AdaptationSpec adapt;
  adapt.mode = ef::adapt_mode_from_string(o.adapt);
  adapt.rank = o.rank;
  adapt.prompt_len = o.prompt_len;
  adapt.validate(c);

  auto report = ef::cost_report(c, plan, adapt, o.src_len, o.tgt_len, o.vocab);
  std::cout << (o.machine ? ef::render_report_machine(report)
                          : ef::render_report_table(report));
  std::vector<std::string> reasons;
  if (!ef::budget_check(report, &reasons))
    for (const auto& r : reasons) std::cout << "budget warning: " << r << "\n";
  return 0;
}

std::string metric(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

int run_train(const TrainOptions& o) {
  auto cfg = ef::run_config_from_json(load_json_file(o.config_path));
  auto plan = cfg.validate();
  const auto expected_digest =
      ef::json_digest(ef::model_description(cfg.model, plan, cfg.adaptation));

  auto model = ef::build_model<float>(cfg.model, plan, cfg.adaptation, cfg.train.seed);
  ef::Adam<float> opt(model.named_params, cfg.train);
  std::mt19937_64 dropout_rng(cfg.train.seed);

  if (!o.resume_path.empty()) {
    auto loaded = ef::load_checkpoint<float>(o.resume_path, expected_digest);
    model = std::move(loaded.model);
    opt = ef::Adam<float>(model.named_params, cfg.train);
    if (loaded.has_optimizer)
      opt.restore(loaded.optimizer.m, loaded.optimizer.v, loaded.optimizer.steps);
    if (!loaded.rng_state.empty()) dropout_rng = ef::rng_from_string(loaded.rng_state);
  }

  auto data = ef::generate_task(cfg.task, std::size_t(cfg.train_samples), cfg.train.seed);
  auto eval_data = ef::generate_task(cfg.task, std::size_t(cfg.eval_samples), cfg.train.seed,
                                     std::uint64_t(cfg.train_samples));

  std::ofstream metrics_file;
  if (!cfg.metrics_path.empty()) {
    metrics_file.open(cfg.metrics_path,
                      o.resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics_file) throw std::runtime_error("cannot open metrics log " + cfg.metrics_path);
  }
  std::ostream& log = cfg.metrics_path.empty() ? std::cout : metrics_file;

  for (std::int64_t s = opt.steps_done(); s < cfg.train.max_steps; ++s) {
    auto stats = ef::train_step(model, opt, data, s, dropout_rng);
    log << "step " << stats.step << " loss=" << metric(stats.loss)
        << " lr=" << metric(stats.lr) << " grad_norm=" << metric(stats.grad_norm)
        << " tokens=" << stats.tokens << "\n";
    if (stats.step % cfg.train.eval_every == 0 || stats.step == cfg.train.max_steps) {
      auto e = ef::evaluate(model, eval_data);
      log << "step " << stats.step << " eval_token_accuracy=" << metric(e.token_accuracy)
          << " eval_exact_match=" << metric(e.exact_match) << " eval_bleu=" << metric(e.bleu)
          << "\n";
    }
  }

  auto snap = ef::OptimizerSnapshot<float>::take(opt);
  ef::save_checkpoint(cfg.checkpoint_path, model, &snap, ef::rng_to_string(dropout_rng));
  std::cerr << "wrote " << cfg.checkpoint_path << " after " << opt.steps_done() << " steps\n";
  return 0;
}

int run_decode(const DecodeOptions& o) {
  if (o.beam < 1) throw ef::ConfigError("--beam must be at least 1");
  std::uint64_t expect_digest = 0;
  if (!o.config_path.empty()) {
    auto cfg = ef::run_config_from_json(load_json_file(o.config_path));
    auto plan = cfg.validate();
    expect_digest = ef::json_digest(ef::model_description(cfg.model, plan, cfg.adaptation));
  }
  auto loaded = ef::load_checkpoint<float>(o.checkpoint_path, expect_digest);
  const auto& model = loaded.model;

  std::ifstream input_file;
  if (o.input_path != "-") {
    input_file.open(o.input_path);
    if (!input_file) throw std::runtime_error("cannot open input " + o.input_path);
  }
  std::istream& in = o.input_path == "-" ? std::cin : input_file;

  std::ofstream output_file;
  if (o.output_path != "-") {
    output_file.open(o.output_path, std::ios::trunc);
    if (!output_file) throw std::runtime_error("cannot open output " + o.output_path);
  }
  std::ostream& out = o.output_path == "-" ? std::cout : output_file;

  std::string line;
  std::size_t line_no = 0, failures = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = "line " + std::to_string(line_no);
    try {
      auto src = ef::parse_token_ids(line, where);
      auto hyp = o.beam == 1 ? ef::greedy_decode(model, src, o.max_steps)
                             : ef::beam_decode(model, src, o.beam, o.alpha, o.max_steps);
      std::string text;
      for (std::size_t i = 0; i < hyp.size(); ++i)
        text += (i ? " " : "") + std::to_string(hyp[i]);
      out << text << "\n";
    } catch (const std::invalid_argument& e) {
      ++failures;
      std::cerr << where << ": " << e.what() << "\n";
      out << "\n";
    }
  }
  return failures ? 2 : 0;
}

int run_ablate(const AblateOptions& o) {
  ef::AblationProtocol proto;
  proto.task = ef::task_kind_from_string(o.task);
  proto.steps = o.steps;
  proto.seeds = o.seeds;
  if (proto.steps < 1 || proto.seeds < 1)
    throw ef::ConfigError("--steps and --seeds must be positive");

  std::vector<ef::AblationRowSpec> specs;
  if (o.sweep == "ffn-load" || o.sweep == "all") {
    auto rows = ef::ffn_load_sweep();
    specs.insert(specs.end(), rows.begin(), rows.end());
  }
  if (o.sweep == "enc-dec" || o.sweep == "all") {
    auto rows = ef::enc_dec_sweep();
    specs.insert(specs.end(), rows.begin(), rows.end());
  }
  if (specs.empty())
    throw ef::ConfigError("--sweep must be ffn-load, enc-dec, or all; got \"" + o.sweep + "\"");

  auto rows = ef::run_ablation<float>(specs, proto, o.quiet ? nullptr : &std::cerr);
  if (o.machine) {
    std::cout << ef::render_ablation_machine(rows);
  } else {
    std::cout << ef::render_ablation_table(rows);
    std::cout << "\n" << ef::render_ablation_machine(rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weight-shared seq2seq transformer toolkit"};
  app.require_subcommand(1);

  ReportOptions ro;
  auto* report = app.add_subcommand("report", "print parameter/FLOPS accounting for a config");
  report->add_option("--preset", ro.preset, "sharing plan: full, universal, edgeformer, custom");
  report->add_option("--layers", ro.layers, "encoder+decoder depth, e.g. 12+2");
  report->add_option("--d", ro.d_model, "model width (FFN widths follow unless overridden)");
  report->add_option("--heads", ro.heads, "attention heads");
  report->add_option("--encffn", ro.encffn, "encoder FFN hidden width");
  report->add_option("--decffn", ro.decffn, "decoder FFN hidden width");
  report->add_option("--style", ro.style, "decoder style: vanilla or interleaved");
  report->add_option("--plan-custom", ro.plan_custom, "JSON spec for --preset custom");
  report->add_option("--adapt", ro.adapt, "layer adaptation: none, bias, adapter, prompt");
  report->add_option("--rank", ro.rank, "adapter rank");
  report->add_option("--prompt-len", ro.prompt_len, "prompt length");
  report->add_option("--src-len", ro.src_len, "FLOPS source length");
  report->add_option("--tgt-len", ro.tgt_len, "FLOPS target length");
  report->add_option("--vocab", ro.vocab, "FLOPS output vocabulary");
  report->add_flag("--machine", ro.machine, "key=value output");

  TrainOptions to;
  auto* train = app.add_subcommand("train", "train a model from a JSON config document");
  train->add_option("--config", to.config_path, "run config JSON")->required();
  train->add_option("--resume", to.resume_path, "checkpoint to continue from");

  DecodeOptions dopt;
  auto* decode = app.add_subcommand("decode", "decode token-id lines with a checkpoint");
  decode->add_option("--checkpoint", dopt.checkpoint_path, "trained checkpoint")->required();
  decode->add_option("--config", dopt.config_path, "config the checkpoint must match");
  decode->add_option("--input", dopt.input_path, "input file of token-id lines, - for stdin");
  decode->add_option("--output", dopt.output_path, "output file, - for stdout");
  decode->add_option("--beam", dopt.beam, "beam width (1 = greedy)");
  decode->add_option("--alpha", dopt.alpha, "length normalization exponent");
  decode->add_option("--max-steps", dopt.max_steps, "emission cap, 0 = model limit");

  AblateOptions ao;
  auto* ablate = app.add_subcommand("ablate", "run the built-in sharing sweeps");
  ablate->add_option("--sweep", ao.sweep, "ffn-load, enc-dec, or all");
  ablate->add_option("--task", ao.task, "training task for the toy runs");
  ablate->add_option("--steps", ao.steps, "training steps per toy run");
  ablate->add_option("--seeds", ao.seeds, "seeds per config (median reported)");
  ablate->add_flag("--machine", ao.machine, "machine rows only");
  ablate->add_flag("--quiet", ao.quiet, "no progress lines on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help exits clean; bad flags are config errors
  }

  try {
    if (report->parsed()) return run_report(ro);
    if (train->parsed()) return run_train(to);
    if (decode->parsed()) return run_decode(dopt);
    if (ablate->parsed()) return run_ablate(ao);
    return 1;
  } catch (const ef::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
