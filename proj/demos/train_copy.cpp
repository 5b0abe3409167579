// Trains a narrow 4+2 stack on the copy task, reports accuracy as it
// learns, writes a checkpoint, and decodes a few held-out sources.
#include <edgeformer/checkpoint.hpp>
#include <edgeformer/train.hpp>

#include <iostream>
#include <random>

using namespace edgeformer;

int main() {
  ModelConfig config;
  config.enc_layers = 4;
  config.dec_layers = 2;
  config.d_model = 32;
  config.heads = 4;
  config.d_encffn = 128;
  config.d_decffn = 8;
  config.vocab_size = 16;
  config.max_len = 16;
  config.decoder_style = DecoderStyle::Interleaved;

  auto plan = build_plan(config, "edgeformer");
  auto model = bind_model<float>(config, plan, 1);

  TaskSpec task;
  task.kind = TaskKind::Copy;
  task.vocab_size = config.vocab_size;
  task.max_len = 8;
  auto train_data = generate_task(task, 512, 1);
  auto eval_data = generate_task(task, 128, 1, 512);

  TrainConfig cfg;
  cfg.lr_peak = 3e-3;
  cfg.warmup_steps = 100;
  cfg.batch_size = 16;
  cfg.max_steps = 600;
  cfg.dropout = 0.0;
  cfg.seed = 1;
  Adam<float> opt(model.named_params, cfg);
  std::mt19937_64 dropout_rng(cfg.seed);

  for (int s = 0; s < cfg.max_steps; ++s) {
    auto stats = train_step(model, opt, train_data, s, dropout_rng);
    if (stats.step % 200 == 0 || stats.step == cfg.max_steps) {
      auto e = evaluate(model, eval_data);
      std::cout << "step " << stats.step << " loss=" << stats.loss
                << " token_accuracy=" << e.token_accuracy << " exact_match=" << e.exact_match
                << "\n";
    }
  }

  auto snap = OptimizerSnapshot<float>::take(opt);
  save_checkpoint("copy_model.efck", model, &snap, rng_to_string(dropout_rng));
  std::cout << "wrote copy_model.efck\n";

  auto join = [](const std::vector<std::int32_t>& v) {
    std::string s;
    for (auto t : v) s += (s.empty() ? "" : " ") + std::to_string(t);
    return s;
  };
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& ex = eval_data[i];
    std::cout << "src [" << join(ex.src) << "] -> [" << join(greedy_decode(model, ex.src))
              << "]\n";
  }
  return 0;
}
