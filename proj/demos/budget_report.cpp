// Prints the cost sheet for the three stock 12+2 layouts side by side:
// private weights everywhere, one universal layer, and the load-balanced
// sharing plan with an interleaved decoder.
#include <edgeformer/accounting.hpp>

#include <iostream>
#include <string>

using namespace edgeformer;

int main() {
  for (const std::string preset : {"full", "universal", "edgeformer"}) {
    ModelConfig config;
    if (preset != "edgeformer") {
      config.decoder_style = DecoderStyle::Vanilla;
      config.d_decffn = 2048;
    }
    auto plan = build_plan(config, preset);
    auto report = cost_report(config, plan, {});
    std::cout << "=== " << preset << " ===\n" << render_report_table(report) << "\n";
  }
  return 0;
}
