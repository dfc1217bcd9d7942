// Command-line driver for the milseq experiment harness.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "milseq/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"milseq: weakly supervised sequence learning with MIL pooling"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  bool seed_given = false;

  const char* names[] = {"gen-data", "train", "decode", "evaluate", "tune-thresholds",
                         "dump-frames"};
  const char* blurbs[] = {"generate a synthetic dataset",
                          "train a model and write checkpoint plus epoch log",
                          "write decoded token sequences or event intervals",
                          "write a metrics CSV for the configured split",
                          "tune per-class thresholds and write them",
                          "write per-frame probabilities for one recording"};
  for (int i = 0; i < 6; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], blurbs[i]);
    sub->add_option("--config", config_path, "experiment config file (JSON, // comments ok)")
        ->required();
    sub->add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { seed_given = true; });
    sub->add_option("--out", out_override, "override the config output directory");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    milseq::ExperimentConfig config = milseq::load_experiment_config(config_path);
    if (seed_given) config.seed = seed_override;
    if (!out_override.empty()) config.out = out_override;
    milseq::run_subcommand(app.get_subcommands().at(0)->get_name(), config);
  } catch (const std::exception& e) {
    std::cerr << "milseq: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
