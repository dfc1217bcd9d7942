#pragma once

// Experiment harness behind the command-line tool: config file schema and
// the subcommand implementations. Configs are JSON with // comments allowed;
// every artifact a subcommand writes is a pure function of (config, seed),
// with no timestamps, so reruns are byte-identical.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "milseq/nets.hpp"
#include "milseq/synthgen.hpp"
#include "milseq/trainer.hpp"

namespace milseq {

struct EvaluateConfig {
  std::string split = "test";
  // Subset of {"per", "tagging", "segments"}; empty means head-appropriate
  // defaults (per for softmax heads, tagging+segments for sigmoid heads).
  std::vector<std::string> metrics;
  // Thresholds file for tagging/segments; when absent they are tuned on the
  // validation split against the tagging objective.
  std::optional<std::filesystem::path> thresholds;
  // Additionally report oracle segment metrics: thresholds tuned on the
  // evaluation split itself against the segment objective.
  bool oracle = false;
};

struct TuneConfig {
  std::string split = "valid";
  std::string objective = "tagging";  // or "segments"
};

struct DecodeConfig {
  std::string split = "test";
  std::string mode = "tokens";  // or "intervals"
  std::optional<std::filesystem::path> thresholds;  // intervals; 0.5 when absent
};

struct DumpConfig {
  std::string split = "test";
  std::string recording;  // empty: first bag of the split
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/out";
  std::filesystem::path data;
  std::optional<SynthConfig> synth;
  LabelKind export_labels = LabelKind::Strong;
  ModelConfig model;  // feature_dim/classes are filled from the dataset
  ObjectiveSpec objective;
  TrainConfig train;
  EvaluateConfig evaluate;
  TuneConfig tune;
  DecodeConfig decode;
  DumpConfig dump;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Subcommands: gen-data, train, decode, evaluate, tune-thresholds,
// dump-frames. Throws Error on any failure; on return all artifacts have
// been written.
void run_subcommand(const std::string& name, const ExperimentConfig& config);

// Thresholds file helpers (rows: class-name <tab> threshold).
void save_thresholds(const ThresholdVector& thresholds,
                     const std::vector<std::string>& class_names,
                     const std::filesystem::path& path);
ThresholdVector load_thresholds(const std::filesystem::path& path,
                                const std::vector<std::string>& class_names);

}  // namespace milseq
