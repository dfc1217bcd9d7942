#pragma once

// Deterministic synthetic weakly-labeled sequence data. Each class owns a
// fixed orthonormal signature direction in feature space; events paint
// amplitude * signature over their frames on top of Gaussian background
// noise. Strong labels are generated; weak and sequential labels are always
// derived from them, never stored independently.
//
// On disk a dataset is a directory:
//   manifest.json              counts, class names, feature dim, frame rate,
//                              which label kind is persisted
//   <split>/features/<id>.bin  "MSQFEA01": magic, u64 rows, u64 cols,
//                              row-major f64 values (little-endian)
//   <split>/strong.tsv         id <tab> onset <tab> offset <tab> class-name
//   <split>/weak.tsv           id <tab> class-name   (weak-only exports)

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "milseq/decoder.hpp"
#include "milseq/objectives.hpp"
#include "milseq/types.hpp"

namespace milseq {

struct SynthConfig {
  int classes = 5;
  Index feature_dim = 16;
  Index frames = 100;       // per bag
  double frame_rate = 10.0;  // frames per second
  Index train_bags = 500;
  Index valid_bags = 100;
  Index test_bags = 100;
  Index min_event_frames = 10;
  Index max_event_frames = 30;
  Index min_events = 1;  // per bag
  Index max_events = 3;
  double noise_sigma = 0.3;
  double signal_amplitude = 1.0;
  bool allow_overlap = true;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& config);

// One training sequence with every label form attached.
struct Bag {
  std::string id;
  Mat features;                      // T x F
  std::vector<EventInterval> strong;  // seconds, sorted by (onset, class)
  WeakLabel weak;                    // derived from strong
  TokenSequence sequential;          // derived from strong, onset order
};

WeakLabel weak_from_strong(const std::vector<EventInterval>& strong);
TokenSequence sequential_from_strong(const std::vector<EventInterval>& strong);

// Which label form a persisted dataset carries. Generated datasets always
// hold strong labels in memory; a weak-only export drops the timing.
enum class LabelKind { Strong, WeakOnly };

struct Dataset {
  int classes = 0;
  Index feature_dim = 0;
  double frame_rate = 0.0;
  LabelKind labels = LabelKind::Strong;
  std::vector<std::string> class_names;
  std::vector<Bag> train, valid, test;
  // generator settings echoed into the manifest; absent for foreign datasets
  std::optional<SynthConfig> generator;

  const std::vector<Bag>& split(std::string_view name) const;
  double duration(const Bag& bag) const {
    return static_cast<double>(bag.features.rows()) / frame_rate;
  }
};

// Deterministic in the seed; each bag draws from its own seed stream derived
// from (seed, split, index), so splits are independent of each other's sizes.
Dataset generate(const SynthConfig& config);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                  LabelKind labels = LabelKind::Strong);
Dataset load_dataset(const std::filesystem::path& dir);

// Feature container helpers, exposed for tools and tests.
void save_features(const Mat& features, const std::filesystem::path& path);
Mat load_features(const std::filesystem::path& path);

}  // namespace milseq
