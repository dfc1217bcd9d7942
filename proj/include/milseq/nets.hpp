#pragma once

// Instance-level classifiers: an optional convolutional front end with
// time-axis downsampling, a bidirectional gated-recurrent body, and a
// per-frame sigmoid or softmax head.
//
// Sequence lengths are truncated down to a multiple of the total pooling
// factor before the conv stack runs; the discarded tail is at most
// total_pool_factor - 1 frames.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "milseq/params.hpp"
#include "milseq/rng.hpp"
#include "milseq/tape.hpp"
#include "milseq/types.hpp"

namespace milseq {

struct ConvLayerConfig {
  Index kernel = 3;    // taps along the time axis
  Index channels = 8;  // output feature width
  Index pool = 1;      // time max-pooling factor after the activation
};

enum class HeadKind { Sigmoid, Softmax };

struct ModelConfig {
  Index feature_dim = 0;  // F
  Index classes = 0;      // C
  std::vector<ConvLayerConfig> conv;
  std::vector<Index> recurrent;  // hidden width per direction, one entry per layer
  HeadKind head = HeadKind::Sigmoid;
  double dropout = 0.0;  // applied to recurrent-layer outputs while training
};

void validate(const ModelConfig& config);
Index total_pool_factor(const ModelConfig& config);
// Sigmoid heads emit C columns; softmax heads emit C+1 (classes plus blank).
Index head_width(const ModelConfig& config);

// Per-frame, per-class probabilities after downsampling.
struct FramePredictions {
  Mat values;               // T' x head width, all entries in [0,1]
  double frame_rate = 0.0;  // frames per second after downsampling
  Index frames() const { return values.rows(); }
  Index classes() const { return values.cols(); }
};

// Glorot-uniform weights (bound sqrt(6/(rows+cols)) per matrix), zero biases.
// Deterministic in (config, seed).
ParamSet init_parameters(const ModelConfig& config, std::uint64_t seed);

// Registers every entry of `params` on the tape under its own name.
std::map<std::string, Var> attach_params(Tape& tape, const ParamSet& params);

// Builds the frame-output graph on `tape`. Sigmoid heads yield T'xC
// probabilities; softmax heads yield T'x(C+1) log-probabilities (feed to
// ctc_loss, exponentiate for FramePredictions). `dropout_rng` must be
// provided when training with a nonzero dropout rate.
Var build_frame_outputs(Tape& tape, const ModelConfig& config,
                        const std::map<std::string, Var>& params, const Mat& features,
                        bool training = false, Rng* dropout_rng = nullptr);

// Convenience inference path: runs build_frame_outputs on a throwaway tape
// and converts to probabilities.
FramePredictions forward(const ModelConfig& config, const ParamSet& params,
                         const Mat& features, double input_frame_rate,
                         bool training = false, Rng* dropout_rng = nullptr);

}  // namespace milseq
