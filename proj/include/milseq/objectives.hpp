#pragma once

// Bag-level objectives for weakly labeled sequence training: max and
// noisy-or pooling, bag-level cross-entropy with selectable loss averaging,
// and a CTC loss for the sequential-label baseline.
//
// Noisy-or is kept in log-complement form end to end. The bag complement
// 1 - y = prod(1 - y_i) underflows long before the per-frame complements do
// (130 frames at 0.2 already give 2.5e-13), so the absent-class loss
// -log(1 - y) is only computable as -sum(log(1 - y_i)).

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "milseq/tape.hpp"
#include "milseq/types.hpp"

namespace milseq {

// Presence/absence labeling: the set of classes occurring in a bag.
struct WeakLabel {
  std::set<int> present;
  bool has(int c) const { return present.count(c) != 0; }
};

enum class PoolKind { Max, NoisyOr };

// Denominator convention for the bag cross-entropy. The batch mean over bags
// is always applied by the caller; this selects the per-bag denominator.
enum class AveragingConvention {
  Frames,                 // divide by the bag's frame count
  UtterancesAndClasses,   // divide by the class count
  FramesAndClasses,       // divide by frames * classes
};

// Bag-level probabilities with their log-complements, one column per class.
struct BagPrediction {
  Mat values;          // 1xC in [0,1]
  Mat log_complement;  // 1xC, log(1 - y); -inf when y == 1
};

struct LossStats {
  std::uint64_t clamp_count = 0;
};

// Loss logs are clamped at this value; each clamp is counted in LossStats.
inline constexpr double kBceClamp = 1e-12;

// ---------------------------------------------------------------------------
// Pooling, plain math. One class at a time, probabilities in [0,1].
// ---------------------------------------------------------------------------

double pool_max(std::span<const double> frame_probs);

struct NoisyOrValue {
  double value = 0.0;
  double log_complement = 0.0;
};
// log_complement = sum_i log(1 - y_i), accumulated in log space;
// value = 1 - exp(log_complement) via expm1.
NoisyOrValue pool_noisy_or(std::span<const double> frame_probs);

// Column-wise pooling of a T'xC frame-probability matrix.
BagPrediction pool_bag(const Mat& frame_probs, PoolKind kind);

// ---------------------------------------------------------------------------
// Pooling on the tape.
// ---------------------------------------------------------------------------

// Max pooling: gradient reaches exactly one argmax frame per class.
Var pool_max(Var frame_probs);

// Noisy-or pooling in log-complement form: returns the 1xC row of
// log(1 - y_c) = sum_i log(1 - y_ic). Gradient reaches every frame. The
// per-frame complements pass through the tape's log primitive, so frames at
// exactly 1 hit the kLogFloor clamp instead of producing -inf.
Var pool_noisy_or_log_complement(Var frame_probs);

// ---------------------------------------------------------------------------
// Bag-level cross-entropy. `frames` is the bag's frame count T' used by the
// Frames conventions; the class count is the input's column count.
// ---------------------------------------------------------------------------

// From bag probabilities (max-pooling route). Per class: -log y if present,
// -log(1 - y) if absent, log arguments clamped at kBceClamp.
Var bag_bce_from_values(Var bag_probs, const WeakLabel& label,
                        AveragingConvention convention, Index frames,
                        LossStats* stats = nullptr);

// From log-complements (noisy-or route). The absent-class term -log(1 - y)
// is exactly -log_complement; the present-class term recovers
// y = -expm1(log_complement) and clamps it at kBceClamp.
Var bag_bce_from_log_complement(Var log_complement, const WeakLabel& label,
                                AveragingConvention convention, Index frames,
                                LossStats* stats = nullptr);

// ---------------------------------------------------------------------------
// CTC. Labels are class ids in [0, C); the blank token is column C (the last
// column) of the T'x(C+1) log-probability matrix.
// ---------------------------------------------------------------------------

// Fewest frames that can emit `label`: its length plus one separating blank
// per adjacent repeat.
Index ctc_min_frames(std::span<const int> label);

// Forward-backward negative log-likelihood over all alignments that collapse
// to `label`. If `occupancy` is non-null it receives the T'x(C+1) posterior
// symbol occupancy gamma; the gradient of the NLL w.r.t. the log-probability
// entries is -gamma. Throws when the label cannot fit in the frame count.
double ctc_forward_backward(const Mat& log_probs, std::span<const int> label,
                            Mat* occupancy = nullptr);

Var ctc_loss(Var log_probs, const std::vector<int>& label);

}  // namespace milseq
