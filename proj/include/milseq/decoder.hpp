#pragma once

// Frame predictions to symbols: best path decoding for CTC and for weak
// sigmoid heads (most probable class, blanked below 0.5), and threshold-based
// extraction of event intervals for detection tasks.

#include <vector>

#include "milseq/types.hpp"

namespace milseq {

// Ordered class ids with no blanks.
using TokenSequence = std::vector<int>;

struct EventInterval {
  int class_id = 0;
  double onset = 0.0;   // seconds, inclusive
  double offset = 0.0;  // seconds, exclusive
};

// Per-class decision thresholds in [0,1].
using ThresholdVector = std::vector<double>;

// Collapses consecutive duplicates, then removes `blank` (pass -1 to keep
// everything). The duplicate collapse alone is idempotent; stripping blanks
// can expose new adjacent duplicates, which is what lets a blank separate
// repeated tokens.
TokenSequence collapse_and_strip(const std::vector<int>& frame_labels, int blank);

// Per-frame argmax over C+1 columns (blank is the last column), collapse
// duplicates, strip blanks. Ties go to the lowest class id.
TokenSequence best_path_decode_ctc(const Mat& probs);

// Sigmoid-head variant: a frame is blank when its most probable class falls
// below 0.5; otherwise the argmax class. Then collapse and strip.
TokenSequence best_path_decode_weak(const Mat& probs);

// Maximal runs of frames with probs(t,c) >= thresholds[c] become intervals
// [start/rate, (end+1)/rate) per class, sorted by onset.
std::vector<EventInterval> intervals_from_frames(const Mat& probs,
                                                 const ThresholdVector& thresholds,
                                                 double frame_rate);

}  // namespace milseq
