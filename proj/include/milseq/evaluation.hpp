#pragma once

// Metrics and threshold tuning: edit-distance phone error rate, micro-averaged
// tagging F1, 1-second segment-based ER/F1, and the two-phase iterative
// class-specific threshold tuner.

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "milseq/decoder.hpp"
#include "milseq/objectives.hpp"
#include "milseq/types.hpp"

namespace milseq {

struct EditCounts {
  Index substitutions = 0;
  Index deletions = 0;
  Index insertions = 0;
  Index total() const { return substitutions + deletions + insertions; }
};

// Minimal-cost alignment with unit costs. Backtrace ties prefer substitution
// over deletion over insertion.
EditCounts edit_distance(const TokenSequence& ref, const TokenSequence& hyp);

// Micro phone error rate over a corpus: 100 * (S + D + I) / total reference
// length. Throws when every reference is empty.
double phone_error_rate(const std::vector<std::pair<TokenSequence, TokenSequence>>& pairs);

// Micro tagging F1 over all (recording, class) pairs; a class is predicted
// present when its bag score >= its threshold. 100 * 2TP / (2TP + FP + FN),
// zero when the denominator is zero.
double tagging_f1(const std::vector<Mat>& bag_scores, const ThresholdVector& thresholds,
                  const std::vector<WeakLabel>& refs);

// Segment-based detection metrics. Per segment the reference count is N and
// the per-segment decomposition is S = min(FN, FP), D = max(0, FN - FP),
// I = max(0, FP - FN); ER = 100 * (sum S + D + I) / (sum N), which can exceed
// 100, and F1 is micro over all segment-class decisions.
struct SegmentMetrics {
  double error_rate = 0.0;
  double f1 = 0.0;
  std::uint64_t refs = 0;  // total reference activations (sum N)
  std::uint64_t tp = 0, fp = 0, fn = 0;
  std::uint64_t substitutions = 0, deletions = 0, insertions = 0;
};

// One entry per recording; a short final segment still counts whole.
SegmentMetrics segment_metrics(const std::vector<std::vector<EventInterval>>& hyps,
                               const std::vector<std::vector<EventInterval>>& refs,
                               const std::vector<double>& durations, int classes,
                               double segment_length = 1.0);

// ---------------------------------------------------------------------------
// Threshold tuning
// ---------------------------------------------------------------------------

// Candidate thresholds for a class: midpoints of consecutive sorted unique
// scores plus the sentinels 0 and 1. A step-function argument makes the
// optimum over this finite set equal the optimum over all real thresholds.
std::vector<double> threshold_candidates(std::vector<double> scores);

// What the tuner optimizes. `scores[c]` feeds candidate generation;
// `class_f1(c, t)` scores class c alone; `micro_f1` scores a full vector.
struct TuneProblem {
  int classes = 0;
  std::vector<std::vector<double>> scores;
  std::function<double(int, double)> class_f1;
  std::function<double(const ThresholdVector&)> micro_f1;
};

// Phase 1 tunes each class to maximize its class-wise F1. Phase 2 visits the
// classes in seeded random order, line-searching one class at a time against
// the micro objective and accepting strict improvements, until a full pass
// makes no change. F1 ties prefer the larger threshold, so uninformative
// classes end at a threshold above all of their scores.
ThresholdVector tune_thresholds(const TuneProblem& problem, std::uint64_t seed);

// Tagging objective over bag-level scores.
TuneProblem make_tagging_problem(const std::vector<Mat>& bag_scores,
                                 const std::vector<WeakLabel>& refs);

// Segment-F1 objective over frame-level scores, used for oracle analysis of
// detection performance. Equivalent to thresholding intervals and recounting
// segments, but evaluated from per-segment maximum frame scores.
TuneProblem make_segment_problem(const std::vector<Mat>& frame_probs,
                                 const std::vector<std::vector<EventInterval>>& refs,
                                 const std::vector<double>& durations, double frame_rate,
                                 int classes, double segment_length = 1.0);

}  // namespace milseq
