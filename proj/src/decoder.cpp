#include "milseq/decoder.hpp"

#include <string>

namespace milseq {

namespace {

int argmax_row(const Mat& probs, Index row) {
  int best = 0;
  for (Index c = 1; c < probs.cols(); ++c)
    if (probs(row, c) > probs(row, best)) best = static_cast<int>(c);
  return best;
}

}  // namespace

TokenSequence collapse_and_strip(const std::vector<int>& frame_labels, int blank) {
  TokenSequence out;
  int previous = -2;  // differs from every class id and from blank == -1
  for (int label : frame_labels) {
    if (label != previous && label != blank) out.push_back(label);
    previous = label;
  }
  return out;
}

TokenSequence best_path_decode_ctc(const Mat& probs) {
  const int blank = static_cast<int>(probs.cols()) - 1;
  std::vector<int> frame_labels;
  frame_labels.reserve(static_cast<std::size_t>(probs.rows()));
  for (Index r = 0; r < probs.rows(); ++r) frame_labels.push_back(argmax_row(probs, r));
  return collapse_and_strip(frame_labels, blank);
}

TokenSequence best_path_decode_weak(const Mat& probs) {
  const int blank = static_cast<int>(probs.cols());  // one past the last class
  std::vector<int> frame_labels;
  frame_labels.reserve(static_cast<std::size_t>(probs.rows()));
  for (Index r = 0; r < probs.rows(); ++r) {
    const int best = argmax_row(probs, r);
    frame_labels.push_back(probs(r, best) >= 0.5 ? best : blank);
  }
  return collapse_and_strip(frame_labels, blank);
}

std::vector<EventInterval> intervals_from_frames(const Mat& probs,
                                                 const ThresholdVector& thresholds,
                                                 double frame_rate) {
  if (static_cast<Index>(thresholds.size()) != probs.cols())
    throw Error("intervals_from_frames: expected " + std::to_string(probs.cols()) +
                " thresholds, got " + std::to_string(thresholds.size()));
  if (!(frame_rate > 0.0)) throw Error("intervals_from_frames: frame rate must be positive");

  std::vector<EventInterval> intervals;
  for (Index c = 0; c < probs.cols(); ++c) {
    const double threshold = thresholds[static_cast<std::size_t>(c)];
    Index run_start = -1;
    for (Index r = 0; r <= probs.rows(); ++r) {
      const bool active = r < probs.rows() && probs(r, c) >= threshold;
      if (active && run_start < 0) run_start = r;
      if (!active && run_start >= 0) {
        intervals.push_back(EventInterval{static_cast<int>(c),
                                          static_cast<double>(run_start) / frame_rate,
                                          static_cast<double>(r) / frame_rate});
        run_start = -1;
      }
    }
  }
  return intervals;
}

}  // namespace milseq
