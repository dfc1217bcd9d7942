#include "milseq/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace milseq {

namespace {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0))
    throw Error(std::string(what) + ": probability " + std::to_string(p) + " outside [0,1]");
}

double convention_denominator(AveragingConvention convention, Index frames, Index classes) {
  switch (convention) {
    case AveragingConvention::Frames: return static_cast<double>(frames);
    case AveragingConvention::UtterancesAndClasses: return static_cast<double>(classes);
    case AveragingConvention::FramesAndClasses:
      return static_cast<double>(frames) * static_cast<double>(classes);
  }
  throw Error("bag_bce: unknown averaging convention");
}

void check_label(const WeakLabel& label, Index classes) {
  for (int c : label.present)
    if (c < 0 || c >= classes)
      throw Error("bag_bce: label class " + std::to_string(c) + " outside [0, " +
                  std::to_string(classes) + ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// Pooling, plain math
// ---------------------------------------------------------------------------

double pool_max(std::span<const double> frame_probs) {
  if (frame_probs.empty()) throw Error("pool_max: empty bag");
  double best = frame_probs[0];
  for (double p : frame_probs) {
    check_probability(p, "pool_max");
    best = std::max(best, p);
  }
  return best;
}

NoisyOrValue pool_noisy_or(std::span<const double> frame_probs) {
  if (frame_probs.empty()) throw Error("pool_noisy_or: empty bag");
  double log_complement = 0.0;
  for (double p : frame_probs) {
    check_probability(p, "pool_noisy_or");
    log_complement += std::log1p(-p);
  }
  return NoisyOrValue{-std::expm1(log_complement), log_complement};
}

BagPrediction pool_bag(const Mat& frame_probs, PoolKind kind) {
  if (frame_probs.rows() == 0) throw Error("pool_bag: empty bag");
  const Index classes = frame_probs.cols();
  BagPrediction bag{Mat(1, classes), Mat(1, classes)};
  std::vector<double> column(static_cast<std::size_t>(frame_probs.rows()));
  for (Index c = 0; c < classes; ++c) {
    for (Index r = 0; r < frame_probs.rows(); ++r)
      column[static_cast<std::size_t>(r)] = frame_probs(r, c);
    if (kind == PoolKind::Max) {
      const double y = pool_max(column);
      bag.values(0, c) = y;
      bag.log_complement(0, c) = std::log1p(-y);
    } else {
      const NoisyOrValue v = pool_noisy_or(column);
      bag.values(0, c) = v.value;
      bag.log_complement(0, c) = v.log_complement;
    }
  }
  return bag;
}

// ---------------------------------------------------------------------------
// Pooling on the tape
// ---------------------------------------------------------------------------

Var pool_max(Var frame_probs) { return colwise_max(frame_probs); }

Var pool_noisy_or_log_complement(Var frame_probs) {
  Tape* t = frame_probs.tape;
  const Index frames = t->value(frame_probs).rows();
  Var ones = t->constant(Mat::Ones(1, frames));
  return matmul(ones, log(one_minus(frame_probs)));
}

// ---------------------------------------------------------------------------
// Bag-level cross-entropy
// ---------------------------------------------------------------------------

Var bag_bce_from_values(Var bag_probs, const WeakLabel& label,
                        AveragingConvention convention, Index frames, LossStats* stats) {
  Tape* t = bag_probs.tape;
  const Mat& y = t->value(bag_probs);
  if (y.rows() != 1) throw Error("bag_bce: expected a 1xC bag prediction row");
  const Index classes = y.cols();
  check_label(label, classes);
  const double scale = 1.0 / convention_denominator(convention, frames, classes);

  double total = 0.0;
  for (Index c = 0; c < classes; ++c) {
    const bool present = label.has(static_cast<int>(c));
    const double arg = present ? y(0, c) : 1.0 - y(0, c);
    if (arg < kBceClamp && stats != nullptr) ++stats->clamp_count;
    total -= std::log(std::max(arg, kBceClamp));
  }
  Mat out(1, 1);
  out(0, 0) = total * scale;

  return t->record("bag_bce", std::move(out),
                   [bag_probs, label, scale, classes](const Mat& g, Tape& tp, Var) {
                     const Mat& yv = tp.value(bag_probs);
                     Mat dy = Mat::Zero(1, classes);
                     for (Index c = 0; c < classes; ++c) {
                       const bool present = label.has(static_cast<int>(c));
                       const double arg = present ? yv(0, c) : 1.0 - yv(0, c);
                       if (arg < kBceClamp) continue;  // clamped: flat region
                       dy(0, c) = (present ? -1.0 : 1.0) / arg;
                     }
                     tp.accumulate(bag_probs, g(0, 0) * scale * dy);
                   });
}

Var bag_bce_from_log_complement(Var log_complement, const WeakLabel& label,
                                AveragingConvention convention, Index frames,
                                LossStats* stats) {
  Tape* t = log_complement.tape;
  const Mat& lc = t->value(log_complement);
  if (lc.rows() != 1) throw Error("bag_bce: expected a 1xC log-complement row");
  const Index classes = lc.cols();
  check_label(label, classes);
  const double scale = 1.0 / convention_denominator(convention, frames, classes);

  double total = 0.0;
  for (Index c = 0; c < classes; ++c) {
    if (label.has(static_cast<int>(c))) {
      const double y = -std::expm1(lc(0, c));
      if (y < kBceClamp && stats != nullptr) ++stats->clamp_count;
      total -= std::log(std::max(y, kBceClamp));
    } else {
      total -= lc(0, c);
    }
  }
  Mat out(1, 1);
  out(0, 0) = total * scale;

  return t->record("bag_bce", std::move(out),
                   [log_complement, label, scale, classes](const Mat& g, Tape& tp, Var) {
                     const Mat& lv = tp.value(log_complement);
                     Mat dl(1, classes);
                     for (Index c = 0; c < classes; ++c) {
                       if (label.has(static_cast<int>(c))) {
                         const double y = -std::expm1(lv(0, c));
                         // d/dL of -log(1 - exp(L)) = exp(L) / (1 - exp(L))
                         dl(0, c) = y < kBceClamp ? 0.0 : (1.0 - y) / y;
                       } else {
                         dl(0, c) = -1.0;
                       }
                     }
                     tp.accumulate(log_complement, g(0, 0) * scale * dl);
                   });
}

// ---------------------------------------------------------------------------
// CTC
// ---------------------------------------------------------------------------

Index ctc_min_frames(std::span<const int> label) {
  Index repeats = 0;
  for (std::size_t i = 1; i < label.size(); ++i)
    if (label[i] == label[i - 1]) ++repeats;
  return static_cast<Index>(label.size()) + repeats;
}

double ctc_forward_backward(const Mat& log_probs, std::span<const int> label, Mat* occupancy) {
  const Index frames = log_probs.rows();
  const Index width = log_probs.cols();
  if (width < 2) throw Error("ctc: need at least one class plus blank");
  const int blank = static_cast<int>(width) - 1;
  for (int c : label)
    if (c < 0 || c >= blank)
      throw Error("ctc: label id " + std::to_string(c) + " outside [0, " +
                  std::to_string(blank) + ")");
  if (frames < ctc_min_frames(label))
    throw Error("ctc: label of length " + std::to_string(label.size()) + " needs at least " +
                std::to_string(ctc_min_frames(label)) + " frames, got " +
                std::to_string(frames) + " (loss is infinite)");

  // Extended state sequence: blank, l1, blank, l2, ..., blank.
  const Index states = 2 * static_cast<Index>(label.size()) + 1;
  const auto symbol = [&](Index s) -> int {
    return s % 2 == 1 ? label[static_cast<std::size_t>(s / 2)] : blank;
  };
  const auto can_skip = [&](Index s) {
    // A path may hop s-2 -> s when s is a label state differing from the
    // previous label state.
    return s >= 2 && s % 2 == 1 && symbol(s) != symbol(s - 2);
  };

  Mat alpha = Mat::Constant(frames, states, kLogZero);
  alpha(0, 0) = log_probs(0, blank);
  if (states > 1) alpha(0, 1) = log_probs(0, symbol(1));
  for (Index tt = 1; tt < frames; ++tt)
    for (Index s = 0; s < states; ++s) {
      double acc = alpha(tt - 1, s);
      if (s >= 1) acc = log_sum_exp(acc, alpha(tt - 1, s - 1));
      if (can_skip(s)) acc = log_sum_exp(acc, alpha(tt - 1, s - 2));
      alpha(tt, s) = acc == kLogZero ? kLogZero : acc + log_probs(tt, symbol(s));
    }

  const double log_z = states > 1
                           ? log_sum_exp(alpha(frames - 1, states - 1), alpha(frames - 1, states - 2))
                           : alpha(frames - 1, 0);
  if (log_z == kLogZero) throw Error("ctc: no feasible alignment (loss is infinite)");

  if (occupancy != nullptr) {
    // beta excludes the emission at its own frame, so alpha + beta is the
    // total log-weight of paths passing through (frame, state).
    Mat beta = Mat::Constant(frames, states, kLogZero);
    beta(frames - 1, states - 1) = 0.0;
    if (states > 1) beta(frames - 1, states - 2) = 0.0;
    for (Index tt = frames - 2; tt >= 0; --tt)
      for (Index s = 0; s < states; ++s) {
        double acc = beta(tt + 1, s) == kLogZero
                         ? kLogZero
                         : beta(tt + 1, s) + log_probs(tt + 1, symbol(s));
        if (s + 1 < states && beta(tt + 1, s + 1) != kLogZero)
          acc = log_sum_exp(acc, beta(tt + 1, s + 1) + log_probs(tt + 1, symbol(s + 1)));
        if (s + 2 < states && can_skip(s + 2) && beta(tt + 1, s + 2) != kLogZero)
          acc = log_sum_exp(acc, beta(tt + 1, s + 2) + log_probs(tt + 1, symbol(s + 2)));
        beta(tt, s) = acc;
      }
    *occupancy = Mat::Zero(frames, width);
    for (Index tt = 0; tt < frames; ++tt)
      for (Index s = 0; s < states; ++s) {
        if (alpha(tt, s) == kLogZero || beta(tt, s) == kLogZero) continue;
        (*occupancy)(tt, symbol(s)) += std::exp(alpha(tt, s) + beta(tt, s) - log_z);
      }
  }
  return -log_z;
}

Var ctc_loss(Var log_probs, const std::vector<int>& label) {
  Tape* t = log_probs.tape;
  Mat gamma;
  const double nll = ctc_forward_backward(t->value(log_probs), label, &gamma);
  Mat out(1, 1);
  out(0, 0) = nll;
  return t->record("ctc_loss", std::move(out),
                   [log_probs, gamma](const Mat& g, Tape& tp, Var) {
                     tp.accumulate(log_probs, -g(0, 0) * gamma);
                   });
}

}  // namespace milseq
