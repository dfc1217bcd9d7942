#include "milseq/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "milseq/rng.hpp"

namespace milseq {

namespace {

double f1_percent(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const std::uint64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 100.0 * 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

EditCounts edit_distance(const TokenSequence& ref, const TokenSequence& hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  Mat cost(n + 1, m + 1);
  for (std::size_t i = 0; i <= n; ++i) cost(static_cast<Index>(i), 0) = static_cast<double>(i);
  for (std::size_t j = 0; j <= m; ++j) cost(0, static_cast<Index>(j)) = static_cast<double>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const double sub = cost(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0.0 : 1.0);
      const double del = cost(i - 1, j) + 1.0;
      const double ins = cost(i, j - 1) + 1.0;
      cost(i, j) = std::min({sub, del, ins});
    }

  EditCounts counts;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const double here = cost(i, j);
    if (i > 0 && j > 0 &&
        here == cost(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0.0 : 1.0)) {
      if (ref[i - 1] != hyp[j - 1]) ++counts.substitutions;
      --i, --j;
    } else if (i > 0 && here == cost(i - 1, j) + 1.0) {
      ++counts.deletions;
      --i;
    } else {
      ++counts.insertions;
      --j;
    }
  }
  return counts;
}

double phone_error_rate(const std::vector<std::pair<TokenSequence, TokenSequence>>& pairs) {
  Index edits = 0;
  Index ref_length = 0;
  for (const auto& [ref, hyp] : pairs) {
    edits += edit_distance(ref, hyp).total();
    ref_length += static_cast<Index>(ref.size());
  }
  if (ref_length == 0) throw Error("phone_error_rate: every reference is empty");
  return 100.0 * static_cast<double>(edits) / static_cast<double>(ref_length);
}

double tagging_f1(const std::vector<Mat>& bag_scores, const ThresholdVector& thresholds,
                  const std::vector<WeakLabel>& refs) {
  if (bag_scores.size() != refs.size())
    throw Error("tagging_f1: scores and references differ in length");
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < bag_scores.size(); ++i) {
    const Mat& scores = bag_scores[i];
    if (static_cast<std::size_t>(scores.cols()) != thresholds.size())
      throw Error("tagging_f1: threshold count does not match class count");
    for (Index c = 0; c < scores.cols(); ++c) {
      const bool predicted = scores(0, c) >= thresholds[static_cast<std::size_t>(c)];
      const bool actual = refs[i].has(static_cast<int>(c));
      tp += predicted && actual;
      fp += predicted && !actual;
      fn += !predicted && actual;
    }
  }
  return f1_percent(tp, fp, fn);
}

namespace {

// Per-recording activity grids: segments x classes flags.
std::vector<std::vector<char>> activity_grid(const std::vector<EventInterval>& intervals,
                                             Index segments, int classes,
                                             double segment_length) {
  std::vector<std::vector<char>> grid(static_cast<std::size_t>(segments),
                                      std::vector<char>(static_cast<std::size_t>(classes), 0));
  for (const auto& event : intervals) {
    if (event.class_id < 0 || event.class_id >= classes)
      throw Error("segment_metrics: interval class id out of range");
    for (Index s = 0; s < segments; ++s) {
      const double lo = static_cast<double>(s) * segment_length;
      const double hi = lo + segment_length;
      if (event.onset < hi && event.offset > lo)
        grid[static_cast<std::size_t>(s)][static_cast<std::size_t>(event.class_id)] = 1;
    }
  }
  return grid;
}

}  // namespace

SegmentMetrics segment_metrics(const std::vector<std::vector<EventInterval>>& hyps,
                               const std::vector<std::vector<EventInterval>>& refs,
                               const std::vector<double>& durations, int classes,
                               double segment_length) {
  if (hyps.size() != refs.size() || hyps.size() != durations.size())
    throw Error("segment_metrics: hyps, refs and durations differ in length");
  SegmentMetrics out;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (!(durations[i] > 0.0)) throw Error("segment_metrics: duration must be positive");
    const auto segments = static_cast<Index>(std::ceil(durations[i] / segment_length));
    const auto ref_grid = activity_grid(refs[i], segments, classes, segment_length);
    const auto hyp_grid = activity_grid(hyps[i], segments, classes, segment_length);
    for (Index s = 0; s < segments; ++s) {
      std::uint64_t seg_tp = 0, seg_fp = 0, seg_fn = 0, seg_n = 0;
      for (int c = 0; c < classes; ++c) {
        const bool r = ref_grid[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] != 0;
        const bool h = hyp_grid[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] != 0;
        seg_n += r;
        seg_tp += r && h;
        seg_fp += !r && h;
        seg_fn += r && !h;
      }
      out.refs += seg_n;
      out.tp += seg_tp;
      out.fp += seg_fp;
      out.fn += seg_fn;
      out.substitutions += std::min(seg_fn, seg_fp);
      out.deletions += seg_fn - std::min(seg_fn, seg_fp);
      out.insertions += seg_fp - std::min(seg_fn, seg_fp);
    }
  }
  if (out.refs == 0) throw Error("segment_metrics: no reference activity in the corpus");
  out.error_rate = 100.0 *
                   static_cast<double>(out.substitutions + out.deletions + out.insertions) /
                   static_cast<double>(out.refs);
  out.f1 = f1_percent(out.tp, out.fp, out.fn);
  return out;
}

// ---------------------------------------------------------------------------
// Threshold tuning
// ---------------------------------------------------------------------------

std::vector<double> threshold_candidates(std::vector<double> scores) {
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  std::vector<double> candidates{0.0};
  for (std::size_t i = 1; i < scores.size(); ++i)
    candidates.push_back(0.5 * (scores[i - 1] + scores[i]));
  candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  return candidates;
}

ThresholdVector tune_thresholds(const TuneProblem& problem, std::uint64_t seed) {
  if (problem.classes <= 0) throw Error("tune_thresholds: no classes");
  if (static_cast<int>(problem.scores.size()) != problem.classes)
    throw Error("tune_thresholds: need one score list per class");

  std::vector<std::vector<double>> candidates;
  candidates.reserve(problem.scores.size());
  for (const auto& scores : problem.scores) candidates.push_back(threshold_candidates(scores));

  // Phase 1: class-wise F1, larger threshold on ties.
  ThresholdVector thresholds(static_cast<std::size_t>(problem.classes), 1.0);
  for (int c = 0; c < problem.classes; ++c) {
    double best_f1 = -1.0;
    for (double t : candidates[static_cast<std::size_t>(c)]) {
      const double f1 = problem.class_f1(c, t);
      if (f1 >= best_f1) {
        best_f1 = f1;
        thresholds[static_cast<std::size_t>(c)] = t;
      }
    }
  }

  // Phase 2: random single-class re-tuning against the micro objective until
  // a full pass over all classes accepts nothing.
  Rng rng(seed);
  double current = problem.micro_f1(thresholds);
  std::vector<int> order(static_cast<std::size_t>(problem.classes));
  std::iota(order.begin(), order.end(), 0);
  bool improved = true;
  while (improved) {
    improved = false;
    rng.shuffle(order);
    for (int c : order) {
      const double saved = thresholds[static_cast<std::size_t>(c)];
      double best_t = saved;
      double best_f1 = current;
      for (double t : candidates[static_cast<std::size_t>(c)]) {
        thresholds[static_cast<std::size_t>(c)] = t;
        const double f1 = problem.micro_f1(thresholds);
        if (f1 > best_f1 || (f1 == best_f1 && best_t != saved && t > best_t)) {
          best_f1 = f1;
          best_t = t;
        }
      }
      thresholds[static_cast<std::size_t>(c)] = best_t;
      if (best_f1 > current) {
        current = best_f1;
        improved = true;
      }
    }
  }
  return thresholds;
}

TuneProblem make_tagging_problem(const std::vector<Mat>& bag_scores,
                                 const std::vector<WeakLabel>& refs) {
  if (bag_scores.empty()) throw Error("make_tagging_problem: no recordings");
  if (bag_scores.size() != refs.size())
    throw Error("make_tagging_problem: scores and references differ in length");
  const int classes = static_cast<int>(bag_scores[0].cols());
  bool any_positive = false;
  for (const auto& label : refs) any_positive = any_positive || !label.present.empty();
  if (!any_positive) throw Error("make_tagging_problem: no positive reference labels");

  TuneProblem problem;
  problem.classes = classes;
  problem.scores.resize(static_cast<std::size_t>(classes));
  for (const Mat& row : bag_scores)
    for (Index c = 0; c < row.cols(); ++c)
      problem.scores[static_cast<std::size_t>(c)].push_back(row(0, c));

  auto scores = std::make_shared<std::vector<Mat>>(bag_scores);
  auto labels = std::make_shared<std::vector<WeakLabel>>(refs);
  problem.class_f1 = [scores, labels](int c, double threshold) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores->size(); ++i) {
      const bool predicted = (*scores)[i](0, c) >= threshold;
      const bool actual = (*labels)[i].has(c);
      tp += predicted && actual;
      fp += predicted && !actual;
      fn += !predicted && actual;
    }
    return f1_percent(tp, fp, fn);
  };
  problem.micro_f1 = [scores, labels](const ThresholdVector& thresholds) {
    return tagging_f1(*scores, thresholds, *labels);
  };
  return problem;
}

TuneProblem make_segment_problem(const std::vector<Mat>& frame_probs,
                                 const std::vector<std::vector<EventInterval>>& refs,
                                 const std::vector<double>& durations, double frame_rate,
                                 int classes, double segment_length) {
  if (frame_probs.empty()) throw Error("make_segment_problem: no recordings");
  if (frame_probs.size() != refs.size() || frame_probs.size() != durations.size())
    throw Error("make_segment_problem: input lists differ in length");

  // Per recording: segments x classes grids of reference activity and of the
  // maximum frame score touching the segment. Thresholding the max-score grid
  // reproduces interval extraction followed by overlap testing.
  struct Precomputed {
    std::vector<std::vector<std::vector<char>>> ref_grids;
    std::vector<Mat> max_scores;  // segments x classes
    std::uint64_t total_refs = 0;
  };
  auto pre = std::make_shared<Precomputed>();
  for (std::size_t i = 0; i < frame_probs.size(); ++i) {
    if (!(durations[i] > 0.0)) throw Error("make_segment_problem: duration must be positive");
    const auto segments = static_cast<Index>(std::ceil(durations[i] / segment_length));
    pre->ref_grids.push_back(activity_grid(refs[i], segments, classes, segment_length));
    for (const auto& row : pre->ref_grids.back())
      for (char flag : row) pre->total_refs += flag != 0;
    Mat grid = Mat::Constant(segments, classes, -1.0);
    const Mat& probs = frame_probs[i];
    for (Index f = 0; f < probs.rows(); ++f) {
      const double lo = static_cast<double>(f) / frame_rate;
      const double hi = static_cast<double>(f + 1) / frame_rate;
      for (Index s = 0; s < segments; ++s) {
        const double seg_lo = static_cast<double>(s) * segment_length;
        if (lo < seg_lo + segment_length && hi > seg_lo)
          for (Index c = 0; c < probs.cols(); ++c)
            grid(s, c) = std::max(grid(s, c), probs(f, c));
      }
    }
    pre->max_scores.push_back(std::move(grid));
  }
  if (pre->total_refs == 0) throw Error("make_segment_problem: no reference activity");

  TuneProblem problem;
  problem.classes = classes;
  problem.scores.resize(static_cast<std::size_t>(classes));
  for (const Mat& probs : frame_probs)
    for (Index f = 0; f < probs.rows(); ++f)
      for (Index c = 0; c < probs.cols(); ++c)
        problem.scores[static_cast<std::size_t>(c)].push_back(probs(f, c));

  problem.class_f1 = [pre](int c, double threshold) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pre->max_scores.size(); ++i)
      for (Index s = 0; s < pre->max_scores[i].rows(); ++s) {
        const bool predicted = pre->max_scores[i](s, c) >= threshold;
        const bool actual =
            pre->ref_grids[i][static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] != 0;
        tp += predicted && actual;
        fp += predicted && !actual;
        fn += !predicted && actual;
      }
    return f1_percent(tp, fp, fn);
  };
  problem.micro_f1 = [pre, classes](const ThresholdVector& thresholds) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pre->max_scores.size(); ++i)
      for (Index s = 0; s < pre->max_scores[i].rows(); ++s)
        for (int c = 0; c < classes; ++c) {
          const bool predicted =
              pre->max_scores[i](s, c) >= thresholds[static_cast<std::size_t>(c)];
          const bool actual =
              pre->ref_grids[i][static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] != 0;
          tp += predicted && actual;
          fp += predicted && !actual;
          fn += !predicted && actual;
        }
    return f1_percent(tp, fp, fn);
  };
  return problem;
}

}  // namespace milseq
