#pragma once

// Test-only oracles, all independent of the implementation paths they check:
// central finite differences for gradients, exhaustive path enumeration for
// CTC, exhaustive-search alignment cost, and a naive segment recount.

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "milseq/decoder.hpp"
#include "milseq/evaluation.hpp"
#include "milseq/nets.hpp"
#include "milseq/params.hpp"
#include "milseq/rng.hpp"
#include "milseq/tape.hpp"
#include "milseq/types.hpp"

namespace oracles {

inline milseq::Mat random_mat(milseq::Index rows, milseq::Index cols, milseq::Rng& rng,
                              double lo = -2.0, double hi = 2.0) {
  milseq::Mat m(rows, cols);
  for (milseq::Index r = 0; r < rows; ++r)
    for (milseq::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  return m;
}

// Away from zero, for kink-free relu checks.
inline milseq::Mat random_mat_gapped(milseq::Index rows, milseq::Index cols, milseq::Rng& rng,
                                     double gap = 0.05) {
  milseq::Mat m(rows, cols);
  for (milseq::Index r = 0; r < rows; ++r)
    for (milseq::Index c = 0; c < cols; ++c) {
      const double magnitude = rng.uniform(gap, 2.0);
      m(r, c) = rng.uniform() < 0.5 ? -magnitude : magnitude;
    }
  return m;
}

// Entries pairwise separated within each column, for stable argmaxes.
inline milseq::Mat random_mat_separated(milseq::Index rows, milseq::Index cols,
                                        milseq::Rng& rng) {
  milseq::Mat m(rows, cols);
  for (milseq::Index c = 0; c < cols; ++c) {
    while (true) {
      for (milseq::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-2.0, 2.0);
      bool ok = true;
      for (milseq::Index a = 0; a < rows; ++a)
        for (milseq::Index b = a + 1; b < rows; ++b)
          ok = ok && std::fabs(m(a, c) - m(b, c)) > 0.01;
      if (ok) break;
    }
  }
  return m;
}

using GraphFn =
    std::function<milseq::Var(milseq::Tape&, const std::map<std::string, milseq::Var>&)>;

// L2 relative error between the tape gradient of fn and central finite
// differences over every element of `at`, denominator guarded.
inline double fd_rel_error(const milseq::ParamSet& at, const GraphFn& fn, double step = 1e-4,
                           double guard = 1e-8) {
  using namespace milseq;
  Tape tape;
  auto vars = attach_params(tape, at);
  GradientMap analytic = tape.backward(fn(tape, vars));

  const auto eval = [&](const ParamSet& p) {
    Tape probe;
    auto pv = attach_params(probe, p);
    return probe.value(fn(probe, pv))(0, 0);
  };

  double diff2 = 0.0, analytic2 = 0.0, numeric2 = 0.0;
  ParamSet work = at;
  for (const auto& name : at.names()) {
    const Mat& base = at.at(name);
    for (Index r = 0; r < base.rows(); ++r)
      for (Index c = 0; c < base.cols(); ++c) {
        work.at(name)(r, c) = base(r, c) + step;
        const double up = eval(work);
        work.at(name)(r, c) = base(r, c) - step;
        const double down = eval(work);
        work.at(name)(r, c) = base(r, c);
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic.at(name)(r, c);
        diff2 += (a - numeric) * (a - numeric);
        analytic2 += a * a;
        numeric2 += numeric * numeric;
      }
  }
  return std::sqrt(diff2) / std::max(guard, std::sqrt(analytic2) + std::sqrt(numeric2));
}

// Probabilities with per-column pairwise gaps, so max-pooling argmaxes stay
// put under finite-difference steps.
inline milseq::Mat random_probs_separated(milseq::Index rows, milseq::Index cols,
                                          milseq::Rng& rng, double lo = 0.05,
                                          double hi = 0.9) {
  milseq::Mat m(rows, cols);
  for (milseq::Index c = 0; c < cols; ++c) {
    while (true) {
      for (milseq::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(lo, hi);
      bool ok = true;
      for (milseq::Index a = 0; a < rows; ++a)
        for (milseq::Index b = a + 1; b < rows; ++b)
          ok = ok && std::fabs(m(a, c) - m(b, c)) > 0.005;
      if (ok) break;
    }
  }
  return m;
}

// Random well-conditioned inputs for one primitive, for gradient sweeps.
struct PrimitiveCase {
  milseq::ParamSet inputs;
  milseq::PrimitiveAttrs attrs;
};

inline PrimitiveCase make_primitive_case(milseq::Primitive kind, milseq::Rng& rng) {
  using namespace milseq;
  PrimitiveCase c;
  switch (kind) {
    case Primitive::MatMul:
      c.inputs.add("a", random_mat(3, 4, rng));
      c.inputs.add("b", random_mat(4, 2, rng));
      break;
    case Primitive::Add:
    case Primitive::Sub:
    case Primitive::CMul:
      c.inputs.add("a", random_mat(3, 4, rng));
      c.inputs.add("b", random_mat(3, 4, rng));
      break;
    case Primitive::Scale:
      c.inputs.add("a", random_mat(3, 4, rng));
      c.attrs.scalar = rng.uniform(-2.0, 2.0);
      break;
    case Primitive::AddRowVec:
      c.inputs.add("a", random_mat(3, 4, rng));
      c.inputs.add("b", random_mat(1, 4, rng));
      break;
    case Primitive::Affine:
      c.inputs.add("a", random_mat(3, 4, rng));
      c.inputs.add("b", random_mat(4, 2, rng));
      c.inputs.add("c", random_mat(1, 2, rng));
      break;
    case Primitive::Sigmoid:
    case Primitive::Tanh:
      c.inputs.add("a", random_mat(3, 4, rng, -3.0, 3.0));
      break;
    case Primitive::Relu:
      c.inputs.add("a", random_mat_gapped(3, 4, rng));
      break;
    case Primitive::OneMinus:
    case Primitive::Sum:
    case Primitive::SoftmaxRows:
    case Primitive::LogSoftmaxRows:
      c.inputs.add("a", random_mat(3, 4, rng));
      break;
    case Primitive::Log:
      c.inputs.add("a", random_mat(3, 4, rng, 0.1, 3.0));
      break;
    case Primitive::ConcatRows:
      c.inputs.add("a", random_mat(2, 3, rng));
      c.inputs.add("b", random_mat(4, 3, rng));
      break;
    case Primitive::ConcatCols:
      c.inputs.add("a", random_mat(3, 2, rng));
      c.inputs.add("b", random_mat(3, 3, rng));
      break;
    case Primitive::SliceRows:
      c.inputs.add("a", random_mat(5, 3, rng));
      c.attrs.first = 1;
      c.attrs.count = 3;
      break;
    case Primitive::TimeMaxPool:
      c.inputs.add("a", random_mat_separated(6, 3, rng));
      c.attrs.factor = 2;
      break;
    case Primitive::ColwiseMax:
      c.inputs.add("a", random_mat_separated(5, 3, rng));
      break;
  }
  return c;
}

// Scalar probe loss: sum(probe .* primitive(inputs)).
inline GraphFn primitive_probe_loss(milseq::Primitive kind, milseq::PrimitiveAttrs attrs,
                                    milseq::Mat probe) {
  return [kind, attrs, probe](milseq::Tape& tape,
                              const std::map<std::string, milseq::Var>& vars) {
    std::vector<milseq::Var> inputs;
    for (const auto& [name, var] : vars) inputs.push_back(var);
    milseq::Var out = milseq::apply_primitive(kind, inputs, attrs);
    return milseq::sum(milseq::cmul(tape.constant(probe), out));
  };
}

inline milseq::Mat primitive_probe(milseq::Primitive kind, const PrimitiveCase& c,
                                   milseq::Rng& rng) {
  milseq::Tape tape;
  std::vector<milseq::Var> inputs;
  for (const auto& name : c.inputs.names()) inputs.push_back(tape.constant(c.inputs.at(name)));
  const milseq::Mat& out = tape.value(milseq::apply_primitive(kind, inputs, c.attrs));
  return random_mat(out.rows(), out.cols(), rng, 0.5, 1.5);
}

// Phase 1 of the threshold tuner, rebuilt from its public pieces: class-wise
// F1 over the candidate set, larger threshold on ties.
inline milseq::ThresholdVector phase1_thresholds(const milseq::TuneProblem& problem) {
  milseq::ThresholdVector thresholds;
  for (int c = 0; c < problem.classes; ++c) {
    double best_f1 = -1.0, best_t = 1.0;
    for (double t :
         milseq::threshold_candidates(problem.scores[static_cast<std::size_t>(c)])) {
      const double f1 = problem.class_f1(c, t);
      if (f1 >= best_f1) {
        best_f1 = f1;
        best_t = t;
      }
    }
    thresholds.push_back(best_t);
  }
  return thresholds;
}

// CTC negative log-likelihood by enumerating all (C+1)^T frame paths,
// collapsing each and keeping the ones that match the label.
inline double ctc_nll_enumerate(const milseq::Mat& log_probs, const std::vector<int>& label) {
  using milseq::Index;
  const Index frames = log_probs.rows();
  const int width = static_cast<int>(log_probs.cols());
  const int blank = width - 1;
  double log_total = -std::numeric_limits<double>::infinity();
  std::vector<int> path(static_cast<std::size_t>(frames), 0);
  while (true) {
    // collapse: drop consecutive duplicates, then blanks
    std::vector<int> collapsed;
    int previous = -1;
    for (int symbol : path) {
      if (symbol != previous && symbol != blank) collapsed.push_back(symbol);
      previous = symbol;
    }
    if (collapsed == label) {
      double log_weight = 0.0;
      for (Index t = 0; t < frames; ++t)
        log_weight += log_probs(t, path[static_cast<std::size_t>(t)]);
      if (log_total == -std::numeric_limits<double>::infinity())
        log_total = log_weight;
      else
        log_total = std::max(log_total, log_weight) +
                    std::log1p(std::exp(-std::fabs(log_total - log_weight)));
    }
    // odometer increment
    Index pos = 0;
    while (pos < frames) {
      if (++path[static_cast<std::size_t>(pos)] < width) break;
      path[static_cast<std::size_t>(pos)] = 0;
      ++pos;
    }
    if (pos == frames) break;
  }
  return -log_total;
}

// Minimal alignment cost by exhaustive recursion (no DP table, no backtrace).
inline int edit_cost_exhaustive(const std::vector<int>& ref, const std::vector<int>& hyp,
                                std::size_t i = 0, std::size_t j = 0) {
  if (i == ref.size()) return static_cast<int>(hyp.size() - j);
  if (j == hyp.size()) return static_cast<int>(ref.size() - i);
  const int substitute =
      edit_cost_exhaustive(ref, hyp, i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
  const int erase = edit_cost_exhaustive(ref, hyp, i + 1, j) + 1;
  const int insert = edit_cost_exhaustive(ref, hyp, i, j + 1) + 1;
  return std::min({substitute, erase, insert});
}

// Naive segment recount: per segment-class flags from interval overlap, then
// the S/D/I decomposition summed directly.
struct SegmentRecount {
  double error_rate = 0.0;
  double f1 = 0.0;
};

inline SegmentRecount recount_segments(
    const std::vector<std::vector<milseq::EventInterval>>& hyps,
    const std::vector<std::vector<milseq::EventInterval>>& refs,
    const std::vector<double>& durations, int classes, double segment_length = 1.0) {
  long long n = 0, tp = 0, fp = 0, fn = 0, subs = 0, dels = 0, ins = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const int segments = static_cast<int>(std::ceil(durations[i] / segment_length));
    for (int s = 0; s < segments; ++s) {
      const double lo = s * segment_length;
      const double hi = lo + segment_length;
      long long seg_fp = 0, seg_fn = 0;
      for (int c = 0; c < classes; ++c) {
        bool r = false, h = false;
        for (const auto& e : refs[i])
          if (e.class_id == c && e.onset < hi && e.offset > lo) r = true;
        for (const auto& e : hyps[i])
          if (e.class_id == c && e.onset < hi && e.offset > lo) h = true;
        n += r;
        tp += r && h;
        seg_fp += !r && h;
        seg_fn += r && !h;
      }
      fp += seg_fp;
      fn += seg_fn;
      subs += std::min(seg_fn, seg_fp);
      dels += std::max(0LL, seg_fn - seg_fp);
      ins += std::max(0LL, seg_fp - seg_fn);
    }
  }
  SegmentRecount out;
  out.error_rate = 100.0 * static_cast<double>(subs + dels + ins) / static_cast<double>(n);
  const long long denom = 2 * tp + fp + fn;
  out.f1 = denom == 0 ? 0.0 : 100.0 * 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  return out;
}

}  // namespace oracles
