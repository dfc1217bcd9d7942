#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A Tape owns the nodes of one computation graph; a Var is a cheap handle to
// a node. Node values are immutable once recorded. Every primitive validates
// input shapes and rejects non-finite results instead of letting NaN/Inf
// propagate. Tape::backward seeds a 1x1 output with gradient one and walks
// the nodes once in reverse creation order, which is a reverse topological
// order because inputs always precede their consumers. A tape records one
// graph and supports one backward pass; it is single-threaded by contract.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "milseq/types.hpp"

namespace milseq {

class Tape;

// Handle to a node on a Tape. Value semantics, trivially copyable.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;
};

// Gradients keyed by parameter name. Parameters never touched by the graph
// get zero matrices of their shape.
using GradientMap = std::map<std::string, Mat>;

class Tape {
 public:
  // Inputs to log are clamped at this value so that log never produces -inf.
  // Objectives that need exact log-domain arithmetic (noisy-or pooling, CTC)
  // do their own stabilization and bypass this clamp.
  static constexpr double kLogFloor = 1e-300;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf without gradient tracking.
  Var constant(Mat value);
  // Named parameter leaf; gradients are reported under `name`. A name may be
  // attached once per tape.
  Var param(const std::string& name, const Mat& value);

  const Mat& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Registers a node with a custom backward rule. `back` receives the
  // gradient of the final output w.r.t. this node and scatters into the
  // node's inputs via accumulate(). `what` labels error messages.
  using BackwardFn = std::function<void(const Mat& grad_out, Tape& tape, Var self)>;
  Var record(const char* what, Mat value, BackwardFn back);

  // Adds `grad` into the gradient buffer of `v`. Only valid inside a
  // BackwardFn during the backward pass.
  void accumulate(Var v, const Mat& grad);

  // Reverse pass from a 1x1 output. Consumes the tape: a second call throws.
  GradientMap backward(Var output);

 private:
  struct Node {
    Mat value;
    BackwardFn back;  // empty for leaves
  };
  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  std::vector<std::pair<std::string, std::int32_t>> params_;
  bool consumed_ = false;
  bool in_backward_ = false;

  void check_owned(Var v, const char* what) const;
};

// ---------------------------------------------------------------------------
// Primitives. Free functions recording onto the tape of their arguments.
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b);
Var operator+(Var a, Var b);   // elementwise, same shape
Var operator-(Var a, Var b);
Var cmul(Var a, Var b);        // elementwise product
Var operator*(double k, Var x);
Var add_rowvec(Var x, Var b);  // broadcast a 1xN row over every row of x
Var affine(Var x, Var w, Var b);
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);
Var one_minus(Var x);          // 1 - x elementwise
Var log(Var x);                // inputs clamped at Tape::kLogFloor
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
Var sum(Var x);                // -> 1x1
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, Index first, Index count);
// Max over non-overlapping windows of `factor` consecutive rows, per column.
// Requires rows % factor == 0. Gradient goes to the first argmax row of each
// window.
Var time_max_pool(Var x, Index factor);
// Per-column max over all rows -> 1xC. Gradient goes to the first argmax row.
Var colwise_max(Var x);

// ---------------------------------------------------------------------------
// Enum-indexed application, so test suites can sweep the whole primitive set.
// ---------------------------------------------------------------------------

enum class Primitive {
  MatMul,
  Add,
  Sub,
  CMul,
  Scale,
  AddRowVec,
  Affine,
  Sigmoid,
  Tanh,
  Relu,
  OneMinus,
  Log,
  SoftmaxRows,
  LogSoftmaxRows,
  Sum,
  ConcatRows,
  ConcatCols,
  SliceRows,
  TimeMaxPool,
  ColwiseMax,
};

struct PrimitiveAttrs {
  Index first = 0;   // SliceRows
  Index count = 0;   // SliceRows
  Index factor = 1;  // TimeMaxPool
  double scalar = 1.0;  // Scale
};

Var apply_primitive(Primitive kind, std::span<const Var> inputs,
                    const PrimitiveAttrs& attrs = {});
std::span<const Primitive> all_primitives();
const char* primitive_name(Primitive kind);

}  // namespace milseq
