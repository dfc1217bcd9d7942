#include "milseq/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <initializer_list>
#include <sstream>

namespace milseq {

namespace {

std::string shape_str(const Mat& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Tape* common_tape(std::initializer_list<Var> vars, const char* what) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (v.tape == nullptr || v.id < 0) throw Error(std::string(what) + ": unbound Var");
    if (tape == nullptr) tape = v.tape;
    if (v.tape != tape) throw Error(std::string(what) + ": Vars belong to different tapes");
  }
  return tape;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(message);
}

}  // namespace

void Tape::check_owned(Var v, const char* what) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw Error(std::string(what) + ": Var does not belong to this tape");
}

Var Tape::record(const char* what, Mat value, BackwardFn back) {
  if (!value.allFinite()) throw Error(std::string(what) + ": non-finite result");
  nodes_.push_back(Node{std::move(value), std::move(back)});
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Mat value) { return record("constant", std::move(value), {}); }

Var Tape::param(const std::string& name, const Mat& value) {
  for (const auto& [existing, id] : params_)
    if (existing == name) throw Error("param: duplicate parameter name '" + name + "'");
  Var v = record("param", value, {});
  params_.emplace_back(name, v.id);
  return v;
}

const Mat& Tape::value(Var v) const {
  check_owned(v, "value");
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

void Tape::accumulate(Var v, const Mat& grad) {
  check_owned(v, "accumulate");
  require(in_backward_, "accumulate: only valid during a backward pass");
  Mat& slot = grads_[static_cast<std::size_t>(v.id)];
  const Mat& val = nodes_[static_cast<std::size_t>(v.id)].value;
  require(grad.rows() == val.rows() && grad.cols() == val.cols(),
          "accumulate: gradient shape " + shape_str(grad) + " does not match value shape " +
              shape_str(val));
  if (slot.size() == 0)
    slot = grad;
  else
    slot += grad;
}

GradientMap Tape::backward(Var output) {
  check_owned(output, "backward");
  require(!consumed_, "backward: tape already consumed");
  const Mat& out = nodes_[static_cast<std::size_t>(output.id)].value;
  require(out.rows() == 1 && out.cols() == 1,
          "backward: output must be scalar, got " + shape_str(out));

  consumed_ = true;  // even a failed pass spends the tape
  grads_.assign(nodes_.size(), Mat());
  grads_[static_cast<std::size_t>(output.id)] = Mat::Ones(1, 1);
  in_backward_ = true;
  for (std::int32_t i = output.id; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    if (grads_[idx].size() != 0 && nodes_[idx].back)
      nodes_[idx].back(grads_[idx], *this, Var{this, i});
  }
  in_backward_ = false;

  GradientMap result;
  for (const auto& [name, id] : params_) {
    Mat& g = grads_[static_cast<std::size_t>(id)];
    const Mat& val = nodes_[static_cast<std::size_t>(id)].value;
    result[name] = g.size() != 0 ? std::move(g) : Mat::Zero(val.rows(), val.cols());
  }
  grads_.clear();
  grads_.shrink_to_fit();
  return result;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape* t = common_tape({a, b}, "matmul");
  const Mat& A = t->value(a);
  const Mat& B = t->value(b);
  require(A.cols() == B.rows(), "matmul: inner dimensions mismatch, " + shape_str(A) + " * " +
                                    shape_str(B));
  return t->record("matmul", A * B, [a, b](const Mat& g, Tape& tp, Var) {
    tp.accumulate(a, g * tp.value(b).transpose());
    tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

namespace {

void check_same_shape(Var a, Var b, const char* what) {
  Tape* t = common_tape({a, b}, what);
  const Mat& A = t->value(a);
  const Mat& B = t->value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          std::string(what) + ": shape mismatch, " + shape_str(A) + " vs " + shape_str(B));
}

}  // namespace

Var operator+(Var a, Var b) {
  check_same_shape(a, b, "add");
  return a.tape->record("add", a.tape->value(a) + a.tape->value(b),
                            [a, b](const Mat& g, Tape& tp, Var) {
                              tp.accumulate(a, g);
                              tp.accumulate(b, g);
                            });
}

Var operator-(Var a, Var b) {
  check_same_shape(a, b, "sub");
  return a.tape->record("sub", a.tape->value(a) - a.tape->value(b),
                            [a, b](const Mat& g, Tape& tp, Var) {
                              tp.accumulate(a, g);
                              tp.accumulate(b, -g);
                            });
}

Var cmul(Var a, Var b) {
  check_same_shape(a, b, "cmul");
  return a.tape->record("cmul", a.tape->value(a).cwiseProduct(a.tape->value(b)),
                        [a, b](const Mat& g, Tape& tp, Var) {
                          tp.accumulate(a, g.cwiseProduct(tp.value(b)));
                          tp.accumulate(b, g.cwiseProduct(tp.value(a)));
                        });
}

Var operator*(double k, Var x) {
  Tape* t = common_tape({x}, "scale");
  return t->record("scale", k * t->value(x), [x, k](const Mat& g, Tape& tp, Var) {
    tp.accumulate(x, k * g);
  });
}

Var add_rowvec(Var x, Var b) {
  Tape* t = common_tape({x, b}, "add_rowvec");
  const Mat& X = t->value(x);
  const Mat& B = t->value(b);
  require(B.rows() == 1 && B.cols() == X.cols(),
          "add_rowvec: bias must be 1x" + std::to_string(X.cols()) + ", got " + shape_str(B));
  Mat out = X;
  out.rowwise() += B.row(0);
  return t->record("add_rowvec", std::move(out), [x, b](const Mat& g, Tape& tp, Var) {
    tp.accumulate(x, g);
    tp.accumulate(b, g.colwise().sum());
  });
}

Var affine(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

Var sigmoid(Var x) {
  Tape* t = common_tape({x}, "sigmoid");
  Mat out = (1.0 / (1.0 + (-t->value(x).array()).exp())).matrix();
  return t->record("sigmoid", std::move(out), [x](const Mat& g, Tape& tp, Var self) {
    const auto& y = tp.value(self).array();
    tp.accumulate(x, (g.array() * y * (1.0 - y)).matrix());
  });
}

Var tanh(Var x) {
  Tape* t = common_tape({x}, "tanh");
  Mat out = t->value(x).array().tanh().matrix();
  return t->record("tanh", std::move(out), [x](const Mat& g, Tape& tp, Var self) {
    const auto& y = tp.value(self).array();
    tp.accumulate(x, (g.array() * (1.0 - y.square())).matrix());
  });
}

Var relu(Var x) {
  Tape* t = common_tape({x}, "relu");
  Mat out = t->value(x).cwiseMax(0.0);
  return t->record("relu", std::move(out), [x](const Mat& g, Tape& tp, Var) {
    const auto mask = (tp.value(x).array() > 0.0).cast<double>();
    tp.accumulate(x, (g.array() * mask).matrix());
  });
}

Var one_minus(Var x) {
  Tape* t = common_tape({x}, "one_minus");
  Mat out = (1.0 - t->value(x).array()).matrix();
  return t->record("one_minus", std::move(out), [x](const Mat& g, Tape& tp, Var) {
    tp.accumulate(x, -g);
  });
}

Var log(Var x) {
  Tape* t = common_tape({x}, "log");
  const auto clamped = t->value(x).array().max(Tape::kLogFloor);
  Mat out = clamped.log().matrix();
  return t->record("log", std::move(out), [x](const Mat& g, Tape& tp, Var) {
    const auto& xv = tp.value(x).array();
    const auto active = (xv >= Tape::kLogFloor).cast<double>();
    tp.accumulate(x, (g.array() * active / xv.max(Tape::kLogFloor)).matrix());
  });
}

Var softmax_rows(Var x) {
  Tape* t = common_tape({x}, "softmax_rows");
  const auto& X = t->value(x).array();
  Eigen::ArrayXXd shifted = X.colwise() - X.rowwise().maxCoeff();
  Eigen::ArrayXXd e = shifted.exp();
  Mat out = (e.colwise() / e.rowwise().sum()).matrix();
  return t->record("softmax_rows", std::move(out), [x](const Mat& g, Tape& tp, Var self) {
    const auto& y = tp.value(self).array();
    Eigen::ArrayXd dot = (g.array() * y).rowwise().sum();
    tp.accumulate(x, (y * (g.array().colwise() - dot)).matrix());
  });
}

Var log_softmax_rows(Var x) {
  Tape* t = common_tape({x}, "log_softmax_rows");
  const auto& X = t->value(x).array();
  Eigen::ArrayXXd shifted = X.colwise() - X.rowwise().maxCoeff();
  Eigen::ArrayXd logz = shifted.exp().rowwise().sum().log();
  Mat out = (shifted.colwise() - logz).matrix();
  return t->record("log_softmax_rows", std::move(out), [x](const Mat& g, Tape& tp, Var self) {
    const auto p = tp.value(self).array().exp();
    Eigen::ArrayXd gsum = g.array().rowwise().sum();
    tp.accumulate(x, (g.array() - p.colwise() * gsum).matrix());
  });
}

Var sum(Var x) {
  Tape* t = common_tape({x}, "sum");
  Mat out(1, 1);
  out(0, 0) = t->value(x).sum();
  return t->record("sum", std::move(out), [x](const Mat& g, Tape& tp, Var) {
    const Mat& xv = tp.value(x);
    tp.accumulate(x, Mat::Constant(xv.rows(), xv.cols(), g(0, 0)));
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: empty input list");
  std::vector<Var> inputs(parts.begin(), parts.end());
  Tape* t = inputs[0].tape;
  Index rows = 0;
  const Index cols = t->value(inputs[0]).cols();
  for (Var v : inputs) {
    common_tape({inputs[0], v}, "concat_rows");
    require(t->value(v).cols() == cols, "concat_rows: column count mismatch");
    rows += t->value(v).rows();
  }
  Mat out(rows, cols);
  Index r = 0;
  for (Var v : inputs) {
    out.middleRows(r, t->value(v).rows()) = t->value(v);
    r += t->value(v).rows();
  }
  return t->record("concat_rows", std::move(out), [inputs](const Mat& g, Tape& tp, Var) {
    Index r = 0;
    for (Var v : inputs) {
      const Index n = tp.value(v).rows();
      tp.accumulate(v, g.middleRows(r, n));
      r += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: empty input list");
  std::vector<Var> inputs(parts.begin(), parts.end());
  Tape* t = inputs[0].tape;
  Index cols = 0;
  const Index rows = t->value(inputs[0]).rows();
  for (Var v : inputs) {
    common_tape({inputs[0], v}, "concat_cols");
    require(t->value(v).rows() == rows, "concat_cols: row count mismatch");
    cols += t->value(v).cols();
  }
  Mat out(rows, cols);
  Index c = 0;
  for (Var v : inputs) {
    out.middleCols(c, t->value(v).cols()) = t->value(v);
    c += t->value(v).cols();
  }
  return t->record("concat_cols", std::move(out), [inputs](const Mat& g, Tape& tp, Var) {
    Index c = 0;
    for (Var v : inputs) {
      const Index n = tp.value(v).cols();
      tp.accumulate(v, g.middleCols(c, n));
      c += n;
    }
  });
}

Var slice_rows(Var x, Index first, Index count) {
  Tape* t = common_tape({x}, "slice_rows");
  const Mat& X = t->value(x);
  require(first >= 0 && count >= 1 && first + count <= X.rows(),
          "slice_rows: range [" + std::to_string(first) + ", " +
              std::to_string(first + count) + ") out of bounds for " + shape_str(X));
  return t->record("slice_rows", X.middleRows(first, count),
                   [x, first, count](const Mat& g, Tape& tp, Var) {
                     const Mat& xv = tp.value(x);
                     Mat dx = Mat::Zero(xv.rows(), xv.cols());
                     dx.middleRows(first, count) = g;
                     tp.accumulate(x, dx);
                   });
}

Var time_max_pool(Var x, Index factor) {
  Tape* t = common_tape({x}, "time_max_pool");
  const Mat& X = t->value(x);
  require(factor >= 1, "time_max_pool: factor must be >= 1");
  require(X.rows() % factor == 0, "time_max_pool: row count " + std::to_string(X.rows()) +
                                      " not divisible by factor " + std::to_string(factor));
  const Index windows = X.rows() / factor;
  Mat out(windows, X.cols());
  std::vector<Index> argmax(static_cast<std::size_t>(windows * X.cols()));
  for (Index w = 0; w < windows; ++w) {
    for (Index c = 0; c < X.cols(); ++c) {
      Index best = w * factor;
      for (Index r = w * factor + 1; r < (w + 1) * factor; ++r)
        if (X(r, c) > X(best, c)) best = r;
      out(w, c) = X(best, c);
      argmax[static_cast<std::size_t>(w * X.cols() + c)] = best;
    }
  }
  return t->record("time_max_pool", std::move(out),
                   [x, windows, argmax](const Mat& g, Tape& tp, Var) {
                     const Mat& xv = tp.value(x);
                     Mat dx = Mat::Zero(xv.rows(), xv.cols());
                     for (Index w = 0; w < windows; ++w)
                       for (Index c = 0; c < xv.cols(); ++c)
                         dx(argmax[static_cast<std::size_t>(w * xv.cols() + c)], c) += g(w, c);
                     tp.accumulate(x, dx);
                   });
}

Var colwise_max(Var x) {
  Tape* t = common_tape({x}, "colwise_max");
  const Mat& X = t->value(x);
  require(X.rows() >= 1, "colwise_max: empty input");
  Mat out(1, X.cols());
  std::vector<Index> argmax(static_cast<std::size_t>(X.cols()));
  for (Index c = 0; c < X.cols(); ++c) {
    Index best = 0;
    for (Index r = 1; r < X.rows(); ++r)
      if (X(r, c) > X(best, c)) best = r;
    out(0, c) = X(best, c);
    argmax[static_cast<std::size_t>(c)] = best;
  }
  return t->record("colwise_max", std::move(out), [x, argmax](const Mat& g, Tape& tp, Var) {
    const Mat& xv = tp.value(x);
    Mat dx = Mat::Zero(xv.rows(), xv.cols());
    for (Index c = 0; c < xv.cols(); ++c) dx(argmax[static_cast<std::size_t>(c)], c) = g(0, c);
    tp.accumulate(x, dx);
  });
}

// ---------------------------------------------------------------------------
// Enum dispatch
// ---------------------------------------------------------------------------

Var apply_primitive(Primitive kind, std::span<const Var> in, const PrimitiveAttrs& attrs) {
  const auto arity = [&](std::size_t n) {
    require(in.size() == n, std::string(primitive_name(kind)) + ": expected " +
                                std::to_string(n) + " inputs, got " + std::to_string(in.size()));
  };
  switch (kind) {
    case Primitive::MatMul: arity(2); return matmul(in[0], in[1]);
    case Primitive::Add: arity(2); return in[0] + in[1];
    case Primitive::Sub: arity(2); return in[0] - in[1];
    case Primitive::CMul: arity(2); return cmul(in[0], in[1]);
    case Primitive::Scale: arity(1); return attrs.scalar * in[0];
    case Primitive::AddRowVec: arity(2); return add_rowvec(in[0], in[1]);
    case Primitive::Affine: arity(3); return affine(in[0], in[1], in[2]);
    case Primitive::Sigmoid: arity(1); return sigmoid(in[0]);
    case Primitive::Tanh: arity(1); return tanh(in[0]);
    case Primitive::Relu: arity(1); return relu(in[0]);
    case Primitive::OneMinus: arity(1); return one_minus(in[0]);
    case Primitive::Log: arity(1); return log(in[0]);
    case Primitive::SoftmaxRows: arity(1); return softmax_rows(in[0]);
    case Primitive::LogSoftmaxRows: arity(1); return log_softmax_rows(in[0]);
    case Primitive::Sum: arity(1); return sum(in[0]);
    case Primitive::ConcatRows: return concat_rows(in);
    case Primitive::ConcatCols: return concat_cols(in);
    case Primitive::SliceRows: arity(1); return slice_rows(in[0], attrs.first, attrs.count);
    case Primitive::TimeMaxPool: arity(1); return time_max_pool(in[0], attrs.factor);
    case Primitive::ColwiseMax: arity(1); return colwise_max(in[0]);
  }
  throw Error("apply_primitive: unknown primitive kind");
}

std::span<const Primitive> all_primitives() {
  static constexpr std::array<Primitive, 20> kAll = {
      Primitive::MatMul,       Primitive::Add,
      Primitive::Sub,          Primitive::CMul,
      Primitive::Scale,        Primitive::AddRowVec,
      Primitive::Affine,       Primitive::Sigmoid,
      Primitive::Tanh,         Primitive::Relu,
      Primitive::OneMinus,     Primitive::Log,
      Primitive::SoftmaxRows,  Primitive::LogSoftmaxRows,
      Primitive::Sum,          Primitive::ConcatRows,
      Primitive::ConcatCols,   Primitive::SliceRows,
      Primitive::TimeMaxPool,  Primitive::ColwiseMax,
  };
  return kAll;
}

const char* primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::MatMul: return "matmul";
    case Primitive::Add: return "add";
    case Primitive::Sub: return "sub";
    case Primitive::CMul: return "cmul";
    case Primitive::Scale: return "scale";
    case Primitive::AddRowVec: return "add_rowvec";
    case Primitive::Affine: return "affine";
    case Primitive::Sigmoid: return "sigmoid";
    case Primitive::Tanh: return "tanh";
    case Primitive::Relu: return "relu";
    case Primitive::OneMinus: return "one_minus";
    case Primitive::Log: return "log";
    case Primitive::SoftmaxRows: return "softmax_rows";
    case Primitive::LogSoftmaxRows: return "log_softmax_rows";
    case Primitive::Sum: return "sum";
    case Primitive::ConcatRows: return "concat_rows";
    case Primitive::ConcatCols: return "concat_cols";
    case Primitive::SliceRows: return "slice_rows";
    case Primitive::TimeMaxPool: return "time_max_pool";
    case Primitive::ColwiseMax: return "colwise_max";
  }
  return "unknown";
}

}  // namespace milseq
