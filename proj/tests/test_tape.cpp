#include <cstring>
#include <map>

#include "doctest.h"
#include "milseq/rng.hpp"
#include "milseq/tape.hpp"
#include "oracles.hpp"

using namespace milseq;

namespace {

using oracles::random_mat;

}  // namespace

TEST_SUITE("tape") {

TEST_CASE("sigmoid of zero is one half") {
  Tape tape;
  Var y = sigmoid(tape.constant(Mat::Zero(1, 1)));
  CHECK(tape.value(y)(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax of a uniform vector is uniform") {
  Tape tape;
  Var y = softmax_rows(tape.constant(Mat::Constant(1, 4, 0.7)));
  for (Index c = 0; c < 4; ++c)
    CHECK(tape.value(y)(0, c) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("matmul with identity is identity") {
  Rng rng(7);
  Mat a = random_mat(3, 3, rng);
  Tape tape;
  Var y = matmul(tape.constant(a), tape.constant(Mat::Identity(3, 3)));
  CHECK((tape.value(y) - a).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sigmoid derivative at zero is one quarter") {
  Tape tape;
  Var x = tape.param("x", Mat::Zero(1, 1));
  GradientMap grads = tape.backward(sum(sigmoid(x)));
  CHECK(grads.at("x")(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("gradient of sum(A*B) matches finite differences") {
  Rng rng(11);
  ParamSet inputs;
  inputs.add("a", random_mat(2, 3, rng));
  inputs.add("b", random_mat(3, 2, rng));
  const double err = oracles::fd_rel_error(
      inputs, [](Tape&, const std::map<std::string, Var>& vars) {
        return sum(matmul(vars.at("a"), vars.at("b")));
      });
  CHECK(err <= 1e-6);
}

TEST_CASE("untouched parameters get zero gradients") {
  Tape tape;
  Var x = tape.param("x", Mat::Ones(2, 2));
  tape.param("unused", Mat::Ones(3, 1));
  GradientMap grads = tape.backward(sum(x));
  CHECK(grads.at("unused").rows() == 3);
  CHECK(grads.at("unused").cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient of a constant w.r.t. a parameter is zero") {
  Tape tape;
  tape.param("x", Mat::Ones(2, 2));
  Var c = tape.constant(Mat::Ones(1, 1));
  GradientMap grads = tape.backward(c);
  CHECK(grads.at("x").cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("every primitive passes randomized finite-difference checks") {
  for (Primitive kind : all_primitives()) {
    CAPTURE(primitive_name(kind));
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(mix_seed(static_cast<std::uint64_t>(kind) + 1, seed));
      oracles::PrimitiveCase c = oracles::make_primitive_case(kind, rng);
      const Mat probe = oracles::primitive_probe(kind, c, rng);
      const double err = oracles::fd_rel_error(c.inputs, oracles::primitive_probe_loss(kind, c.attrs, probe));
      CAPTURE(seed);
      REQUIRE(err <= 1e-5);
    }
  }
}

TEST_CASE("forward evaluation is bit-deterministic") {
  const auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tape tape;
    Var x = tape.constant(random_mat(4, 3, rng));
    Var w = tape.constant(random_mat(3, 5, rng));
    Var b = tape.constant(random_mat(1, 5, rng));
    Var out = softmax_rows(affine(tanh(x), w, b));
    return Mat(tape.value(out));
  };
  Mat first = run(3);
  Mat second = run(3);
  CHECK(std::memcmp(first.data(), second.data(),
                    sizeof(double) * static_cast<std::size_t>(first.size())) == 0);
}

TEST_CASE("backward of a sum of scalars equals the sum of backwards") {
  Rng rng(23);
  Mat xv = random_mat(3, 3, rng);
  Mat wv = random_mat(3, 3, rng);

  const auto grads_of = [&](int which) {
    Tape tape;
    Var x = tape.param("x", xv);
    Var w = tape.param("w", wv);
    Var s1 = sum(sigmoid(matmul(x, w)));
    Var s2 = sum(cmul(x, w));
    Var loss = which == 0 ? s1 : which == 1 ? s2 : s1 + s2;
    return tape.backward(loss);
  };
  GradientMap g1 = grads_of(0);
  GradientMap g2 = grads_of(1);
  GradientMap g12 = grads_of(2);
  for (const auto& name : {"x", "w"}) {
    const Mat expected = g1.at(name) + g2.at(name);
    CHECK((g12.at(name) - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("shape mismatches are rejected") {
  Tape tape;
  Var a = tape.constant(Mat::Ones(2, 3));
  Var b = tape.constant(Mat::Ones(2, 2));
  CHECK_THROWS_AS(matmul(a, b), Error);
  CHECK_THROWS_AS(a + b, Error);
  CHECK_THROWS_AS(cmul(a, b), Error);
  CHECK_THROWS_AS(slice_rows(a, 1, 5), Error);
  CHECK_THROWS_AS(time_max_pool(a, 4), Error);
}

TEST_CASE("non-finite results surface as errors") {
  Tape tape;
  Var a = tape.constant(Mat::Constant(2, 2, 1e308));
  CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("non-finite"), Error);
}

TEST_CASE("backward demands a scalar output and a fresh tape") {
  Tape tape;
  Var x = tape.param("x", Mat::Ones(2, 2));
  CHECK_THROWS_WITH_AS(tape.backward(x), doctest::Contains("scalar"), Error);
  Var loss = sum(x);
  tape.backward(loss);
  CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("consumed"), Error);
}

TEST_CASE("duplicate parameter names are rejected") {
  Tape tape;
  tape.param("w", Mat::Ones(1, 1));
  CHECK_THROWS_AS(tape.param("w", Mat::Ones(1, 1)), Error);
}

TEST_CASE("log clamps its inputs at the documented floor") {
  Tape tape;
  Var x = tape.param("x", Mat::Zero(1, 1));
  Var y = log(x);
  CHECK(tape.value(y)(0, 0) == doctest::Approx(std::log(Tape::kLogFloor)));
  GradientMap grads = tape.backward(sum(y));
  CHECK(grads.at("x")(0, 0) == 0.0);  // below the floor: flat
}

}  // TEST_SUITE
