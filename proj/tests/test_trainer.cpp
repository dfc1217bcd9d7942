#include <cmath>
#include <cstring>

#include "doctest.h"
#include "milseq/trainer.hpp"

using namespace milseq;

namespace {

SynthConfig tiny_synth(Index train_bags = 20) {
  SynthConfig synth;
  synth.classes = 3;
  synth.feature_dim = 6;
  synth.frames = 20;
  synth.frame_rate = 10.0;
  synth.train_bags = train_bags;
  synth.valid_bags = 5;
  synth.test_bags = 5;
  synth.min_event_frames = 4;
  synth.max_event_frames = 8;
  synth.noise_sigma = 0.1;
  synth.seed = 99;
  return synth;
}

ModelConfig tiny_model() {
  ModelConfig model;
  model.feature_dim = 6;
  model.classes = 3;
  model.recurrent = {3};
  return model;
}

TrainConfig quick_train(int epochs) {
  TrainConfig config;
  config.learning_rate = 0.5;
  config.epochs = epochs;
  config.batch = {BatchUnit::Recordings, 8};
  config.schedule.warm_epochs = epochs;  // constant rate
  config.seed = 7;
  return config;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("clipping saturates large elements and leaves small ones alone") {
  GradientMap grads;
  grads["w"] = Mat::Constant(1, 1, 3.0);
  grads["v"] = Mat::Constant(1, 1, -5e-5);
  grads["z"] = Mat::Zero(2, 2);
  const std::uint64_t clipped = clip_gradients(grads, 1e-4);
  CHECK(clipped == 1);
  CHECK(grads.at("w")(0, 0) == 1e-4);
  CHECK(grads.at("v")(0, 0) == -5e-5);
  CHECK(grads.at("z").cwiseAbs().maxCoeff() == 0.0);

  GradientMap zeros;
  zeros["w"] = Mat::Zero(3, 3);
  CHECK(clip_gradients(zeros, 1e-4) == 0);
}

TEST_CASE("clipped gradients never exceed the limit") {
  GradientMap grads;
  Mat g(2, 3);
  g << -7.0, 2e-9, 0.5, 1e-4, -1e-4, 9.0;
  grads["w"] = g;
  clip_gradients(grads, 1e-4);
  CHECK(grads.at("w").cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("zero momentum reduces to plain SGD") {
  ParamSet params, velocity;
  params.add("w", Mat::Constant(1, 1, 2.0));
  velocity.add("w", Mat::Zero(1, 1));
  GradientMap grads;
  grads["w"] = Mat::Constant(1, 1, 0.5);
  sgd_nesterov_step(params, velocity, grads, 0.1, 0.0);
  CHECK(params.at("w")(0, 0) == doctest::Approx(2.0 - 0.1 * 0.5).epsilon(1e-15));
}

TEST_CASE("zero gradient still moves parameters by the momentum term") {
  ParamSet params, velocity;
  params.add("w", Mat::Constant(1, 1, 1.0));
  velocity.add("w", Mat::Constant(1, 1, 0.2));
  GradientMap grads;
  grads["w"] = Mat::Zero(1, 1);
  sgd_nesterov_step(params, velocity, grads, 0.1, 0.9);
  CHECK(params.at("w")(0, 0) == doctest::Approx(1.0 + 0.9 * 0.2).epsilon(1e-15));
}

TEST_CASE("nesterov descends a quadratic bowl") {
  // L = theta^2 / 2, gradient evaluated at the lookahead point
  double theta = 5.0, v = 0.0;
  const double lr = 0.1, momentum = 0.9;
  ParamSet params, velocity;
  params.add("t", Mat::Constant(1, 1, theta));
  velocity.add("t", Mat::Zero(1, 1));
  for (int step = 0; step < 50; ++step) {
    GradientMap grads;
    grads["t"] = Mat::Constant(1, 1, params.at("t")(0, 0) + momentum * velocity.at("t")(0, 0));
    sgd_nesterov_step(params, velocity, grads, lr, momentum);
    // independent simulation of the same recurrence
    const double g = theta + momentum * v;
    v = momentum * v - lr * g;
    theta += v;
  }
  CHECK(std::fabs(params.at("t")(0, 0)) < 5.0);
  CHECK(params.at("t")(0, 0) == doctest::Approx(theta).epsilon(1e-12));
}

TEST_CASE("non-finite gradients abort the step") {
  ParamSet params, velocity;
  params.add("w", Mat::Zero(1, 1));
  velocity.add("w", Mat::Zero(1, 1));
  GradientMap grads;
  grads["w"] = Mat::Constant(1, 1, std::nan(""));
  CHECK_THROWS_AS(sgd_nesterov_step(params, velocity, grads, 0.1, 0.9), Error);
}

TEST_CASE("constant-then-halving follows the exact law") {
  ScheduleConfig schedule;
  schedule.kind = ScheduleKind::ConstantThenHalving;
  schedule.warm_epochs = 12;
  TrainState state;
  state.learning_rate = 3.0;

  state.epoch = 13;
  CHECK(schedule_update(state, schedule, 3.0, 0.0) == doctest::Approx(1.5));
  for (int epoch = 1; epoch <= 24; ++epoch) {
    state.epoch = epoch;
    const double lr = schedule_update(state, schedule, 3.0, 0.0);
    CHECK(lr == 3.0 * std::pow(2.0, -std::max(0, epoch - 12)));
  }
}

TEST_CASE("plateau decays after `patience` non-improving epochs") {
  ScheduleConfig schedule;
  schedule.kind = ScheduleKind::Plateau;
  schedule.factor = 0.8;
  schedule.patience = 3;
  TrainState state;
  state.learning_rate = 0.1;
  state.best_valid = std::numeric_limits<double>::infinity();

  // first epoch improves on +inf, then three flat epochs trigger one decay
  const double losses[4] = {1.0, 1.0, 1.0, 1.0};
  double lr = 0.1;
  for (int i = 0; i < 4; ++i) {
    state.epoch = i + 2;
    lr = schedule_update(state, schedule, 0.1, losses[i]);
    if (i < 3) CHECK(lr == 0.1);
  }
  CHECK(lr == doctest::Approx(0.08));

  // improving losses never trigger
  TrainState fresh;
  fresh.learning_rate = 0.1;
  fresh.best_valid = std::numeric_limits<double>::infinity();
  double loss = 1.0;
  for (int epoch = 2; epoch <= 10; ++epoch) {
    fresh.epoch = epoch;
    loss *= 0.9;
    CHECK(schedule_update(fresh, schedule, 0.1, loss) == 0.1);
  }
}

TEST_CASE("training with a zero learning rate leaves parameters at init") {
  const Dataset data = generate(tiny_synth(1));
  ModelConfig model = tiny_model();
  TrainConfig config = quick_train(1);
  config.learning_rate = 0.0;
  ObjectiveSpec objective{ObjectiveSpec::Kind::MaxPool,
                          AveragingConvention::UtterancesAndClasses};
  const TrainResult result = train(model, objective, config, data.train, data.valid);
  const ParamSet fresh = init_parameters(model, mix_seed(config.seed, 0x696e6974));
  for (const auto& name : fresh.names())
    CHECK((result.params.at(name) - fresh.at(name)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training twice with one seed gives bit-identical logs") {
  const Dataset data = generate(tiny_synth());
  ModelConfig model = tiny_model();
  model.dropout = 0.2;
  ObjectiveSpec objective{ObjectiveSpec::Kind::MaxPool,
                          AveragingConvention::UtterancesAndClasses};
  const TrainResult a = train(model, objective, quick_train(3), data.train, data.valid);
  const TrainResult b = train(model, objective, quick_train(3), data.train, data.valid);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(std::memcmp(&a.log[i].train_loss, &b.log[i].train_loss, sizeof(double)) == 0);
    CHECK(std::memcmp(&a.log[i].valid_loss, &b.log[i].valid_loss, sizeof(double)) == 0);
    CHECK(a.log[i].clamp_count == b.log[i].clamp_count);
  }
  for (const auto& name : a.params.names())
    CHECK(std::memcmp(a.params.at(name).data(), b.params.at(name).data(),
                      sizeof(double) * static_cast<std::size_t>(a.params.at(name).size())) == 0);
}

TEST_CASE("the loss comes down on a small synthetic set") {
  const Dataset data = generate(tiny_synth(50));
  ObjectiveSpec objective{ObjectiveSpec::Kind::MaxPool,
                          AveragingConvention::UtterancesAndClasses};
  const TrainResult result =
      train(tiny_model(), objective, quick_train(30), data.train, data.valid);
  CHECK(result.log.back().train_loss < result.log.front().train_loss);
  for (const EpochLog& row : result.log) {
    CHECK(std::isfinite(row.train_loss));
    CHECK(std::isfinite(row.valid_loss));
  }
}

TEST_CASE("learning rate never increases under either schedule") {
  const Dataset data = generate(tiny_synth(10));
  ObjectiveSpec objective{ObjectiveSpec::Kind::MaxPool,
                          AveragingConvention::UtterancesAndClasses};

  TrainConfig halving = quick_train(8);
  halving.schedule.warm_epochs = 3;
  const TrainResult a = train(tiny_model(), objective, halving, data.train, data.valid);

  TrainConfig plateau = quick_train(8);
  plateau.schedule.kind = ScheduleKind::Plateau;
  plateau.schedule.patience = 2;
  const TrainResult b = train(tiny_model(), objective, plateau, data.train, data.valid);

  for (const auto& result : {a, b})
    for (std::size_t i = 1; i < result.log.size(); ++i)
      CHECK(result.log[i].lr <= result.log[i - 1].lr);
}

TEST_CASE("frame batching packs whole bags up to the budget") {
  const Dataset data = generate(tiny_synth(9));  // 9 bags x 20 frames
  ObjectiveSpec objective{ObjectiveSpec::Kind::MaxPool,
                          AveragingConvention::Frames};
  TrainConfig config = quick_train(1);
  config.batch = {BatchUnit::Frames, 50};  // two 20-frame bags per batch
  const TrainResult result = train(tiny_model(), objective, config, data.train, data.valid);
  CHECK(result.log.size() == 1);
  CHECK(std::isfinite(result.log[0].train_loss));
}

TEST_CASE("ctc objective trains on sequential labels") {
  SynthConfig synth = tiny_synth(12);
  synth.allow_overlap = false;  // phoneme-style: events cannot overlap
  synth.min_events = 1;
  synth.max_events = 2;
  const Dataset data = generate(synth);
  ModelConfig model = tiny_model();
  model.head = HeadKind::Softmax;
  ObjectiveSpec objective{ObjectiveSpec::Kind::Ctc, AveragingConvention::Frames};
  const TrainResult result = train(model, objective, quick_train(3), data.train, data.valid);
  CHECK(result.log.back().train_loss < result.log.front().train_loss * 1.5);
  for (const EpochLog& row : result.log) CHECK(std::isfinite(row.train_loss));
}

TEST_CASE("divergence aborts with the offending batch named") {
  const Dataset data = generate(tiny_synth(4));
  // two stacked relu conv layers overflow once the parameters explode; the
  // gated recurrent body alone saturates and never would
  ModelConfig model = tiny_model();
  model.recurrent.clear();
  model.conv = {{1, 4, 1}, {1, 4, 1}};
  TrainConfig config = quick_train(2);
  config.learning_rate = 1e200;
  config.batch = {BatchUnit::Recordings, 1};
  ObjectiveSpec objective{ObjectiveSpec::Kind::MaxPool,
                          AveragingConvention::UtterancesAndClasses};
  CHECK_THROWS_WITH_AS(train(model, objective, config, data.train, data.valid),
                       doctest::Contains("batch"), Error);
}

TEST_CASE("objective and head kinds must agree") {
  const Dataset data = generate(tiny_synth(2));
  ModelConfig model = tiny_model();  // sigmoid head
  ObjectiveSpec ctc{ObjectiveSpec::Kind::Ctc, AveragingConvention::Frames};
  CHECK_THROWS_WITH_AS(train(model, ctc, quick_train(1), data.train, data.valid),
                       doctest::Contains("softmax"), Error);
}

}  // TEST_SUITE
