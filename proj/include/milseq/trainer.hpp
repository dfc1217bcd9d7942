#pragma once

// Training loop: SGD with Nesterov momentum, element-wise gradient clipping,
// constant-then-halving or plateau learning-rate schedules, and batching by
// raw frame budget or by recording count. Deterministic in the seed: init,
// shuffling and dropout all draw from streams derived from it.

#include <cstdint>
#include <optional>
#include <vector>

#include "milseq/nets.hpp"
#include "milseq/objectives.hpp"
#include "milseq/params.hpp"
#include "milseq/synthgen.hpp"
#include "milseq/tape.hpp"

namespace milseq {

enum class ScheduleKind { ConstantThenHalving, Plateau };

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::ConstantThenHalving;
  int warm_epochs = 12;  // halving: epochs at the initial rate before lr/2 steps
  double factor = 0.8;   // plateau: multiplier on stall
  int patience = 3;      // plateau: non-improving epochs before a decay
};

enum class BatchUnit { Frames, Recordings };

struct BatchConfig {
  BatchUnit unit = BatchUnit::Recordings;
  Index size = 10;  // frame budget or recording count
};

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::optional<double> clip_limit;  // absolute per-element bound
  ScheduleConfig schedule;
  BatchConfig batch;
  int epochs = 10;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

struct ObjectiveSpec {
  enum class Kind { Ctc, MaxPool, NoisyOr };
  Kind kind = Kind::MaxPool;
  AveragingConvention average = AveragingConvention::UtterancesAndClasses;
};

struct TrainState {
  int epoch = 0;  // 1-based, advanced by the caller before schedule_update
  double learning_rate = 0.0;
  ParamSet velocity;
  double best_valid = 0.0;
  int epochs_since_improvement = 0;
  std::uint64_t clip_events = 0;
  std::uint64_t clamp_events = 0;
};

// Element-wise clamp of every gradient to [-limit, limit]. Returns how many
// elements were clipped.
std::uint64_t clip_gradients(GradientMap& grads, double limit);

// Nesterov update with gradients taken at the lookahead point:
//   v' = momentum * v - lr * grad(params + momentum * v)
//   params' = params + v'
// The caller evaluates the gradient at the lookahead point; this applies the
// update. Throws on non-finite gradients.
void sgd_nesterov_step(ParamSet& params, ParamSet& velocity, const GradientMap& grads,
                       double lr, double momentum);

// Learning rate for state.epoch. Halving: initial_lr * 2^-max(0, epoch - warm),
// exactly. Plateau: multiply by `factor` once the validation loss has not
// improved for `patience` consecutive epochs, then reset the stall counter.
double schedule_update(TrainState& state, const ScheduleConfig& schedule, double initial_lr,
                       double valid_loss);

// Loss of one bag under the objective, as a tape node ending in a scalar.
// CTC consumes the bag's sequential labels, the pooling objectives its weak
// label; the averaging convention scales per bag, the batch mean over bags is
// applied by the caller.
Var build_bag_loss(Tape& tape, const ModelConfig& model,
                   const std::map<std::string, Var>& param_vars, const ObjectiveSpec& objective,
                   const Bag& bag, bool training, Rng* dropout_rng, LossStats* stats);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  std::uint64_t clip_count = 0;
  std::uint64_t clamp_count = 0;
};

struct TrainResult {
  ParamSet params;
  std::vector<EpochLog> log;
};

TrainResult train(const ModelConfig& model, const ObjectiveSpec& objective,
                  const TrainConfig& config, const std::vector<Bag>& train_bags,
                  const std::vector<Bag>& valid_bags);

}  // namespace milseq
