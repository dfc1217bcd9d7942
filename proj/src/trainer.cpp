#include "milseq/trainer.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace milseq {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;
constexpr std::uint64_t kShuffleTag = 0x73687566;
constexpr std::uint64_t kDropoutTag = 0x64726f70;

std::vector<std::vector<std::size_t>> make_batches(const std::vector<Bag>& bags,
                                                   const std::vector<std::size_t>& order,
                                                   const BatchConfig& config) {
  std::vector<std::vector<std::size_t>> batches;
  if (config.unit == BatchUnit::Recordings) {
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(config.size)) {
      const auto end = std::min(order.size(), i + static_cast<std::size_t>(config.size));
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
  }
  // Frame budget: pack whole bags greedily; a bag larger than the budget
  // still forms its own batch.
  std::vector<std::size_t> current;
  Index frames = 0;
  for (std::size_t idx : order) {
    const Index bag_frames = bags[idx].features.rows();
    if (!current.empty() && frames + bag_frames > config.size) {
      batches.push_back(std::move(current));
      current.clear();
      frames = 0;
    }
    current.push_back(idx);
    frames += bag_frames;
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

ParamSet lookahead_point(const ParamSet& params, const ParamSet& velocity, double momentum) {
  ParamSet out;
  for (const auto& name : params.names())
    out.add(name, params.at(name) + momentum * velocity.at(name));
  return out;
}

double mean_valid_loss(const ModelConfig& model, const ObjectiveSpec& objective,
                       const ParamSet& params, const std::vector<Bag>& bags) {
  double total = 0.0;
  for (const Bag& bag : bags) {
    Tape tape;
    auto vars = attach_params(tape, params);
    Var loss = build_bag_loss(tape, model, vars, objective, bag, false, nullptr, nullptr);
    total += tape.value(loss)(0, 0);
  }
  return total / static_cast<double>(bags.size());
}

}  // namespace

void validate(const TrainConfig& config) {
  if (!(config.learning_rate >= 0.0)) throw Error("train config: learning rate must be >= 0");
  if (!(config.momentum >= 0.0 && config.momentum < 1.0))
    throw Error("train config: momentum must lie in [0, 1)");
  if (config.clip_limit && !(*config.clip_limit > 0.0))
    throw Error("train config: clip limit must be > 0 when present");
  if (config.schedule.patience < 1) throw Error("train config: patience must be >= 1");
  if (config.schedule.kind == ScheduleKind::Plateau &&
      !(config.schedule.factor > 0.0 && config.schedule.factor <= 1.0))
    throw Error("train config: plateau factor must lie in (0, 1]");
  if (config.batch.size < 1) throw Error("train config: batch size must be >= 1");
  if (config.epochs < 1) throw Error("train config: epochs must be >= 1");
}

std::uint64_t clip_gradients(GradientMap& grads, double limit) {
  if (!(limit > 0.0)) throw Error("clip_gradients: limit must be > 0");
  std::uint64_t clipped = 0;
  for (auto& [name, grad] : grads) {
    clipped += static_cast<std::uint64_t>((grad.array().abs() > limit).count());
    grad = grad.cwiseMax(-limit).cwiseMin(limit);
  }
  return clipped;
}

void sgd_nesterov_step(ParamSet& params, ParamSet& velocity, const GradientMap& grads,
                       double lr, double momentum) {
  for (const auto& [name, grad] : grads)
    if (!grad.allFinite())
      throw Error("sgd_nesterov_step: non-finite gradient for '" + name + "'");
  for (const auto& [name, grad] : grads) {
    Mat& v = velocity.at(name);
    v = momentum * v - lr * grad;
    params.at(name) += v;
  }
}

double schedule_update(TrainState& state, const ScheduleConfig& schedule, double initial_lr,
                       double valid_loss) {
  if (schedule.kind == ScheduleKind::ConstantThenHalving) {
    const int halvings = std::max(0, state.epoch - schedule.warm_epochs);
    state.learning_rate = initial_lr * std::pow(2.0, -halvings);
    return state.learning_rate;
  }
  if (valid_loss < state.best_valid) {
    state.best_valid = valid_loss;
    state.epochs_since_improvement = 0;
  } else {
    ++state.epochs_since_improvement;
    if (state.epochs_since_improvement >= schedule.patience) {
      state.learning_rate *= schedule.factor;
      state.epochs_since_improvement = 0;
    }
  }
  return state.learning_rate;
}

Var build_bag_loss(Tape& tape, const ModelConfig& model,
                   const std::map<std::string, Var>& param_vars, const ObjectiveSpec& objective,
                   const Bag& bag, bool training, Rng* dropout_rng, LossStats* stats) {
  Var out = build_frame_outputs(tape, model, param_vars, bag.features, training, dropout_rng);
  const Index frames = tape.value(out).rows();
  switch (objective.kind) {
    case ObjectiveSpec::Kind::Ctc: {
      if (model.head != HeadKind::Softmax)
        throw Error("objective ctc requires a softmax head");
      double denom = 1.0;
      switch (objective.average) {
        case AveragingConvention::Frames: denom = static_cast<double>(frames); break;
        case AveragingConvention::UtterancesAndClasses:
          denom = static_cast<double>(model.classes);
          break;
        case AveragingConvention::FramesAndClasses:
          denom = static_cast<double>(frames) * static_cast<double>(model.classes);
          break;
      }
      return (1.0 / denom) * ctc_loss(out, bag.sequential);
    }
    case ObjectiveSpec::Kind::MaxPool: {
      if (model.head != HeadKind::Sigmoid)
        throw Error("objective max requires a sigmoid head");
      return bag_bce_from_values(pool_max(out), bag.weak, objective.average, frames, stats);
    }
    case ObjectiveSpec::Kind::NoisyOr: {
      if (model.head != HeadKind::Sigmoid)
        throw Error("objective noisy-or requires a sigmoid head");
      return bag_bce_from_log_complement(pool_noisy_or_log_complement(out), bag.weak,
                                         objective.average, frames, stats);
    }
  }
  throw Error("build_bag_loss: unknown objective kind");
}

TrainResult train(const ModelConfig& model, const ObjectiveSpec& objective,
                  const TrainConfig& config, const std::vector<Bag>& train_bags,
                  const std::vector<Bag>& valid_bags) {
  validate(model);
  validate(config);
  if (train_bags.empty()) throw Error("train: empty training set");
  if (valid_bags.empty()) throw Error("train: empty validation set");

  TrainResult result;
  result.params = init_parameters(model, mix_seed(config.seed, kInitTag));
  ParamSet velocity = ParamSet::zeros_like(result.params);

  TrainState state;
  state.learning_rate = config.learning_rate;
  state.best_valid = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_bags.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = state.learning_rate;
    Rng shuffle_rng(mix_seed(config.seed, kShuffleTag, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    Rng dropout_rng(mix_seed(config.seed, kDropoutTag, static_cast<std::uint64_t>(epoch)));

    const auto batches = make_batches(train_bags, order, config.batch);
    LossStats stats;
    std::uint64_t clip_count = 0;
    double loss_sum = 0.0;

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      const ParamSet at = lookahead_point(result.params, velocity, config.momentum);
      GradientMap batch_grads;
      double batch_loss = 0.0;
      for (std::size_t idx : batch) {
        const Bag& bag = train_bags[idx];
        try {
          Tape tape;
          auto vars = attach_params(tape, at);
          Var loss = build_bag_loss(tape, model, vars, objective, bag, true, &dropout_rng,
                                    &stats);
          batch_loss += tape.value(loss)(0, 0);
          GradientMap grads = tape.backward(loss);
          if (batch_grads.empty())
            batch_grads = std::move(grads);
          else
            for (auto& [name, grad] : grads) batch_grads.at(name) += grad;
        } catch (const Error& e) {
          throw Error("train: epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                      ", bag " + bag.id + ": " + e.what());
        }
      }
      if (!std::isfinite(batch_loss))
        throw Error("train: non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(b));
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& [name, grad] : batch_grads) grad *= inv;
      if (config.clip_limit) clip_count += clip_gradients(batch_grads, *config.clip_limit);
      sgd_nesterov_step(result.params, velocity, batch_grads, lr, config.momentum);
      loss_sum += batch_loss;
    }

    const double valid_loss = mean_valid_loss(model, objective, result.params, valid_bags);
    state.epoch = epoch + 1;
    schedule_update(state, config.schedule, config.learning_rate, valid_loss);
    state.clip_events += clip_count;
    state.clamp_events += stats.clamp_count;
    result.log.push_back(EpochLog{epoch, lr, loss_sum / static_cast<double>(train_bags.size()),
                                  valid_loss, clip_count, stats.clamp_count});
  }
  return result;
}

}  // namespace milseq
