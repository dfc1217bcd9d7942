#include "milseq/nets.hpp"

#include <array>
#include <cmath>
#include <string>

namespace milseq {

namespace {

std::string conv_name(std::size_t layer, const char* leaf) {
  return "conv" + std::to_string(layer) + "." + leaf;
}

std::string rnn_name(std::size_t layer, const char* dir, const char* leaf) {
  return "rnn" + std::to_string(layer) + "." + dir + "." + leaf;
}

Mat glorot_uniform(Index rows, Index cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

Var lookup(const std::map<std::string, Var>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw Error("model: missing parameter '" + name + "'");
  return it->second;
}

// One direction of a gated recurrent layer over x (TxD). The update gate z
// keeps the previous state: h_t = z*h_{t-1} + (1-z)*htilde.
Var gru_direction(Tape& tape, const std::map<std::string, Var>& params, std::size_t layer,
                  const char* dir, Var x, Index hidden, bool reverse) {
  Var wz = lookup(params, rnn_name(layer, dir, "wz"));
  Var wr = lookup(params, rnn_name(layer, dir, "wr"));
  Var wh = lookup(params, rnn_name(layer, dir, "wh"));
  Var uz = lookup(params, rnn_name(layer, dir, "uz"));
  Var ur = lookup(params, rnn_name(layer, dir, "ur"));
  Var uh = lookup(params, rnn_name(layer, dir, "uh"));
  Var bz = lookup(params, rnn_name(layer, dir, "bz"));
  Var br = lookup(params, rnn_name(layer, dir, "br"));
  Var bh = lookup(params, rnn_name(layer, dir, "bh"));

  const Index frames = tape.value(x).rows();
  Var in_z = affine(x, wz, bz);
  Var in_r = affine(x, wr, br);
  Var in_h = affine(x, wh, bh);

  Var h = tape.constant(Mat::Zero(1, hidden));
  std::vector<Var> states(static_cast<std::size_t>(frames));
  for (Index step = 0; step < frames; ++step) {
    const Index tt = reverse ? frames - 1 - step : step;
    Var z = sigmoid(slice_rows(in_z, tt, 1) + matmul(h, uz));
    Var r = sigmoid(slice_rows(in_r, tt, 1) + matmul(h, ur));
    Var htilde = tanh(slice_rows(in_h, tt, 1) + matmul(cmul(r, h), uh));
    h = cmul(z, h) + cmul(one_minus(z), htilde);
    states[static_cast<std::size_t>(tt)] = h;
  }
  return concat_rows(states);
}

}  // namespace

void validate(const ModelConfig& config) {
  if (config.feature_dim < 1) throw Error("model config: feature_dim must be >= 1");
  if (config.classes < 1) throw Error("model config: classes must be >= 1");
  for (const auto& layer : config.conv) {
    if (layer.kernel < 1) throw Error("model config: conv kernel must be >= 1");
    if (layer.channels < 1) throw Error("model config: conv channels must be >= 1");
    if (layer.pool < 1) throw Error("model config: conv pool must be >= 1");
  }
  for (Index width : config.recurrent)
    if (width < 1) throw Error("model config: recurrent width must be >= 1");
  if (!(config.dropout >= 0.0 && config.dropout < 1.0))
    throw Error("model config: dropout must lie in [0, 1)");
}

Index total_pool_factor(const ModelConfig& config) {
  Index factor = 1;
  for (const auto& layer : config.conv) factor *= layer.pool;
  return factor;
}

Index head_width(const ModelConfig& config) {
  return config.head == HeadKind::Softmax ? config.classes + 1 : config.classes;
}

ParamSet init_parameters(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  Rng rng(seed);
  ParamSet params;

  Index width = config.feature_dim;
  for (std::size_t i = 0; i < config.conv.size(); ++i) {
    const auto& layer = config.conv[i];
    params.add(conv_name(i, "w"), glorot_uniform(layer.kernel * width, layer.channels, rng));
    params.add(conv_name(i, "b"), Mat::Zero(1, layer.channels));
    width = layer.channels;
  }
  for (std::size_t l = 0; l < config.recurrent.size(); ++l) {
    const Index hidden = config.recurrent[l];
    for (const char* dir : {"fwd", "bwd"}) {
      params.add(rnn_name(l, dir, "wz"), glorot_uniform(width, hidden, rng));
      params.add(rnn_name(l, dir, "wr"), glorot_uniform(width, hidden, rng));
      params.add(rnn_name(l, dir, "wh"), glorot_uniform(width, hidden, rng));
      params.add(rnn_name(l, dir, "uz"), glorot_uniform(hidden, hidden, rng));
      params.add(rnn_name(l, dir, "ur"), glorot_uniform(hidden, hidden, rng));
      params.add(rnn_name(l, dir, "uh"), glorot_uniform(hidden, hidden, rng));
      params.add(rnn_name(l, dir, "bz"), Mat::Zero(1, hidden));
      params.add(rnn_name(l, dir, "br"), Mat::Zero(1, hidden));
      params.add(rnn_name(l, dir, "bh"), Mat::Zero(1, hidden));
    }
    width = 2 * hidden;
  }
  params.add("head.w", glorot_uniform(width, head_width(config), rng));
  params.add("head.b", Mat::Zero(1, head_width(config)));
  return params;
}

std::map<std::string, Var> attach_params(Tape& tape, const ParamSet& params) {
  std::map<std::string, Var> vars;
  for (const auto& name : params.names()) vars.emplace(name, tape.param(name, params.at(name)));
  return vars;
}

Var build_frame_outputs(Tape& tape, const ModelConfig& config,
                        const std::map<std::string, Var>& params, const Mat& features,
                        bool training, Rng* dropout_rng) {
  validate(config);
  if (features.cols() != config.feature_dim)
    throw Error("model: feature dim mismatch, expected " + std::to_string(config.feature_dim) +
                ", got " + std::to_string(features.cols()));
  const Index factor = total_pool_factor(config);
  const Index usable = features.rows() - features.rows() % factor;
  if (usable < factor)
    throw Error("model: input of " + std::to_string(features.rows()) +
                " frames is too short for total pooling factor " + std::to_string(factor));
  if (training && config.dropout > 0.0 && dropout_rng == nullptr)
    throw Error("model: dropout requires an rng while training");

  Var x = tape.constant(features.topRows(usable));

  for (std::size_t i = 0; i < config.conv.size(); ++i) {
    const auto& layer = config.conv[i];
    const Index frames = tape.value(x).rows();
    const Index in_width = tape.value(x).cols();
    const Index pad_top = (layer.kernel - 1) / 2;
    const Index pad_bot = layer.kernel - 1 - pad_top;

    Var padded = x;
    if (layer.kernel > 1) {
      std::vector<Var> blocks;
      if (pad_top > 0) blocks.push_back(tape.constant(Mat::Zero(pad_top, in_width)));
      blocks.push_back(x);
      if (pad_bot > 0) blocks.push_back(tape.constant(Mat::Zero(pad_bot, in_width)));
      padded = concat_rows(blocks);
    }

    Var w = lookup(params, conv_name(i, "w"));
    Var acc{};
    for (Index tap = 0; tap < layer.kernel; ++tap) {
      Var taps = matmul(slice_rows(padded, tap, frames), slice_rows(w, tap * in_width, in_width));
      acc = tap == 0 ? taps : acc + taps;
    }
    x = relu(add_rowvec(acc, lookup(params, conv_name(i, "b"))));
    if (layer.pool > 1) x = time_max_pool(x, layer.pool);
  }

  for (std::size_t l = 0; l < config.recurrent.size(); ++l) {
    const Index hidden = config.recurrent[l];
    Var fwd = gru_direction(tape, params, l, "fwd", x, hidden, false);
    Var bwd = gru_direction(tape, params, l, "bwd", x, hidden, true);
    const std::array<Var, 2> dirs = {fwd, bwd};
    x = concat_cols(dirs);
    if (training && config.dropout > 0.0) {
      const Mat& xv = tape.value(x);
      Mat mask(xv.rows(), xv.cols());
      const double keep = 1.0 - config.dropout;
      for (Index r = 0; r < mask.rows(); ++r)
        for (Index c = 0; c < mask.cols(); ++c)
          mask(r, c) = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
      x = cmul(x, tape.constant(std::move(mask)));
    }
  }

  Var logits = affine(x, lookup(params, "head.w"), lookup(params, "head.b"));
  return config.head == HeadKind::Sigmoid ? sigmoid(logits) : log_softmax_rows(logits);
}

FramePredictions forward(const ModelConfig& config, const ParamSet& params, const Mat& features,
                         double input_frame_rate, bool training, Rng* dropout_rng) {
  Tape tape;
  auto vars = attach_params(tape, params);
  Var out = build_frame_outputs(tape, config, vars, features, training, dropout_rng);
  FramePredictions preds;
  preds.values = config.head == HeadKind::Softmax ? tape.value(out).array().exp().matrix()
                                                  : tape.value(out);
  preds.frame_rate = input_frame_rate / static_cast<double>(total_pool_factor(config));
  return preds;
}

}  // namespace milseq
