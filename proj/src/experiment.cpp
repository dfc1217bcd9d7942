#include "milseq/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "milseq/decoder.hpp"
#include "milseq/evaluation.hpp"

namespace milseq {

namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

void expect_keys(const json& node, const std::vector<std::string>& allowed,
                 const std::string& where) {
  for (const auto& [key, value] : node.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw Error("config: unknown key '" + key + "' in " + where);
}

SynthConfig parse_synth(const json& node) {
  expect_keys(node,
              {"classes", "feature_dim", "frames", "frame_rate", "bags", "event_frames",
               "events_per_bag", "noise_sigma", "signal_amplitude", "allow_overlap"},
              "synth");
  SynthConfig synth;
  synth.classes = node.value("classes", synth.classes);
  synth.feature_dim = node.value("feature_dim", synth.feature_dim);
  synth.frames = node.value("frames", synth.frames);
  synth.frame_rate = node.value("frame_rate", synth.frame_rate);
  if (node.contains("bags")) {
    const json& bags = node.at("bags");
    expect_keys(bags, {"train", "valid", "test"}, "synth.bags");
    synth.train_bags = bags.value("train", synth.train_bags);
    synth.valid_bags = bags.value("valid", synth.valid_bags);
    synth.test_bags = bags.value("test", synth.test_bags);
  }
  if (node.contains("event_frames")) {
    synth.min_event_frames = node.at("event_frames").at(0).get<Index>();
    synth.max_event_frames = node.at("event_frames").at(1).get<Index>();
  }
  if (node.contains("events_per_bag")) {
    synth.min_events = node.at("events_per_bag").at(0).get<Index>();
    synth.max_events = node.at("events_per_bag").at(1).get<Index>();
  }
  synth.noise_sigma = node.value("noise_sigma", synth.noise_sigma);
  synth.signal_amplitude = node.value("signal_amplitude", synth.signal_amplitude);
  synth.allow_overlap = node.value("allow_overlap", synth.allow_overlap);
  return synth;
}

ModelConfig parse_model(const json& node) {
  expect_keys(node, {"conv", "recurrent", "head", "dropout"}, "model");
  ModelConfig model;
  if (node.contains("conv"))
    for (const json& layer : node.at("conv")) {
      expect_keys(layer, {"kernel", "channels", "pool"}, "model.conv");
      ConvLayerConfig conv;
      conv.kernel = layer.value("kernel", conv.kernel);
      conv.channels = layer.value("channels", conv.channels);
      conv.pool = layer.value("pool", conv.pool);
      model.conv.push_back(conv);
    }
  if (node.contains("recurrent"))
    model.recurrent = node.at("recurrent").get<std::vector<Index>>();
  const std::string head = node.value("head", "sigmoid");
  if (head == "sigmoid")
    model.head = HeadKind::Sigmoid;
  else if (head == "softmax")
    model.head = HeadKind::Softmax;
  else
    throw Error("config: model.head must be 'sigmoid' or 'softmax', got '" + head + "'");
  model.dropout = node.value("dropout", model.dropout);
  return model;
}

ObjectiveSpec parse_objective(const json& node) {
  expect_keys(node, {"kind", "average"}, "objective");
  ObjectiveSpec objective;
  const std::string kind = node.value("kind", "max");
  if (kind == "ctc")
    objective.kind = ObjectiveSpec::Kind::Ctc;
  else if (kind == "max")
    objective.kind = ObjectiveSpec::Kind::MaxPool;
  else if (kind == "noisy-or")
    objective.kind = ObjectiveSpec::Kind::NoisyOr;
  else
    throw Error("config: objective.kind must be one of ctc|max|noisy-or, got '" + kind + "'");
  const std::string average = node.value("average", "utterances-and-classes");
  if (average == "frames")
    objective.average = AveragingConvention::Frames;
  else if (average == "utterances-and-classes")
    objective.average = AveragingConvention::UtterancesAndClasses;
  else if (average == "frames-and-classes")
    objective.average = AveragingConvention::FramesAndClasses;
  else
    throw Error("config: objective.average must be one of frames|utterances-and-classes|"
                "frames-and-classes, got '" + average + "'");
  return objective;
}

TrainConfig parse_train(const json& node) {
  expect_keys(node, {"learning_rate", "momentum", "clip", "epochs", "schedule", "batch"},
              "train");
  TrainConfig train;
  train.learning_rate = node.value("learning_rate", train.learning_rate);
  train.momentum = node.value("momentum", train.momentum);
  if (node.contains("clip") && !node.at("clip").is_null())
    train.clip_limit = node.at("clip").get<double>();
  train.epochs = node.value("epochs", train.epochs);
  if (node.contains("schedule")) {
    const json& schedule = node.at("schedule");
    expect_keys(schedule, {"kind", "warm_epochs", "factor", "patience"}, "train.schedule");
    const std::string kind = schedule.value("kind", "constant-then-halving");
    if (kind == "constant-then-halving")
      train.schedule.kind = ScheduleKind::ConstantThenHalving;
    else if (kind == "plateau")
      train.schedule.kind = ScheduleKind::Plateau;
    else
      throw Error("config: schedule.kind must be constant-then-halving|plateau, got '" + kind +
                  "'");
    train.schedule.warm_epochs = schedule.value("warm_epochs", train.schedule.warm_epochs);
    train.schedule.factor = schedule.value("factor", train.schedule.factor);
    train.schedule.patience = schedule.value("patience", train.schedule.patience);
  }
  if (node.contains("batch")) {
    const json& batch = node.at("batch");
    expect_keys(batch, {"unit", "size"}, "train.batch");
    const std::string unit = batch.value("unit", "recordings");
    if (unit == "recordings")
      train.batch.unit = BatchUnit::Recordings;
    else if (unit == "frames")
      train.batch.unit = BatchUnit::Frames;
    else
      throw Error("config: batch.unit must be recordings|frames, got '" + unit + "'");
    train.batch.size = batch.value("size", train.batch.size);
  }
  return train;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path.string());
  json root;
  try {
    root = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw Error("config: " + path.string() + ": " + e.what());
  }
  expect_keys(root,
              {"seed", "out", "data", "synth", "export_labels", "model", "objective", "train",
               "evaluate", "tune", "decode", "dump"},
              "top level");

  ExperimentConfig config;
  config.seed = root.value("seed", config.seed);
  if (root.contains("out")) config.out = root.at("out").get<std::string>();
  if (root.contains("data")) config.data = root.at("data").get<std::string>();
  if (root.contains("synth")) config.synth = parse_synth(root.at("synth"));
  const std::string labels = root.value("export_labels", "strong");
  if (labels == "strong")
    config.export_labels = LabelKind::Strong;
  else if (labels == "weak")
    config.export_labels = LabelKind::WeakOnly;
  else
    throw Error("config: export_labels must be strong|weak, got '" + labels + "'");
  if (root.contains("model")) config.model = parse_model(root.at("model"));
  if (root.contains("objective")) config.objective = parse_objective(root.at("objective"));
  if (root.contains("train")) config.train = parse_train(root.at("train"));
  if (root.contains("evaluate")) {
    const json& node = root.at("evaluate");
    expect_keys(node, {"split", "metrics", "thresholds", "oracle"}, "evaluate");
    config.evaluate.split = node.value("split", config.evaluate.split);
    if (node.contains("metrics"))
      config.evaluate.metrics = node.at("metrics").get<std::vector<std::string>>();
    if (node.contains("thresholds") && !node.at("thresholds").is_null())
      config.evaluate.thresholds = node.at("thresholds").get<std::string>();
    config.evaluate.oracle = node.value("oracle", config.evaluate.oracle);
  }
  if (root.contains("tune")) {
    const json& node = root.at("tune");
    expect_keys(node, {"split", "objective"}, "tune");
    config.tune.split = node.value("split", config.tune.split);
    config.tune.objective = node.value("objective", config.tune.objective);
  }
  if (root.contains("decode")) {
    const json& node = root.at("decode");
    expect_keys(node, {"split", "mode", "thresholds"}, "decode");
    config.decode.split = node.value("split", config.decode.split);
    config.decode.mode = node.value("mode", config.decode.mode);
    if (node.contains("thresholds") && !node.at("thresholds").is_null())
      config.decode.thresholds = node.at("thresholds").get<std::string>();
  }
  if (root.contains("dump")) {
    const json& node = root.at("dump");
    expect_keys(node, {"split", "recording"}, "dump");
    config.dump.split = node.value("split", config.dump.split);
    config.dump.recording = node.value("recording", config.dump.recording);
  }
  return config;
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

void save_thresholds(const ThresholdVector& thresholds,
                     const std::vector<std::string>& class_names,
                     const std::filesystem::path& path) {
  if (thresholds.size() != class_names.size())
    throw Error("save_thresholds: one threshold per class required");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("save_thresholds: cannot open " + path.string());
  for (std::size_t c = 0; c < thresholds.size(); ++c)
    out << class_names[c] << '\t' << format_double(thresholds[c]) << '\n';
}

ThresholdVector load_thresholds(const std::filesystem::path& path,
                                const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw Error("load_thresholds: cannot open " + path.string());
  std::map<std::string, double> by_name;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error("load_thresholds: malformed row '" + line + "' in " + path.string());
    by_name[line.substr(0, tab)] = std::stod(line.substr(tab + 1));
  }
  ThresholdVector thresholds;
  for (const auto& name : class_names) {
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw Error("load_thresholds: no threshold for class '" + name + "' in " + path.string());
    thresholds.push_back(it->second);
  }
  return thresholds;
}

namespace {

Dataset load_data(const ExperimentConfig& config) {
  if (config.data.empty()) throw Error("config: 'data' path is required for this subcommand");
  return load_dataset(config.data);
}

ModelConfig resolve_model(const ExperimentConfig& config, const Dataset& dataset) {
  ModelConfig model = config.model;
  model.feature_dim = dataset.feature_dim;
  model.classes = dataset.classes;
  validate(model);
  return model;
}

void check_labels_for_objective(const ExperimentConfig& config, const Dataset& dataset) {
  if (config.objective.kind == ObjectiveSpec::Kind::Ctc &&
      dataset.labels != LabelKind::Strong)
    throw Error("objective ctc requires sequential labels, but the dataset at " +
                config.data.string() + " carries weak labels only");
}

std::filesystem::path checkpoint_path(const ExperimentConfig& config) {
  return config.out / "checkpoint.bin";
}

std::vector<FramePredictions> predict_split(const ModelConfig& model, const ParamSet& params,
                                            const Dataset& dataset,
                                            const std::vector<Bag>& bags) {
  std::vector<FramePredictions> preds;
  preds.reserve(bags.size());
  for (const Bag& bag : bags)
    preds.push_back(forward(model, params, bag.features, dataset.frame_rate));
  return preds;
}

std::vector<Mat> pooled_scores(const std::vector<FramePredictions>& preds, PoolKind kind) {
  std::vector<Mat> scores;
  scores.reserve(preds.size());
  for (const auto& pred : preds) scores.push_back(pool_bag(pred.values, kind).values);
  return scores;
}

PoolKind pool_kind_for(const ObjectiveSpec& objective) {
  if (objective.kind == ObjectiveSpec::Kind::MaxPool) return PoolKind::Max;
  if (objective.kind == ObjectiveSpec::Kind::NoisyOr) return PoolKind::NoisyOr;
  throw Error("bag-level scores require a pooling objective (max or noisy-or)");
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void cmd_gen_data(const ExperimentConfig& config) {
  if (!config.synth) throw Error("gen-data: config has no 'synth' section");
  if (config.data.empty()) throw Error("gen-data: config has no 'data' path");
  SynthConfig synth = *config.synth;
  synth.seed = config.seed;
  save_dataset(generate(synth), config.data, config.export_labels);
}

void cmd_train(const ExperimentConfig& config) {
  const Dataset dataset = load_data(config);
  check_labels_for_objective(config, dataset);
  const ModelConfig model = resolve_model(config, dataset);
  TrainConfig train_config = config.train;
  train_config.seed = config.seed;

  const TrainResult result = train(model, config.objective, train_config, dataset.train,
                                   dataset.valid);
  std::filesystem::create_directories(config.out);
  save_params(result.params, checkpoint_path(config));
  std::ofstream log(config.out / "train_log.csv", std::ios::trunc);
  if (!log) throw Error("train: cannot open " + (config.out / "train_log.csv").string());
  log << "epoch,lr,train_loss,valid_loss,clip_count,clamp_count\n";
  for (const EpochLog& row : result.log)
    log << row.epoch << ',' << format_double(row.lr) << ',' << format_double(row.train_loss)
        << ',' << format_double(row.valid_loss) << ',' << row.clip_count << ','
        << row.clamp_count << '\n';
}

void cmd_decode(const ExperimentConfig& config) {
  const Dataset dataset = load_data(config);
  const ModelConfig model = resolve_model(config, dataset);
  const ParamSet params = load_params(checkpoint_path(config));
  const auto& bags = dataset.split(config.decode.split);
  const auto preds = predict_split(model, params, dataset, bags);
  std::filesystem::create_directories(config.out);

  if (config.decode.mode == "tokens") {
    const auto path = config.out / ("decoded_" + config.decode.split + ".tsv");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("decode: cannot open " + path.string());
    for (std::size_t i = 0; i < bags.size(); ++i) {
      const TokenSequence tokens = model.head == HeadKind::Softmax
                                       ? best_path_decode_ctc(preds[i].values)
                                       : best_path_decode_weak(preds[i].values);
      out << bags[i].id;
      for (std::size_t k = 0; k < tokens.size(); ++k)
        out << (k == 0 ? '\t' : ' ')
            << dataset.class_names[static_cast<std::size_t>(tokens[k])];
      out << '\n';
    }
    return;
  }
  if (config.decode.mode != "intervals")
    throw Error("decode: mode must be tokens|intervals, got '" + config.decode.mode + "'");
  if (model.head != HeadKind::Sigmoid)
    throw Error("decode: interval output requires a sigmoid head");
  ThresholdVector thresholds(static_cast<std::size_t>(dataset.classes), 0.5);
  if (config.decode.thresholds)
    thresholds = load_thresholds(*config.decode.thresholds, dataset.class_names);
  const auto path = config.out / ("intervals_" + config.decode.split + ".tsv");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("decode: cannot open " + path.string());
  for (std::size_t i = 0; i < bags.size(); ++i)
    for (const EventInterval& e :
         intervals_from_frames(preds[i].values, thresholds, preds[i].frame_rate))
      out << bags[i].id << '\t' << format_double(e.onset) << '\t' << format_double(e.offset)
          << '\t' << dataset.class_names[static_cast<std::size_t>(e.class_id)] << '\n';
}

std::vector<std::string> default_metrics(const ModelConfig& model) {
  if (model.head == HeadKind::Softmax) return {"per"};
  return {"tagging", "segments"};
}

void require_strong_labels(const Dataset& dataset, const std::string& metric) {
  if (dataset.labels != LabelKind::Strong)
    throw Error("evaluate: metric '" + metric + "' needs strong labels, but the dataset "
                "carries weak labels only");
}

void cmd_evaluate(const ExperimentConfig& config) {
  const Dataset dataset = load_data(config);
  const ModelConfig model = resolve_model(config, dataset);
  const ParamSet params = load_params(checkpoint_path(config));
  const auto& bags = dataset.split(config.evaluate.split);
  const auto preds = predict_split(model, params, dataset, bags);
  const auto metrics =
      config.evaluate.metrics.empty() ? default_metrics(model) : config.evaluate.metrics;
  std::filesystem::create_directories(config.out);

  std::ostringstream csv;
  csv << "metric,split,value\n";
  const auto emit = [&](const std::string& name, double value) {
    csv << name << ',' << config.evaluate.split << ',' << format_double(value) << '\n';
  };

  ThresholdVector thresholds;
  bool have_thresholds = false;
  const auto ensure_thresholds = [&]() {
    if (have_thresholds) return;
    if (config.evaluate.thresholds) {
      thresholds = load_thresholds(*config.evaluate.thresholds, dataset.class_names);
    } else {
      // No thresholds given: tune on the validation split against tagging F1.
      const auto valid_preds = predict_split(model, params, dataset, dataset.valid);
      const auto valid_scores =
          pooled_scores(valid_preds, pool_kind_for(config.objective));
      std::vector<WeakLabel> valid_refs;
      for (const Bag& bag : dataset.valid) valid_refs.push_back(bag.weak);
      thresholds =
          tune_thresholds(make_tagging_problem(valid_scores, valid_refs), config.seed);
      save_thresholds(thresholds, dataset.class_names, config.out / "thresholds.tsv");
    }
    have_thresholds = true;
  };

  for (const std::string& metric : metrics) {
    if (metric == "per") {
      require_strong_labels(dataset, metric);
      std::vector<std::pair<TokenSequence, TokenSequence>> pairs;
      for (std::size_t i = 0; i < bags.size(); ++i)
        pairs.emplace_back(bags[i].sequential,
                           model.head == HeadKind::Softmax
                               ? best_path_decode_ctc(preds[i].values)
                               : best_path_decode_weak(preds[i].values));
      emit("per", phone_error_rate(pairs));
    } else if (metric == "tagging") {
      ensure_thresholds();
      const auto scores = pooled_scores(preds, pool_kind_for(config.objective));
      std::vector<WeakLabel> refs;
      for (const Bag& bag : bags) refs.push_back(bag.weak);
      emit("tagging_f1", tagging_f1(scores, thresholds, refs));
    } else if (metric == "segments") {
      require_strong_labels(dataset, metric);
      ensure_thresholds();
      std::vector<std::vector<EventInterval>> hyps, refs;
      std::vector<double> durations;
      for (std::size_t i = 0; i < bags.size(); ++i) {
        hyps.push_back(
            intervals_from_frames(preds[i].values, thresholds, preds[i].frame_rate));
        refs.push_back(bags[i].strong);
        durations.push_back(dataset.duration(bags[i]));
      }
      const SegmentMetrics seg = segment_metrics(hyps, refs, durations, dataset.classes);
      emit("segment_er", seg.error_rate);
      emit("segment_f1", seg.f1);
    } else {
      throw Error("evaluate: unknown metric '" + metric + "'");
    }
  }

  if (config.evaluate.oracle) {
    require_strong_labels(dataset, "oracle segments");
    std::vector<Mat> frame_scores;
    std::vector<std::vector<EventInterval>> refs;
    std::vector<double> durations;
    for (std::size_t i = 0; i < bags.size(); ++i) {
      frame_scores.push_back(preds[i].values);
      refs.push_back(bags[i].strong);
      durations.push_back(dataset.duration(bags[i]));
    }
    const ThresholdVector oracle = tune_thresholds(
        make_segment_problem(frame_scores, refs, durations, preds[0].frame_rate,
                             dataset.classes),
        config.seed);
    save_thresholds(oracle, dataset.class_names, config.out / "oracle_thresholds.tsv");
    std::vector<std::vector<EventInterval>> hyps;
    for (std::size_t i = 0; i < bags.size(); ++i)
      hyps.push_back(intervals_from_frames(preds[i].values, oracle, preds[i].frame_rate));
    const SegmentMetrics seg = segment_metrics(hyps, refs, durations, dataset.classes);
    emit("oracle_segment_er", seg.error_rate);
    emit("oracle_segment_f1", seg.f1);
  }

  std::ofstream out(config.out / "metrics.csv", std::ios::trunc);
  if (!out) throw Error("evaluate: cannot open " + (config.out / "metrics.csv").string());
  out << csv.str();
}

void cmd_tune_thresholds(const ExperimentConfig& config) {
  const Dataset dataset = load_data(config);
  const ModelConfig model = resolve_model(config, dataset);
  const ParamSet params = load_params(checkpoint_path(config));
  const auto& bags = dataset.split(config.tune.split);
  const auto preds = predict_split(model, params, dataset, bags);
  std::filesystem::create_directories(config.out);

  ThresholdVector thresholds;
  if (config.tune.objective == "tagging") {
    const auto scores = pooled_scores(preds, pool_kind_for(config.objective));
    std::vector<WeakLabel> refs;
    for (const Bag& bag : bags) refs.push_back(bag.weak);
    thresholds = tune_thresholds(make_tagging_problem(scores, refs), config.seed);
  } else if (config.tune.objective == "segments") {
    require_strong_labels(dataset, "tune segments");
    std::vector<Mat> frame_scores;
    std::vector<std::vector<EventInterval>> refs;
    std::vector<double> durations;
    for (std::size_t i = 0; i < bags.size(); ++i) {
      frame_scores.push_back(preds[i].values);
      refs.push_back(bags[i].strong);
      durations.push_back(dataset.duration(bags[i]));
    }
    thresholds = tune_thresholds(make_segment_problem(frame_scores, refs, durations,
                                                      preds[0].frame_rate, dataset.classes),
                                 config.seed);
  } else {
    throw Error("tune-thresholds: objective must be tagging|segments, got '" +
                config.tune.objective + "'");
  }
  save_thresholds(thresholds, dataset.class_names, config.out / "thresholds.tsv");
}

void cmd_dump_frames(const ExperimentConfig& config) {
  const Dataset dataset = load_data(config);
  const ModelConfig model = resolve_model(config, dataset);
  const ParamSet params = load_params(checkpoint_path(config));
  const auto& bags = dataset.split(config.dump.split);
  const Bag* bag = nullptr;
  if (config.dump.recording.empty()) {
    bag = &bags.at(0);
  } else {
    for (const Bag& candidate : bags)
      if (candidate.id == config.dump.recording) bag = &candidate;
    if (bag == nullptr)
      throw Error("dump-frames: no recording '" + config.dump.recording + "' in split '" +
                  config.dump.split + "'");
  }
  const FramePredictions pred = forward(model, params, bag->features, dataset.frame_rate);
  std::filesystem::create_directories(config.out);
  const auto path = config.out / ("frames_" + bag->id + ".csv");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("dump-frames: cannot open " + path.string());
  out << "frame_time,class,probability\n";
  for (Index f = 0; f < pred.frames(); ++f)
    for (Index c = 0; c < pred.classes(); ++c) {
      const std::string name = c < static_cast<Index>(dataset.class_names.size())
                                   ? dataset.class_names[static_cast<std::size_t>(c)]
                                   : "blank";
      out << format_double(static_cast<double>(f) / pred.frame_rate) << ',' << name << ','
          << format_double(pred.values(f, c)) << '\n';
    }
}

}  // namespace

void run_subcommand(const std::string& name, const ExperimentConfig& config) {
  if (name == "gen-data")
    cmd_gen_data(config);
  else if (name == "train")
    cmd_train(config);
  else if (name == "decode")
    cmd_decode(config);
  else if (name == "evaluate")
    cmd_evaluate(config);
  else if (name == "tune-thresholds")
    cmd_tune_thresholds(config);
  else if (name == "dump-frames")
    cmd_dump_frames(config);
  else
    throw Error("unknown subcommand '" + name + "'");
}

}  // namespace milseq
