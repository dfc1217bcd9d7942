#include "milseq/synthgen.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "milseq/rng.hpp"

namespace milseq {

namespace {

constexpr char kFeatureMagic[8] = {'M', 'S', 'Q', 'F', 'E', 'A', '0', '1'};
constexpr std::uint64_t kSplitTags[3] = {0x74726169, 0x76616c69, 0x74657374};
const char* kSplitNames[3] = {"train", "valid", "test"};

std::string format_double(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

std::string bag_id(const char* split, Index index) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%s_%05lld", split, static_cast<long long>(index));
  return buffer;
}

// Orthonormal class signatures: QR of a seeded Gaussian matrix.
Mat class_signatures(const SynthConfig& config) {
  Rng rng(mix_seed(config.seed, 0x5349474eULL));  // signature stream
  Mat gaussian(config.feature_dim, config.classes);
  for (Index r = 0; r < gaussian.rows(); ++r)
    for (Index c = 0; c < gaussian.cols(); ++c) gaussian(r, c) = rng.gaussian();
  Eigen::HouseholderQR<Mat> qr(gaussian);
  Mat q = qr.householderQ() * Mat::Identity(config.feature_dim, config.classes);
  return q;
}

struct PlacedEvent {
  int class_id;
  Index onset;   // frames
  Index length;  // frames
};

std::vector<PlacedEvent> place_events(const SynthConfig& config, Rng& rng,
                                      const std::string& id) {
  const auto count = rng.uniform_int(config.min_events, config.max_events);
  std::vector<PlacedEvent> events;
  for (std::int64_t e = 0; e < count; ++e) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      PlacedEvent event;
      event.class_id = static_cast<int>(rng.uniform_int(0, config.classes - 1));
      event.length = rng.uniform_int(config.min_event_frames, config.max_event_frames);
      event.onset = rng.uniform_int(0, config.frames - event.length);
      if (!config.allow_overlap) {
        bool clash = false;
        for (const auto& other : events)
          clash = clash || (event.onset < other.onset + other.length &&
                            other.onset < event.onset + event.length);
        if (clash) continue;
      }
      events.push_back(event);
      placed = true;
    }
    if (!placed)
      throw Error("synthgen: cannot place " + std::to_string(count) +
                  " non-overlapping events in bag " + id + "; loosen the config");
  }
  return events;
}

Bag make_bag(const SynthConfig& config, const Mat& signatures, const char* split, Index index,
             std::uint64_t split_tag) {
  Rng rng(mix_seed(config.seed, split_tag, static_cast<std::uint64_t>(index)));
  Bag bag;
  bag.id = bag_id(split, index);

  bag.features = Mat(config.frames, config.feature_dim);
  for (Index r = 0; r < config.frames; ++r)
    for (Index c = 0; c < config.feature_dim; ++c)
      bag.features(r, c) = config.noise_sigma * rng.gaussian();

  auto events = place_events(config, rng, bag.id);
  for (const auto& event : events)
    bag.features.middleRows(event.onset, event.length).rowwise() +=
        config.signal_amplitude * signatures.col(event.class_id).transpose();

  for (const auto& event : events)
    bag.strong.push_back(EventInterval{
        event.class_id, static_cast<double>(event.onset) / config.frame_rate,
        static_cast<double>(event.onset + event.length) / config.frame_rate});
  std::sort(bag.strong.begin(), bag.strong.end(), [](const auto& a, const auto& b) {
    return std::tie(a.onset, a.class_id, a.offset) < std::tie(b.onset, b.class_id, b.offset);
  });
  bag.weak = weak_from_strong(bag.strong);
  bag.sequential = sequential_from_strong(bag.strong);
  return bag;
}

}  // namespace

void validate(const SynthConfig& config) {
  if (config.classes < 2) throw Error("synth config: need at least 2 classes");
  if (config.feature_dim < config.classes)
    throw Error("synth config: feature_dim must be >= classes for orthonormal signatures");
  if (config.frames < 1) throw Error("synth config: frames must be >= 1");
  if (!(config.frame_rate > 0.0)) throw Error("synth config: frame_rate must be positive");
  if (config.min_event_frames < 1 || config.max_event_frames < config.min_event_frames ||
      config.max_event_frames > config.frames)
    throw Error("synth config: event duration range must lie within [1, frames]");
  if (config.min_events < 0 || config.max_events < config.min_events)
    throw Error("synth config: bad events-per-bag range");
  if (config.noise_sigma < 0.0) throw Error("synth config: noise sigma must be >= 0");
  if (config.train_bags < 1 || config.valid_bags < 1 || config.test_bags < 1)
    throw Error("synth config: every split needs at least one bag");
}

WeakLabel weak_from_strong(const std::vector<EventInterval>& strong) {
  WeakLabel label;
  for (const auto& event : strong) label.present.insert(event.class_id);
  return label;
}

TokenSequence sequential_from_strong(const std::vector<EventInterval>& strong) {
  std::vector<EventInterval> ordered = strong;
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    return std::tie(a.onset, a.class_id, a.offset) < std::tie(b.onset, b.class_id, b.offset);
  });
  TokenSequence tokens;
  for (const auto& event : ordered) tokens.push_back(event.class_id);
  return tokens;
}

const std::vector<Bag>& Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw Error("dataset: unknown split '" + std::string(name) + "'");
}

Dataset generate(const SynthConfig& config) {
  validate(config);
  const Mat signatures = class_signatures(config);
  Dataset dataset;
  dataset.classes = config.classes;
  dataset.feature_dim = config.feature_dim;
  dataset.frame_rate = config.frame_rate;
  dataset.labels = LabelKind::Strong;
  dataset.generator = config;
  for (int c = 0; c < config.classes; ++c) dataset.class_names.push_back("c" + std::to_string(c));

  const Index counts[3] = {config.train_bags, config.valid_bags, config.test_bags};
  std::vector<Bag>* splits[3] = {&dataset.train, &dataset.valid, &dataset.test};
  for (int s = 0; s < 3; ++s)
    for (Index i = 0; i < counts[s]; ++i)
      splits[s]->push_back(make_bag(config, signatures, kSplitNames[s], i, kSplitTags[s]));
  return dataset;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_features(const Mat& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("save_features: cannot open " + path.string());
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  const std::uint64_t rows = static_cast<std::uint64_t>(features.rows());
  const std::uint64_t cols = static_cast<std::uint64_t>(features.cols());
  out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  for (Index r = 0; r < features.rows(); ++r)
    for (Index c = 0; c < features.cols(); ++c) {
      const double v = features(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  if (!out) throw Error("save_features: write failed for " + path.string());
}

Mat load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_features: cannot open " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kFeatureMagic))
    throw Error("load_features: " + path.string() + " is not a MSQFEA01 container");
  std::uint64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  Mat features(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index r = 0; r < features.rows(); ++r)
    for (Index c = 0; c < features.cols(); ++c) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      features(r, c) = v;
    }
  if (!in) throw Error("load_features: truncated container " + path.string());
  return features;
}

namespace {

void save_split(const Dataset& dataset, const std::vector<Bag>& bags,
                const std::filesystem::path& dir, LabelKind labels) {
  std::filesystem::create_directories(dir / "features");
  std::ostringstream strong_rows;
  std::ostringstream weak_rows;
  for (const Bag& bag : bags) {
    save_features(bag.features, dir / "features" / (bag.id + ".bin"));
    for (const auto& event : bag.strong)
      strong_rows << bag.id << '\t' << format_double(event.onset) << '\t'
                  << format_double(event.offset) << '\t'
                  << dataset.class_names[static_cast<std::size_t>(event.class_id)] << '\n';
    for (int c : bag.weak.present)
      weak_rows << bag.id << '\t' << dataset.class_names[static_cast<std::size_t>(c)] << '\n';
  }
  const auto label_path = dir / (labels == LabelKind::Strong ? "strong.tsv" : "weak.tsv");
  std::ofstream out(label_path, std::ios::trunc);
  if (!out) throw Error("save_dataset: cannot open " + label_path.string());
  out << (labels == LabelKind::Strong ? strong_rows.str() : weak_rows.str());
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, LabelKind labels) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "msq-dataset-1";
  manifest["classes"] = dataset.classes;
  manifest["class_names"] = dataset.class_names;
  manifest["feature_dim"] = dataset.feature_dim;
  manifest["frame_rate"] = dataset.frame_rate;
  manifest["labels"] = labels == LabelKind::Strong ? "strong" : "weak";
  manifest["splits"] = {{"train", dataset.train.size()},
                        {"valid", dataset.valid.size()},
                        {"test", dataset.test.size()}};
  if (dataset.generator) {
    const SynthConfig& g = *dataset.generator;
    manifest["generator"] = {{"classes", g.classes},
                             {"feature_dim", g.feature_dim},
                             {"frames", g.frames},
                             {"frame_rate", g.frame_rate},
                             {"event_frames", {g.min_event_frames, g.max_event_frames}},
                             {"events_per_bag", {g.min_events, g.max_events}},
                             {"noise_sigma", g.noise_sigma},
                             {"signal_amplitude", g.signal_amplitude},
                             {"allow_overlap", g.allow_overlap},
                             {"seed", g.seed}};
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error("save_dataset: cannot open " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';

  save_split(dataset, dataset.train, dir / "train", labels);
  save_split(dataset, dataset.valid, dir / "valid", labels);
  save_split(dataset, dataset.test, dir / "test", labels);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

int class_id_for(const Dataset& dataset, const std::string& name, const std::string& where) {
  for (std::size_t c = 0; c < dataset.class_names.size(); ++c)
    if (dataset.class_names[c] == name) return static_cast<int>(c);
  throw Error("load_dataset: unknown class name '" + name + "' in " + where);
}

void load_split(Dataset& dataset, std::vector<Bag>& bags, const std::filesystem::path& dir,
                const char* split, Index count) {
  std::map<std::string, std::size_t> index_by_id;
  for (Index i = 0; i < count; ++i) {
    Bag bag;
    bag.id = bag_id(split, i);
    bag.features = load_features(dir / "features" / (bag.id + ".bin"));
    index_by_id[bag.id] = bags.size();
    bags.push_back(std::move(bag));
  }

  const auto label_path =
      dir / (dataset.labels == LabelKind::Strong ? "strong.tsv" : "weak.tsv");
  std::ifstream in(label_path);
  if (!in) throw Error("load_dataset: missing label file " + label_path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    const auto it = index_by_id.find(fields[0]);
    if (it == index_by_id.end())
      throw Error("load_dataset: label row for unknown bag '" + fields[0] + "'");
    Bag& bag = bags[it->second];
    if (dataset.labels == LabelKind::Strong) {
      if (fields.size() != 4)
        throw Error("load_dataset: malformed strong label row '" + line + "'");
      bag.strong.push_back(EventInterval{class_id_for(dataset, fields[3], label_path.string()),
                                         std::stod(fields[1]), std::stod(fields[2])});
    } else {
      if (fields.size() != 2)
        throw Error("load_dataset: malformed weak label row '" + line + "'");
      bag.weak.present.insert(class_id_for(dataset, fields[1], label_path.string()));
    }
  }
  if (dataset.labels == LabelKind::Strong)
    for (Bag& bag : bags) {
      std::sort(bag.strong.begin(), bag.strong.end(), [](const auto& a, const auto& b) {
        return std::tie(a.onset, a.class_id, a.offset) <
               std::tie(b.onset, b.class_id, b.offset);
      });
      bag.weak = weak_from_strong(bag.strong);
      bag.sequential = sequential_from_strong(bag.strong);
    }
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("load_dataset: missing manifest " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "msq-dataset-1")
    throw Error("load_dataset: unsupported dataset format in " + dir.string());

  Dataset dataset;
  dataset.classes = manifest.at("classes").get<int>();
  dataset.feature_dim = manifest.at("feature_dim").get<Index>();
  dataset.frame_rate = manifest.at("frame_rate").get<double>();
  dataset.class_names = manifest.at("class_names").get<std::vector<std::string>>();
  dataset.labels =
      manifest.at("labels").get<std::string>() == "strong" ? LabelKind::Strong
                                                           : LabelKind::WeakOnly;
  if (manifest.contains("generator")) {
    const nlohmann::json& g = manifest.at("generator");
    SynthConfig generator;
    generator.classes = g.at("classes").get<int>();
    generator.feature_dim = g.at("feature_dim").get<Index>();
    generator.frames = g.at("frames").get<Index>();
    generator.frame_rate = g.at("frame_rate").get<double>();
    generator.min_event_frames = g.at("event_frames").at(0).get<Index>();
    generator.max_event_frames = g.at("event_frames").at(1).get<Index>();
    generator.min_events = g.at("events_per_bag").at(0).get<Index>();
    generator.max_events = g.at("events_per_bag").at(1).get<Index>();
    generator.noise_sigma = g.at("noise_sigma").get<double>();
    generator.signal_amplitude = g.at("signal_amplitude").get<double>();
    generator.allow_overlap = g.at("allow_overlap").get<bool>();
    generator.seed = g.at("seed").get<std::uint64_t>();
    generator.train_bags = manifest.at("splits").at("train").get<Index>();
    generator.valid_bags = manifest.at("splits").at("valid").get<Index>();
    generator.test_bags = manifest.at("splits").at("test").get<Index>();
    dataset.generator = generator;
  }
  load_split(dataset, dataset.train, dir / "train", "train",
             manifest.at("splits").at("train").get<Index>());
  load_split(dataset, dataset.valid, dir / "valid", "valid",
             manifest.at("splits").at("valid").get<Index>());
  load_split(dataset, dataset.test, dir / "test", "test",
             manifest.at("splits").at("test").get<Index>());
  return dataset;
}

}  // namespace milseq
