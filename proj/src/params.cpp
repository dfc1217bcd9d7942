#include "milseq/params.hpp"

#include <cstdint>
#include <fstream>

namespace milseq {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'Q', 'P', 'A', 'R', '0', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void ParamSet::add(std::string name, Mat value) {
  if (contains(name)) throw Error("ParamSet: duplicate name '" + name + "'");
  order_.push_back(name);
  values_.emplace(std::move(name), std::move(value));
}

bool ParamSet::contains(const std::string& name) const { return values_.count(name) != 0; }

Mat& ParamSet::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error("ParamSet: unknown name '" + name + "'");
  return it->second;
}

const Mat& ParamSet::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error("ParamSet: unknown name '" + name + "'");
  return it->second;
}

ParamSet ParamSet::zeros_like(const ParamSet& other) {
  ParamSet out;
  for (const auto& name : other.names()) {
    const Mat& m = other.at(name);
    out.add(name, Mat::Zero(m.rows(), m.cols()));
  }
  return out;
}

void save_params(const ParamSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("save_params: cannot open " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, params.size());
  for (const auto& name : params.names()) {
    const Mat& m = params.at(name);
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, static_cast<std::uint64_t>(m.rows()));
    write_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
  if (!out) throw Error("save_params: write failed for " + path.string());
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_params: cannot open " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic))
    throw Error("load_params: " + path.string() + " is not a MSQPAR01 container");
  const std::uint64_t count = read_u64(in);
  ParamSet params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rows = static_cast<Index>(read_u64(in));
    const auto cols = static_cast<Index>(read_u64(in));
    if (!in || rows < 0 || cols < 0) throw Error("load_params: truncated container");
    Mat m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) {
        double v = 0.0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        m(r, c) = v;
      }
    if (!in) throw Error("load_params: truncated container");
    params.add(std::move(name), std::move(m));
  }
  return params;
}

}  // namespace milseq
