#pragma once

// Named parameter collections and their on-disk container.
//
// Checkpoint format "MSQPAR01": a flat list of (name, shape, values), binary,
// little-endian.
//   bytes 0..7   magic "MSQPAR01"
//   u64          entry count
//   per entry:   u64 name length, name bytes,
//                u64 rows, u64 cols,
//                rows*cols f64 values in row-major order
// The format carries no timestamps, so identical parameters serialize to
// identical bytes.

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "milseq/types.hpp"

namespace milseq {

class ParamSet {
 public:
  void add(std::string name, Mat value);
  bool contains(const std::string& name) const;
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  // Names in registration order; all iteration in the toolkit follows it.
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  static ParamSet zeros_like(const ParamSet& other);

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Mat> values_;
};

void save_params(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_params(const std::filesystem::path& path);

}  // namespace milseq
