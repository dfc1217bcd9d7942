#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "milseq/params.hpp"
#include "milseq/rng.hpp"

using namespace milseq;

TEST_SUITE("params") {

TEST_CASE("checkpoints round-trip bit-exactly and keep registration order") {
  Rng rng(61);
  ParamSet params;
  for (int i = 0; i < 5; ++i) {
    Mat m(i + 1, 3);
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-10.0, 10.0);
    params.add("layer" + std::to_string(i) + ".w", m);
  }
  const auto path = std::filesystem::temp_directory_path() / "milseq_params.bin";
  save_params(params, path);
  const ParamSet loaded = load_params(path);
  REQUIRE(loaded.names() == params.names());
  for (const auto& name : params.names()) {
    const Mat& a = params.at(name);
    const Mat& b = loaded.at(name);
    REQUIRE(a.rows() == b.rows());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) ==
          0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("containers with the wrong magic are rejected") {
  const auto path = std::filesystem::temp_directory_path() / "milseq_bad.bin";
  std::ofstream out(path, std::ios::binary);
  out << "NOTAPARM blah blah";
  out.close();
  CHECK_THROWS_WITH_AS(load_params(path), doctest::Contains("MSQPAR01"), Error);
  std::filesystem::remove(path);
}

TEST_CASE("duplicate and missing names are rejected") {
  ParamSet params;
  params.add("w", Mat::Zero(1, 1));
  CHECK_THROWS_AS(params.add("w", Mat::Zero(1, 1)), Error);
  CHECK_THROWS_AS(params.at("missing"), Error);
}

}  // TEST_SUITE
