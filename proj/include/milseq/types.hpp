#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace milseq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace milseq
