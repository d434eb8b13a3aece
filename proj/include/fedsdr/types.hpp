#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace fedsdr {

// All numerics are 64-bit; desk-scale sizes make dynamic Eigen types cheap.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// Thrown for malformed configuration / inputs (CLI maps this to exit code 1;
// any other exception is a runtime error, exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedsdr
