#pragma once

#include <random>

#include "diva/autodiff/ops.hpp"

namespace diva::testing {

inline ad::Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                                double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Tensor t = ad::Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// sum(y * w) with fixed random weights, so every output element matters.
inline ad::Var weighted_sum(const ad::Var& y, std::mt19937_64& rng) {
  return ad::sum(ad::mul(y, ad::Var::constant(random_tensor(rng, y.rows(), y.cols()))));
}

}  // namespace diva::testing
