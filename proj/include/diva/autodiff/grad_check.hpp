#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diva/autodiff/tensor.hpp"

namespace diva::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_element = 0;
  std::size_t probes = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  bool passed = true;
};

// Compares tape gradients of a scalar function against central differences.
// Relative error per element is |a - n| / max(1, |a|, |n|).
GradCheckReport grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step = 1e-4,
                           double tol = 1e-3);

// Same check over existing leaves (model parameters) that `f` closes over.
// Elements are perturbed in place and restored. When a leaf has more than
// `max_per_leaf` elements an evenly strided subset is probed.
GradCheckReport grad_check_leaves(const std::function<Var()>& f, std::span<Var> leaves, double step = 1e-4,
                                  double tol = 1e-3, std::size_t max_per_leaf = 0);

}  // namespace diva::ad
