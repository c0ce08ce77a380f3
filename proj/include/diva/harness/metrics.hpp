#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "diva/autodiff/tensor.hpp"

namespace diva::harness {

// Per-class scores; NaN marks a value that is undefined because the class has
// no support in the labels.
struct ClassMetrics {
  std::size_t support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
};

struct MetricSet {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double macro_auc = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::string> warnings;
};

// Rank-sum AUC with midranks for ties; positives are label == 1.
double auc_rank(std::span<const double> scores, std::span<const int> positive);

// Lowest-index argmax of every row.
std::vector<std::size_t> argmax_rows(const ad::Tensor& scores);

// scores: n x K class probabilities.
MetricSet compute_metrics(const ad::Tensor& scores, std::span<const std::size_t> predictions,
                          std::span<const std::size_t> labels);

}  // namespace diva::harness
