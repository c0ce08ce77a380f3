#include "diva/harness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "diva/error.hpp"

namespace diva::harness {

namespace {
constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();
}

double auc_rank(std::span<const double> scores, std::span<const int> positive) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw InputError("auc: score and label counts differ");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1..j share the midrank (i+1+j)/2.
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) {
        rank_sum += mid;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return kUndefined;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

std::vector<std::size_t> argmax_rows(const ad::Tensor& scores) {
  std::vector<std::size_t> out(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.cols(); ++k)
      if (scores.at(i, k) > scores.at(i, best)) best = k;
    out[i] = best;
  }
  return out;
}

MetricSet compute_metrics(const ad::Tensor& scores, std::span<const std::size_t> predictions,
                          std::span<const std::size_t> labels) {
  const std::size_t n = labels.size(), K = scores.cols();
  if (scores.rows() != n || predictions.size() != n) throw InputError("metrics: scores, predictions and labels differ in length");
  if (n == 0) throw InputError("metrics: no samples");
  MetricSet m;
  m.per_class.resize(K);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= K || predictions[i] >= K) throw InputError("metrics: class id out of range");
    correct += predictions[i] == labels[i];
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  double f1_weighted = 0.0, auc_total = 0.0;
  std::size_t support_total = 0, auc_count = 0;
  std::vector<double> column(n);
  std::vector<int> positive(n);
  for (std::size_t k = 0; k < K; ++k) {
    ClassMetrics& c = m.per_class[k];
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool y = labels[i] == k, p = predictions[i] == k;
      tp += y && p;
      fp += !y && p;
      fn += y && !p;
      c.support += y;
      column[i] = scores.at(i, k);
      positive[i] = y ? 1 : 0;
    }
    if (c.support == 0) {
      c.recall = c.f1 = c.auc = kUndefined;
      c.precision = (tp + fp) == 0 ? kUndefined : 0.0;
      m.warnings.push_back("class " + std::to_string(k) + " is absent from the labels; its F1 and AUC are undefined");
      continue;
    }
    c.precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    c.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    c.f1 = (c.precision + c.recall) == 0.0 ? 0.0 : 2.0 * c.precision * c.recall / (c.precision + c.recall);
    c.auc = auc_rank(column, positive);
    f1_weighted += static_cast<double>(c.support) * c.f1;
    support_total += c.support;
    if (!std::isnan(c.auc)) {
      auc_total += c.auc;
      ++auc_count;
    }
  }
  m.weighted_f1 = f1_weighted / static_cast<double>(support_total);
  m.macro_auc = auc_count == 0 ? kUndefined : auc_total / static_cast<double>(auc_count);
  return m;
}

}  // namespace diva::harness
