#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "diva/encoders/params.hpp"

namespace diva::enc {

// base_lr * beta^(n_layers - 1 - layer_index); the top layer keeps base_lr.
double layerwise_lr(std::size_t layer_index, std::size_t n_layers, double base_lr, double beta);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // One decoupled-weight-decay update of every trainable parameter that holds
  // a gradient, using lrs[i] for params[i]. Frozen parameters are skipped.
  // All gradients are cleared afterwards.
  void step(std::span<Parameter* const> params, std::span<const double> lrs);

  std::uint64_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }
  const Moments* moments(const Parameter& p) const;

 private:
  AdamWConfig config_;
  std::uint64_t steps_ = 0;
  std::unordered_map<const ad::Cell*, Moments> state_;
};

}  // namespace diva::enc
