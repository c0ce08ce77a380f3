#include "diva/encoders/optim.hpp"

#include <cmath>
#include <string>

#include "diva/error.hpp"

namespace diva::enc {

double layerwise_lr(std::size_t layer_index, std::size_t n_layers, double base_lr, double beta) {
  if (!(beta > 0.0) || beta > 1.0) throw ConfigError("layer-wise decay factor must lie in (0, 1]");
  if (layer_index >= n_layers) {
    throw ConfigError("layer index " + std::to_string(layer_index) + " outside " + std::to_string(n_layers) +
                      " layers");
  }
  return base_lr * std::pow(beta, static_cast<double>(n_layers - 1 - layer_index));
}

void AdamW::step(std::span<Parameter* const> params, std::span<const double> lrs) {
  if (params.size() != lrs.size()) throw ConfigError("AdamW: one learning rate per parameter required");
  for (Parameter* p : params) {
    if (!p->trainable || !p->var.has_grad()) continue;
    for (double g : p->var.grad_buffer()) {
      if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient in parameter '" + p->name + "'");
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable) {
      p.var.zero_grad();
      continue;
    }
    if (!p.var.has_grad()) continue;
    const std::span<double> g = p.var.grad_buffer();
    std::span<double> w = p.var.mutable_value().values();
    Moments& mo = state_[p.var.cell().get()];
    if (mo.m.empty()) {
      mo.m.assign(w.size(), 0.0);
      mo.v.assign(w.size(), 0.0);
    }
    const double lr = lrs[i];
    const double wd = p.decay ? config_.weight_decay : 0.0;
    for (std::size_t e = 0; e < w.size(); ++e) {
      mo.m[e] = config_.beta1 * mo.m[e] + (1.0 - config_.beta1) * g[e];
      mo.v[e] = config_.beta2 * mo.v[e] + (1.0 - config_.beta2) * g[e] * g[e];
      const double mhat = mo.m[e] / bc1;
      const double vhat = mo.v[e] / bc2;
      w[e] -= lr * (mhat / (std::sqrt(vhat) + config_.epsilon) + wd * w[e]);
    }
    p.var.zero_grad();
  }
}

const AdamW::Moments* AdamW::moments(const Parameter& p) const {
  auto it = state_.find(p.var.cell().get());
  return it == state_.end() ? nullptr : &it->second;
}

}  // namespace diva::enc
