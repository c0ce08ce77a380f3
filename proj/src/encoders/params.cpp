#include "diva/encoders/params.hpp"

#include <cmath>

#include "diva/error.hpp"

namespace diva::enc {

ParamStore::ParamStore(const ParamStore& other) { *this = other; }

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this == &other) return *this;
  params_.clear();
  params_.reserve(other.params_.size());
  for (const Parameter& p : other.params_) {
    params_.push_back(Parameter{p.name, ad::Var(p.var.value(), p.var.requires_grad()), p.trainable, p.depth, p.decay});
  }
  return *this;
}

std::size_t ParamStore::add(std::string name, ad::Tensor init, bool trainable, int depth) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name '" + name + "'");
  params_.push_back(Parameter{std::move(name), ad::Var(std::move(init), trainable), trainable, depth, true});
  return params_.size() - 1;
}

Parameter* ParamStore::find(const std::string& name) {
  for (Parameter& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Parameter* ParamStore::find(const std::string& name) const {
  return const_cast<ParamStore*>(this)->find(name);
}

void ParamStore::set_trainable(std::size_t id, bool trainable) {
  params_[id].trainable = trainable;
  params_[id].var.set_requires_grad(trainable);
  if (!trainable) params_[id].var.zero_grad();
}

void ParamStore::set_all_trainable(bool trainable) {
  for (std::size_t i = 0; i < params_.size(); ++i) set_trainable(i, trainable);
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.var.numel();
  return n;
}

std::size_t ParamStore::trainable_elements() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.trainable ? p.var.numel() : 0;
  return n;
}

ad::Tensor truncated_normal(std::mt19937_64& rng, ad::Shape shape, double stddev) {
  ad::Tensor t(std::move(shape), 0.0);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : t.values()) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    v = z * stddev;
  }
  return t;
}

ad::Tensor normal(std::mt19937_64& rng, ad::Shape shape, double stddev) {
  ad::Tensor t(std::move(shape), 0.0);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace diva::enc
