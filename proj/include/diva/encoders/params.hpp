#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "diva/autodiff/tensor.hpp"

namespace diva::enc {

inline constexpr int kHeadDepth = -1;

struct Parameter {
  std::string name;
  ad::Var var;
  bool trainable = true;
  // Layer group for layer-wise learning-rate decay; kHeadDepth for task heads.
  int depth = kHeadDepth;
  // Whether AdamW applies decoupled weight decay to this tensor.
  bool decay = true;
};

// Named parameters of one model component. Copying deep-copies every tensor,
// so copies never alias each other's storage.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  std::size_t add(std::string name, ad::Tensor init, bool trainable = true, int depth = kHeadDepth);

  Parameter& operator[](std::size_t id) { return params_[id]; }
  const Parameter& operator[](std::size_t id) const { return params_[id]; }
  const ad::Var& var(std::size_t id) const { return params_[id].var; }

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  void set_trainable(std::size_t id, bool trainable);
  void set_all_trainable(bool trainable);

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t total_elements() const;
  std::size_t trainable_elements() const;

 private:
  std::vector<Parameter> params_;
};

// Normal(0, std) truncated to +-2 std by resampling.
ad::Tensor truncated_normal(std::mt19937_64& rng, ad::Shape shape, double stddev);
ad::Tensor normal(std::mt19937_64& rng, ad::Shape shape, double stddev);

}  // namespace diva::enc
