#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "diva/autodiff/ops.hpp"
#include "diva/call_counter.hpp"
#include "diva/dicop/prompts.hpp"
#include "diva/encoders/params.hpp"
#include "diva/encoders/transformer.hpp"

namespace diva::base {

enum class BaselineKind { linear_probe, clip_adapter, coop, cocoop };
const char* baseline_name(BaselineKind kind);
BaselineKind parse_baseline_kind(const std::string& name);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::linear_probe;
  double blend = 0.2;                 // CLIP-Adapter residual ratio
  std::size_t adapter_bottleneck = 0;  // 0 selects h / 4
  std::size_t context_length = 4;     // CoOp / CoCoOp M
  std::size_t meta_bottleneck = 0;     // 0 selects h / 16
  void validate() const;
};

// Softmax over C prompt logits summed into K class probabilities.
ad::Var grouped_probs(const ad::Var& logits, std::span<const std::size_t> class_map, std::size_t n_classes);

// -mean_i log(max(p_i[y_i], 1e-12))
ad::Var nll(const ad::Var& probs, std::span<const std::size_t> labels);

// cos(f_v, f_t) / tau for n images against C prompt features.
ad::Var similarity_logits(const ad::Var& f_v, const ad::Var& f_t, double tau);

// f' = blend * A(f_v) + (1 - blend) * f_v with A = Linear-ReLU-Linear.
// The second layer starts at zero, so A(f_v) = 0 before training.
class ClipAdapter {
 public:
  ClipAdapter(std::size_t dim, std::size_t bottleneck, double blend, std::uint64_t seed);
  ad::Var adapt(const ad::Var& f_v) const;
  std::size_t bottleneck() const { return bottleneck_; }
  double blend() const { return blend_; }
  enc::ParamStore& params() { return params_; }
  const enc::ParamStore& params() const { return params_; }
  std::size_t second_weight_id() const { return w2_; }

 private:
  std::size_t dim_, bottleneck_;
  double blend_;
  enc::ParamStore params_;
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
};

// Learned context tokens shared by all classes: [CLS] ctx_1..ctx_M class<k>.
// The context starts at the token embeddings of `init_words` (cycled when M
// exceeds their count), so the first forward pass reproduces the hand-written
// prompt exactly.
class PromptContext {
 public:
  PromptContext(const enc::TextEncoder& text, const dicop::AttributeVocabulary& vocab, std::vector<int> class_ids,
                std::size_t context_length, const std::string& init_words = "image of a finding");
  std::size_t context_length() const { return m_; }
  std::size_t n_prompts() const { return class_ids_.size(); }
  const std::vector<dicop::TokenSequence>& init_prompts() const { return prompts_; }
  // C x h prompt features.
  ad::Var encode(const enc::TextEncoder& text) const;
  // (n * C) x h features; rows i*C..i*C+C-1 use context + shifts[i].
  ad::Var encode_shifted(const enc::TextEncoder& text, const ad::Var& shifts) const;
  enc::ParamStore& params() { return params_; }
  const enc::ParamStore& params() const { return params_; }
  std::size_t context_id() const { return ctx_; }

 private:
  ad::Var context_delta() const;
  std::vector<int> class_ids_;
  std::size_t m_ = 0;
  std::vector<dicop::TokenSequence> prompts_;
  enc::TokenEmbeddings base_;
  ad::Tensor ctx0_;
  enc::ParamStore params_;
  std::size_t ctx_ = 0;
};

// CoCoOp meta-network: Linear-ReLU-Linear from f_v to one context shift.
class MetaNet {
 public:
  MetaNet(std::size_t dim, std::size_t bottleneck, std::uint64_t seed);
  ad::Var shift(const ad::Var& f_v) const;
  std::size_t bottleneck() const { return bottleneck_; }
  enc::ParamStore& params() { return params_; }
  const enc::ParamStore& params() const { return params_; }
  std::size_t second_weight_id() const { return w2_; }
  std::size_t second_bias_id() const { return b2_; }

 private:
  std::size_t dim_, bottleneck_;
  enc::ParamStore params_;
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
};

// Per-image logits n x C from (n * C) x h conditioned prompt features.
ad::Var conditioned_logits(const ad::Var& f_v, const ad::Var& f_t, std::size_t n_prompts, double tau);

}  // namespace diva::base
