#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "diva/autodiff/ops.hpp"
#include "diva/call_counter.hpp"
#include "diva/encoders/params.hpp"

namespace diva::dpl {

struct LossWeights {
  double tau1 = 0.07;
  double tau2 = 0.07;
  double lambda1 = 0.1;
  double lambda2 = 0.1;

  void validate() const;
};

// Sign convention of the prototype loss. `intent` pulls samples toward their
// prototype and pushes prototypes apart; `printed` flips both terms.
enum class ProtSign { intent, printed };

struct LossBreakdown {
  double l_ita = 0.0;
  double l_prot = 0.0;
  double l_reg_ce = 0.0;
  double l_total = 0.0;
};

// C trainable prototypes with frozen anchors and a prototype -> class map.
class PrototypeSet {
 public:
  // Prototypes start as exact copies of `anchors` (C x h).
  PrototypeSet(const ad::Tensor& anchors, std::vector<std::size_t> class_map, std::size_t n_classes);

  std::size_t size() const { return class_map_.size(); }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t class_of(std::size_t prototype) const { return class_map_.at(prototype); }
  const std::vector<std::size_t>& class_map() const { return class_map_; }

  // Counts every read of the trainable prototypes.
  const ad::Var& m() const;
  const ad::Tensor& anchors() const { return anchors_; }
  enc::ParamStore& params() { return params_; }
  const enc::ParamStore& params() const { return params_; }

  // mean_k ||m_k - anchor_k||_2
  double mean_anchor_distance() const;
  const CallCounter& calls() const { return calls_; }

 private:
  enc::ParamStore params_;
  ad::Tensor anchors_;
  std::vector<std::size_t> class_map_;
  std::size_t n_classes_ = 0;
  CallCounter calls_;
};

// Symmetric InfoNCE over the n x n cosine matrix of (f_v_i, f_ts_j) / tau1,
// averaged over both directions.
ad::Var loss_ita(const ad::Var& f_v, const ad::Var& f_ts, double tau1);

struct ProtTerms {
  ad::Var attraction;  // sum_k 1/(2|S_k|) sum_{i in S_k} [exp(cos(f_v_i,m_k)/tau2) + exp(cos(f_ts_i,m_k)/tau2)]
  ad::Var separation;  // lambda1 * sum_{k != j} exp(cos(m_k,m_j)/tau2)
  ad::Var total;       // -attraction + separation (intent) or attraction - separation (printed)
};

ProtTerms loss_prot_terms(const ad::Var& f_v, const ad::Var& f_ts, std::span<const std::size_t> prototype_ids,
                          const ad::Var& prototypes, double tau2, double lambda1,
                          ProtSign sign = ProtSign::intent);
ad::Var loss_prot(const ad::Var& f_v, const ad::Var& f_ts, std::span<const std::size_t> prototype_ids,
                  const ad::Var& prototypes, double tau2, double lambda1, ProtSign sign = ProtSign::intent);

inline constexpr double kProbFloor = 1e-12;

struct RegCeTerms {
  ad::Var ce;   // -(1/N) sum_i log(max(p_i[y_i], 1e-12))
  ad::Var reg;  // (lambda2/C) sum_k ||m_k - anchor_k||_2
  ad::Var total;
};

RegCeTerms loss_reg_ce_terms(const ad::Var& probs, std::span<const std::size_t> labels, const ad::Var& prototypes,
                             const ad::Tensor& anchors, double lambda2);
ad::Var loss_reg_ce(const ad::Var& probs, std::span<const std::size_t> labels, const ad::Var& prototypes,
                    const ad::Tensor& anchors, double lambda2);

// K-way affine map followed by softmax; logits are multiplied by
// `logit_scale` (features reaching it are unit-norm).
class Classifier {
 public:
  // Zero-initialized, so an untrained head predicts the uniform distribution.
  Classifier(std::size_t in_dim, std::size_t n_classes, double logit_scale = 1.0);

  ad::Var logits(const ad::Var& f_v) const;
  ad::Var classify(const ad::Var& f_v) const { return ad::softmax_rows(logits(f_v)); }

  std::size_t n_classes() const { return n_classes_; }
  double logit_scale() const { return logit_scale_; }
  enc::ParamStore& params() { return params_; }
  const enc::ParamStore& params() const { return params_; }
  std::size_t weight_id() const { return w_; }
  std::size_t bias_id() const { return b_; }
  const CallCounter& calls() const { return calls_; }

 private:
  std::size_t in_dim_, n_classes_;
  double logit_scale_;
  enc::ParamStore params_;
  std::size_t w_ = 0, b_ = 0;
  CallCounter calls_;
};

// Which terms participate in L_total (ablation switches).
struct LossSwitches {
  bool ita = true;
  bool prot = true;
  bool regularize = true;  // false replaces L_reg-ce by plain cross-entropy
};

struct BatchView {
  ad::Var f_v;    // n x h
  ad::Var f_ts;   // n x h
  ad::Var probs;  // n x K
  std::span<const std::size_t> labels;
  std::span<const std::size_t> prototype_ids;
};

struct TotalLoss {
  ad::Var total;
  LossBreakdown breakdown;
};

// L_total = L_ita + L_prot + L_reg-ce. Checks that every prototype id maps to
// the sample's class label.
TotalLoss total_loss(const BatchView& batch, const PrototypeSet& prototypes, const LossWeights& weights,
                     const LossSwitches& switches = {}, ProtSign sign = ProtSign::intent);

}  // namespace diva::dpl
