#include "diva/dpl/dpl.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "diva/error.hpp"

namespace diva::dpl {

void LossWeights::validate() const {
  if (!(tau1 > 0.0) || !(tau2 > 0.0)) throw ConfigError("temperatures tau1 and tau2 must be positive");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("weights lambda1 and lambda2 must be non-negative");
}

PrototypeSet::PrototypeSet(const ad::Tensor& anchors, std::vector<std::size_t> class_map, std::size_t n_classes)
    : anchors_(anchors), class_map_(std::move(class_map)), n_classes_(n_classes) {
  if (class_map_.size() != anchors_.rows()) {
    throw ConfigError("prototype set: " + std::to_string(class_map_.size()) + " class entries for " +
                      std::to_string(anchors_.rows()) + " prototypes");
  }
  if (n_classes_ == 0 || n_classes_ > class_map_.size()) {
    throw ConfigError("prototype set: need 1 <= K <= C, got K=" + std::to_string(n_classes_) +
                      " C=" + std::to_string(class_map_.size()));
  }
  std::vector<bool> hit(n_classes_, false);
  for (std::size_t c : class_map_) {
    if (c >= n_classes_) throw ConfigError("prototype set: class " + std::to_string(c) + " out of range");
    hit[c] = true;
  }
  for (std::size_t c = 0; c < n_classes_; ++c) {
    if (!hit[c]) throw ConfigError("prototype set: class " + std::to_string(c) + " has no prototype");
  }
  const std::size_t id = params_.add("m", anchors_);
  params_[id].decay = false;
}

const ad::Var& PrototypeSet::m() const {
  calls_.bump();
  return params_.var(0);
}

double PrototypeSet::mean_anchor_distance() const {
  const ad::Tensor& m = params_.var(0).value();
  double total = 0.0;
  for (std::size_t k = 0; k < m.rows(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double d = m.at(k, j) - anchors_.at(k, j);
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(m.rows());
}

ad::Var loss_ita(const ad::Var& f_v, const ad::Var& f_ts, double tau1) {
  const std::size_t n = f_v.rows();
  if (n == 0 || f_v.numel() == 0) throw InputError("loss_ita: empty batch");
  if (f_ts.rows() != n || f_ts.cols() != f_v.cols()) {
    throw ConfigError("loss_ita: image and prompt batches differ in shape");
  }
  std::vector<std::size_t> diag(n);
  std::iota(diag.begin(), diag.end(), 0);
  const ad::Var logits = ad::scale(ad::cosine_sim_matrix(f_v, f_ts), 1.0 / tau1);
  const ad::Var image_to_text = ad::mean(ad::cross_entropy_rows(logits, diag));
  const ad::Var text_to_image = ad::mean(ad::cross_entropy_rows(ad::transpose(logits), diag));
  return ad::scale(ad::add(image_to_text, text_to_image), 0.5);
}

ProtTerms loss_prot_terms(const ad::Var& f_v, const ad::Var& f_ts, std::span<const std::size_t> prototype_ids,
                          const ad::Var& prototypes, double tau2, double lambda1, ProtSign sign) {
  const std::size_t n = f_v.rows(), C = prototypes.rows();
  if (prototype_ids.empty()) throw InputError("loss_prot: empty batch");
  if (prototype_ids.size() != n || f_ts.rows() != n) throw ConfigError("loss_prot: batch sizes disagree");
  std::vector<double> group_size(C, 0.0);
  for (std::size_t k : prototype_ids) {
    if (k >= C) throw ConfigError("loss_prot: prototype id " + std::to_string(k) + " out of range");
    group_size[k] += 1.0;
  }
  ad::Tensor weight = ad::Tensor::matrix(n, C);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = prototype_ids[i];
    weight.at(i, k) = 1.0 / (2.0 * group_size[k]);
  }
  const ad::Var w = ad::Var::constant(std::move(weight));
  auto pulled = [&](const ad::Var& f) {
    return ad::sum(ad::mul(ad::exp(ad::scale(ad::cosine_sim_matrix(f, prototypes), 1.0 / tau2)), w));
  };
  ProtTerms t;
  t.attraction = ad::add(pulled(f_v), pulled(f_ts));
  ad::Tensor off_diag = ad::Tensor::matrix(C, C, 1.0);
  for (std::size_t k = 0; k < C; ++k) off_diag.at(k, k) = 0.0;
  const ad::Var pair_sims = ad::exp(ad::scale(ad::cosine_sim_matrix(prototypes, prototypes), 1.0 / tau2));
  t.separation = ad::scale(ad::sum(ad::mul(pair_sims, ad::Var::constant(std::move(off_diag)))), lambda1);
  t.total = sign == ProtSign::intent ? ad::sub(t.separation, t.attraction) : ad::sub(t.attraction, t.separation);
  return t;
}

ad::Var loss_prot(const ad::Var& f_v, const ad::Var& f_ts, std::span<const std::size_t> prototype_ids,
                  const ad::Var& prototypes, double tau2, double lambda1, ProtSign sign) {
  return loss_prot_terms(f_v, f_ts, prototype_ids, prototypes, tau2, lambda1, sign).total;
}

RegCeTerms loss_reg_ce_terms(const ad::Var& probs, std::span<const std::size_t> labels, const ad::Var& prototypes,
                             const ad::Tensor& anchors, double lambda2) {
  const std::size_t n = probs.rows(), K = probs.cols();
  if (labels.empty()) throw InputError("loss_reg_ce: empty batch");
  if (labels.size() != n) throw ConfigError("loss_reg_ce: one label per row required");
  if (prototypes.rows() != anchors.rows() || prototypes.cols() != anchors.cols()) {
    throw ConfigError("loss_reg_ce: prototypes and anchors differ in shape");
  }
  ad::Tensor onehot = ad::Tensor::matrix(n, K);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= K) throw ConfigError("loss_reg_ce: label " + std::to_string(labels[i]) + " out of range");
    onehot.at(i, labels[i]) = 1.0;
  }
  RegCeTerms t;
  const ad::Var picked = ad::mul(ad::log(probs, kProbFloor), ad::Var::constant(std::move(onehot)));
  t.ce = ad::scale(ad::sum(picked), -1.0 / static_cast<double>(n));
  const ad::Var dist = ad::row_norms(ad::sub(prototypes, ad::Var::constant(anchors)));
  t.reg = ad::scale(ad::sum(dist), lambda2 / static_cast<double>(prototypes.rows()));
  t.total = ad::add(t.ce, t.reg);
  return t;
}

ad::Var loss_reg_ce(const ad::Var& probs, std::span<const std::size_t> labels, const ad::Var& prototypes,
                    const ad::Tensor& anchors, double lambda2) {
  return loss_reg_ce_terms(probs, labels, prototypes, anchors, lambda2).total;
}

Classifier::Classifier(std::size_t in_dim, std::size_t n_classes, double logit_scale)
    : in_dim_(in_dim), n_classes_(n_classes), logit_scale_(logit_scale) {
  if (in_dim == 0 || n_classes == 0) throw ConfigError("classifier: widths must be positive");
  if (!(logit_scale > 0.0)) throw ConfigError("classifier: logit scale must be positive");
  w_ = params_.add("weight", ad::Tensor({n_classes, in_dim}, 0.0));
  b_ = params_.add("bias", ad::Tensor({1, n_classes}, 0.0));
}

ad::Var Classifier::logits(const ad::Var& f_v) const {
  calls_.bump();
  if (f_v.cols() != in_dim_) {
    throw ConfigError("classifier: expected width " + std::to_string(in_dim_) + ", got " +
                      std::to_string(f_v.cols()));
  }
  const ad::Var z = ad::add(ad::matmul_nt(f_v, params_.var(w_)), params_.var(b_));
  return logit_scale_ == 1.0 ? z : ad::scale(z, logit_scale_);
}

TotalLoss total_loss(const BatchView& batch, const PrototypeSet& prototypes, const LossWeights& weights,
                     const LossSwitches& switches, ProtSign sign) {
  weights.validate();
  const std::size_t n = batch.labels.size();
  if (n == 0) throw InputError("total_loss: empty batch");
  if (batch.prototype_ids.size() != n) throw ConfigError("total_loss: one prototype id per sample required");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = batch.prototype_ids[i];
    if (k >= prototypes.size() || prototypes.class_of(k) != batch.labels[i]) {
      throw InputError("total_loss: sample " + std::to_string(i) + " has prototype " + std::to_string(k) +
                       " that does not belong to its class " + std::to_string(batch.labels[i]));
    }
  }
  const ad::Var& m = prototypes.m();
  const ad::Var zero = ad::Var::constant(ad::Tensor::scalar(0.0));
  const ad::Var ita = switches.ita ? loss_ita(batch.f_v, batch.f_ts, weights.tau1) : zero;
  const ad::Var prot = switches.prot
                           ? loss_prot(batch.f_v, batch.f_ts, batch.prototype_ids, m, weights.tau2, weights.lambda1,
                                       sign)
                           : zero;
  const ad::Var reg_ce = loss_reg_ce(batch.probs, batch.labels, m, prototypes.anchors(),
                                     switches.regularize ? weights.lambda2 : 0.0);
  TotalLoss out;
  out.total = ad::add(ad::add(ita, prot), reg_ce);
  out.breakdown.l_ita = ita.item();
  out.breakdown.l_prot = prot.item();
  out.breakdown.l_reg_ce = reg_ce.item();
  out.breakdown.l_total = out.total.item();
  return out;
}

}  // namespace diva::dpl
