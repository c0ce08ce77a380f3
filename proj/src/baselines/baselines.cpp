#include "diva/baselines/baselines.hpp"

#include <random>
#include <sstream>

#include "diva/error.hpp"

namespace diva::base {

namespace {

constexpr double kFloor = 1e-12;

std::vector<std::string> words_of(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Rows of `rows` placed at the masked positions of a packed sequence batch.
ad::Var scatter_rows(const ad::Var& rows, const std::vector<std::size_t>& source, const ad::Tensor& mask) {
  return ad::mul(ad::gather_rows(rows, source), ad::Var::constant(mask));
}

}  // namespace

const char* baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::linear_probe: return "linear_probe";
    case BaselineKind::clip_adapter: return "clip_adapter";
    case BaselineKind::coop: return "coop";
    case BaselineKind::cocoop: return "cocoop";
  }
  return "?";
}

BaselineKind parse_baseline_kind(const std::string& name) {
  for (auto k : {BaselineKind::linear_probe, BaselineKind::clip_adapter, BaselineKind::coop, BaselineKind::cocoop})
    if (name == baseline_name(k)) return k;
  throw ConfigError("unknown baseline '" + name + "' (expected linear_probe, clip_adapter, coop or cocoop)");
}

void BaselineConfig::validate() const {
  if (!(blend >= 0.0 && blend <= 1.0)) throw ConfigError("clip_adapter blend must lie in [0, 1]");
}

ad::Var grouped_probs(const ad::Var& logits, std::span<const std::size_t> class_map, std::size_t n_classes) {
  if (logits.cols() != class_map.size())
    throw ConfigError("grouped_probs: " + std::to_string(logits.cols()) + " logits for " +
                      std::to_string(class_map.size()) + " prompts");
  ad::Tensor member = ad::Tensor::matrix(class_map.size(), n_classes);
  for (std::size_t c = 0; c < class_map.size(); ++c) {
    if (class_map[c] >= n_classes) throw ConfigError("grouped_probs: class id out of range");
    member.at(c, class_map[c]) = 1.0;
  }
  return ad::matmul(ad::softmax_rows(logits), ad::Var::constant(std::move(member)));
}

ad::Var nll(const ad::Var& probs, std::span<const std::size_t> labels) {
  const std::size_t n = probs.rows(), K = probs.cols();
  if (labels.size() != n || n == 0) throw InputError("nll: one label per row required");
  ad::Tensor onehot = ad::Tensor::matrix(n, K);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= K) throw InputError("nll: label out of range");
    onehot.at(i, labels[i]) = 1.0;
  }
  return ad::scale(ad::sum(ad::mul(ad::log(probs, kFloor), ad::Var::constant(std::move(onehot)))),
                   -1.0 / static_cast<double>(n));
}

ad::Var similarity_logits(const ad::Var& f_v, const ad::Var& f_t, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  return ad::scale(ad::cosine_sim_matrix(f_v, f_t), 1.0 / tau);
}

ClipAdapter::ClipAdapter(std::size_t dim, std::size_t bottleneck, double blend, std::uint64_t seed)
    : dim_(dim), bottleneck_(bottleneck == 0 ? dim / 4 : bottleneck), blend_(blend) {
  if (bottleneck_ == 0) throw ConfigError("clip_adapter: bottleneck must be positive");
  if (!(blend >= 0.0 && blend <= 1.0)) throw ConfigError("clip_adapter blend must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  w1_ = params_.add("adapter.fc1.weight", enc::truncated_normal(rng, {bottleneck_, dim_}, 0.02));
  b1_ = params_.add("adapter.fc1.bias", ad::Tensor({1, bottleneck_}, 0.0));
  w2_ = params_.add("adapter.fc2.weight", ad::Tensor({dim_, bottleneck_}, 0.0));
  b2_ = params_.add("adapter.fc2.bias", ad::Tensor({1, dim_}, 0.0));
}

ad::Var ClipAdapter::adapt(const ad::Var& f_v) const {
  if (f_v.cols() != dim_) throw ConfigError("clip_adapter: feature width mismatch");
  const ad::Var hidden = ad::relu(ad::add(ad::matmul_nt(f_v, params_.var(w1_)), params_.var(b1_)));
  const ad::Var a = ad::add(ad::matmul_nt(hidden, params_.var(w2_)), params_.var(b2_));
  return ad::add(ad::scale(a, blend_), ad::scale(f_v, 1.0 - blend_));
}

PromptContext::PromptContext(const enc::TextEncoder& text, const dicop::AttributeVocabulary& vocab,
                             std::vector<int> class_ids, std::size_t context_length, const std::string& init_words)
    : class_ids_(std::move(class_ids)), m_(context_length) {
  if (class_ids_.empty()) throw ConfigError("prompt context: no classes");
  const auto words = words_of(init_words);
  if (m_ > 0 && words.empty()) throw ConfigError("prompt context: empty initialization phrase");
  std::vector<std::size_t> ctx_ids;
  for (std::size_t m = 0; m < m_; ++m) ctx_ids.push_back(vocab.id(words[m % words.size()]));
  for (int k : class_ids_) {
    dicop::TokenSequence seq{vocab.cls_id()};
    seq.insert(seq.end(), ctx_ids.begin(), ctx_ids.end());
    seq.push_back(vocab.class_token(k));
    prompts_.push_back(std::move(seq));
  }
  base_ = text.embed(prompts_);
  base_.x = ad::Var::constant(base_.x.value());
  const ad::Tensor& table = text.params().var(text.token_table_id()).value();
  const std::size_t h = table.cols();
  if (m_ == 0) return;
  ctx0_ = ad::Tensor::matrix(m_, h);
  for (std::size_t m = 0; m < m_; ++m)
    for (std::size_t j = 0; j < h; ++j) ctx0_.at(m, j) = table.at(ctx_ids[m], j);
  ctx_ = params_.add("context", ctx0_);
}

ad::Var PromptContext::context_delta() const {
  return ad::sub(params_.var(ctx_), ad::Var::constant(ctx0_));
}

ad::Var PromptContext::encode(const enc::TextEncoder& text) const {
  if (m_ == 0) return text.encode_embeddings(base_);
  const std::size_t C = prompts_.size(), T = base_.seq_len, h = base_.x.cols();
  std::vector<std::size_t> source(C * T, 0);
  ad::Tensor mask = ad::Tensor::matrix(C * T, h);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t m = 0; m < m_; ++m) {
      source[c * T + 1 + m] = m;
      for (std::size_t j = 0; j < h; ++j) mask.at(c * T + 1 + m, j) = 1.0;
    }
  }
  enc::TokenEmbeddings emb = base_;
  emb.x = ad::add(base_.x, scatter_rows(context_delta(), source, mask));
  return text.encode_embeddings(emb);
}

ad::Var PromptContext::encode_shifted(const enc::TextEncoder& text, const ad::Var& shifts) const {
  const std::size_t C = prompts_.size(), T = base_.seq_len, h = base_.x.cols(), n = shifts.rows();
  if (shifts.cols() != h) throw ConfigError("prompt context: shift width mismatch");
  std::vector<std::size_t> tile(n * C * T), ctx_source(n * C * T, 0), img_source(n * C * T, 0);
  ad::Tensor mask = ad::Tensor::matrix(n * C * T, h);
  enc::TokenEmbeddings emb;
  emb.seq_len = T;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      emb.lengths.push_back(T);
      const std::size_t s = i * C + c;
      for (std::size_t t = 0; t < T; ++t) tile[s * T + t] = c * T + t;
      for (std::size_t m = 0; m < m_; ++m) {
        ctx_source[s * T + 1 + m] = m;
        img_source[s * T + 1 + m] = i;
        for (std::size_t j = 0; j < h; ++j) mask.at(s * T + 1 + m, j) = 1.0;
      }
    }
  }
  ad::Var x = ad::gather_rows(base_.x, tile);
  if (m_ > 0) {
    x = ad::add(x, scatter_rows(context_delta(), ctx_source, mask));
    x = ad::add(x, scatter_rows(shifts, img_source, mask));
  }
  emb.x = x;
  return text.encode_embeddings(emb);
}

MetaNet::MetaNet(std::size_t dim, std::size_t bottleneck, std::uint64_t seed)
    : dim_(dim), bottleneck_(bottleneck == 0 ? dim / 16 : bottleneck) {
  if (bottleneck_ == 0) throw ConfigError("meta-net: feature width " + std::to_string(dim) + " is too small");
  std::mt19937_64 rng(seed);
  w1_ = params_.add("meta.fc1.weight", enc::truncated_normal(rng, {bottleneck_, dim_}, 0.02));
  b1_ = params_.add("meta.fc1.bias", ad::Tensor({1, bottleneck_}, 0.0));
  w2_ = params_.add("meta.fc2.weight", enc::truncated_normal(rng, {dim_, bottleneck_}, 0.02));
  b2_ = params_.add("meta.fc2.bias", ad::Tensor({1, dim_}, 0.0));
}

ad::Var MetaNet::shift(const ad::Var& f_v) const {
  if (f_v.cols() != dim_) throw ConfigError("meta-net: feature width mismatch");
  const ad::Var hidden = ad::relu(ad::add(ad::matmul_nt(f_v, params_.var(w1_)), params_.var(b1_)));
  return ad::add(ad::matmul_nt(hidden, params_.var(w2_)), params_.var(b2_));
}

ad::Var conditioned_logits(const ad::Var& f_v, const ad::Var& f_t, std::size_t n_prompts, double tau) {
  const std::size_t n = f_v.rows();
  if (f_t.rows() != n * n_prompts) throw ConfigError("conditioned_logits: expected n * C prompt rows");
  // Keep only image i's own prompt block, then fold the n*C columns into C.
  ad::Tensor mask = ad::Tensor::matrix(n, n * n_prompts);
  ad::Tensor fold = ad::Tensor::matrix(n * n_prompts, n_prompts);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < n_prompts; ++c) {
      mask.at(i, i * n_prompts + c) = 1.0;
      fold.at(i * n_prompts + c, c) = 1.0;
    }
  const ad::Var own = ad::mul(similarity_logits(f_v, f_t, tau), ad::Var::constant(std::move(mask)));
  return ad::matmul(own, ad::Var::constant(std::move(fold)));
}

}  // namespace diva::base
