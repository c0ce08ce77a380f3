#include "diva/encoders/transformer.hpp"

#include <algorithm>

#include "diva/error.hpp"

namespace diva::enc {

namespace {

constexpr double kInitStd = 0.02;

BlockParams add_block(ParamStore& store, const std::string& prefix, std::size_t h, std::size_t mlp, int depth,
                      std::mt19937_64& rng) {
  auto w = [&](const std::string& n, std::size_t out, std::size_t in) {
    return store.add(prefix + n, truncated_normal(rng, {out, in}, kInitStd), true, depth);
  };
  auto v = [&](const std::string& n, std::size_t d, double fill) {
    return store.add(prefix + n, ad::Tensor({1, d}, fill), true, depth);
  };
  BlockParams b{};
  b.ln1_g = v("ln1.gamma", h, 1.0);
  b.ln1_b = v("ln1.beta", h, 0.0);
  b.wq = w("attn.q.weight", h, h);
  b.bq = v("attn.q.bias", h, 0.0);
  b.wk = w("attn.k.weight", h, h);
  b.bk = v("attn.k.bias", h, 0.0);
  b.wv = w("attn.v.weight", h, h);
  b.bv = v("attn.v.bias", h, 0.0);
  b.wo = w("attn.out.weight", h, h);
  b.bo = v("attn.out.bias", h, 0.0);
  b.ln2_g = v("ln2.gamma", h, 1.0);
  b.ln2_b = v("ln2.beta", h, 0.0);
  b.w1 = w("mlp.fc1.weight", mlp, h);
  b.b1 = v("mlp.fc1.bias", mlp, 0.0);
  b.w2 = w("mlp.fc2.weight", h, mlp);
  b.b2 = v("mlp.fc2.bias", h, 0.0);
  return b;
}

ad::Var linear(const ParamStore& s, const ad::Var& x, std::size_t w, std::size_t b, const LoRAAdapter* lora) {
  ad::Var y = ad::add(ad::matmul_nt(x, s.var(w)), s.var(b));
  if (lora != nullptr) {
    const ad::Var low = ad::matmul_nt(ad::matmul_nt(x, s.var(lora->a_id)), s.var(lora->b_id));
    y = ad::add(y, ad::scale(low, lora->scaling()));
  }
  return y;
}

ad::Var run_block(const ParamStore& s, const BlockParams& b, const std::vector<LoRAAdapter>& adapters,
                  const ad::Var& x, std::size_t seq_len, std::size_t heads, std::span<const std::size_t> lengths) {
  const LoRAAdapter* lq = b.lora_q ? &adapters[*b.lora_q] : nullptr;
  const LoRAAdapter* lv = b.lora_v ? &adapters[*b.lora_v] : nullptr;
  const ad::Var n1 = ad::layernorm(x, s.var(b.ln1_g), s.var(b.ln1_b));
  const ad::Var q = linear(s, n1, b.wq, b.bq, lq);
  const ad::Var k = linear(s, n1, b.wk, b.bk, nullptr);
  const ad::Var v = linear(s, n1, b.wv, b.bv, lv);
  const ad::Var att = ad::attention(q, k, v, seq_len, heads, lengths);
  const ad::Var x1 = ad::add(x, linear(s, att, b.wo, b.bo, nullptr));
  const ad::Var n2 = ad::layernorm(x1, s.var(b.ln2_g), s.var(b.ln2_b));
  const ad::Var hid = ad::relu(linear(s, n2, b.w1, b.b1, nullptr));
  return ad::add(x1, linear(s, hid, b.w2, b.b2, nullptr));
}

std::vector<std::size_t> cls_rows(std::size_t n_seq, std::size_t seq_len) {
  std::vector<std::size_t> rows(n_seq);
  for (std::size_t s = 0; s < n_seq; ++s) rows[s] = s * seq_len;
  return rows;
}

void check_common(std::size_t h, std::size_t heads, std::size_t layers, std::size_t mlp, const char* what) {
  if (h == 0 || heads == 0 || h % heads != 0) {
    throw ConfigError(std::string(what) + ": embed_dim must be a positive multiple of n_heads");
  }
  if (layers == 0 || mlp == 0) throw ConfigError(std::string(what) + ": n_layers and mlp_dim must be positive");
}

}  // namespace

void TextEncoderConfig::validate() const {
  check_common(embed_dim, n_heads, n_layers, mlp_dim, "text encoder");
  if (vocab_size < 2 || max_seq_len < 1) throw ConfigError("text encoder: vocab_size >= 2 and max_seq_len >= 1");
}

void VisionEncoderConfig::validate() const {
  check_common(embed_dim, n_heads, n_layers, mlp_dim, "vision encoder");
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("vision encoder: image_size must be a positive multiple of patch_size");
  }
}

TextEncoder::TextEncoder(const TextEncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t h = config_.embed_dim;
  token_table_ = params_.add("token_embedding", truncated_normal(rng, {config_.vocab_size, h}, kInitStd), true, 0);
  positions_ = params_.add("position_embedding", truncated_normal(rng, {config_.max_seq_len, h}, kInitStd), true, 0);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    blocks_.push_back(add_block(params_, "block" + std::to_string(l) + ".", h, config_.mlp_dim,
                                static_cast<int>(l + 1), rng));
  }
  const int top = static_cast<int>(config_.n_layers + 1);
  final_g_ = params_.add("final_norm.gamma", ad::Tensor({1, h}, 1.0), true, top);
  final_b_ = params_.add("final_norm.beta", ad::Tensor({1, h}, 0.0), true, top);
}

TokenEmbeddings TextEncoder::embed(std::span<const TokenSequence> sequences) const {
  if (sequences.empty()) throw InputError("text encoder: empty batch");
  TokenEmbeddings out;
  for (const TokenSequence& seq : sequences) {
    if (seq.empty()) throw InputError("text encoder: empty token sequence");
    if (seq.size() > config_.max_seq_len) {
      throw InputError("text encoder: sequence of length " + std::to_string(seq.size()) + " exceeds max_seq_len " +
                       std::to_string(config_.max_seq_len));
    }
    for (std::size_t id : seq) {
      if (id >= config_.vocab_size) {
        throw InputError("text encoder: token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(config_.vocab_size));
      }
    }
    out.seq_len = std::max(out.seq_len, seq.size());
    out.lengths.push_back(seq.size());
  }
  const std::size_t T = out.seq_len;
  std::vector<std::size_t> ids(sequences.size() * T), pos(sequences.size() * T);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (std::size_t t = 0; t < T; ++t) {
      // Padding rows reuse the [CLS] id; attention masks them as keys.
      ids[s * T + t] = t < sequences[s].size() ? sequences[s][t] : sequences[s][0];
      pos[s * T + t] = t;
    }
  }
  out.x = ad::add(ad::gather_rows(params_.var(token_table_), ids), ad::gather_rows(params_.var(positions_), pos));
  return out;
}

ad::Var TextEncoder::encode_embeddings(const TokenEmbeddings& emb) const {
  calls_.bump();
  static const std::vector<LoRAAdapter> kNone;
  ad::Var x = emb.x;
  for (const BlockParams& b : blocks_) x = run_block(params_, b, kNone, x, emb.seq_len, config_.n_heads, emb.lengths);
  x = ad::layernorm(x, params_.var(final_g_), params_.var(final_b_));
  return ad::l2_normalize_rows(ad::gather_rows(x, cls_rows(emb.n_seq(), emb.seq_len)));
}

ad::Var TextEncoder::encode(std::span<const TokenSequence> sequences) const {
  return encode_embeddings(embed(sequences));
}

ad::Var TextEncoder::encode(const TokenSequence& sequence) const {
  return encode(std::span<const TokenSequence>(&sequence, 1));
}

ad::Tensor patchify(std::span<const Image> images, const VisionEncoderConfig& config) {
  if (images.empty()) throw InputError("vision encoder: empty batch");
  const std::size_t S = config.image_size, P = config.patch_size, grid = S / P;
  ad::Tensor out = ad::Tensor::matrix(images.size() * grid * grid, P * P);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.size != S || img.pixels.size() != S * S) {
      throw InputError("vision encoder: expected " + std::to_string(S) + "x" + std::to_string(S) + " image, got " +
                       std::to_string(img.size) + " with " + std::to_string(img.pixels.size()) + " pixels");
    }
    for (std::size_t gy = 0; gy < grid; ++gy)
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const std::size_t row = n * grid * grid + gy * grid + gx;
        for (std::size_t py = 0; py < P; ++py)
          for (std::size_t px = 0; px < P; ++px)
            out.at(row, py * P + px) = img.pixels[(gy * P + py) * S + gx * P + px];
      }
  }
  return out;
}

VisionEncoder::VisionEncoder(const VisionEncoderConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t h = config_.embed_dim;
  const std::size_t pp = config_.patch_size * config_.patch_size;
  patch_w_ = params_.add("patch_embedding.weight", truncated_normal(rng, {h, pp}, kInitStd), true, 0);
  patch_b_ = params_.add("patch_embedding.bias", ad::Tensor({1, h}, 0.0), true, 0);
  cls_ = params_.add("cls_token", truncated_normal(rng, {1, h}, kInitStd), true, 0);
  positions_ =
      params_.add("position_embedding", truncated_normal(rng, {config_.n_patches() + 1, h}, kInitStd), true, 0);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    blocks_.push_back(add_block(params_, "block" + std::to_string(l) + ".", h, config_.mlp_dim,
                                static_cast<int>(l + 1), rng));
  }
  const int top = static_cast<int>(config_.n_layers + 1);
  final_g_ = params_.add("final_norm.gamma", ad::Tensor({1, h}, 1.0), true, top);
  final_b_ = params_.add("final_norm.beta", ad::Tensor({1, h}, 0.0), true, top);
}

ad::Var VisionEncoder::encode(std::span<const Image> images) const {
  calls_.bump();
  const std::size_t n = images.size();
  const std::size_t np = config_.n_patches();
  const std::size_t T = np + 1;
  const ad::Var patches = ad::Var::constant(patchify(images, config_));
  const ad::Var tokens = ad::add(ad::matmul_nt(patches, params_.var(patch_w_)), params_.var(patch_b_));
  // Row 0 of `stacked` is [CLS]; rows 1.. are patch tokens of every image.
  const std::vector<ad::Var> parts{params_.var(cls_), tokens};
  const ad::Var stacked = ad::concat(parts, 0);
  std::vector<std::size_t> order(n * T), pos(n * T);
  for (std::size_t s = 0; s < n; ++s) {
    order[s * T] = 0;
    pos[s * T] = 0;
    for (std::size_t t = 1; t < T; ++t) {
      order[s * T + t] = 1 + s * np + (t - 1);
      pos[s * T + t] = t;
    }
  }
  ad::Var x = ad::add(ad::gather_rows(stacked, order), ad::gather_rows(params_.var(positions_), pos));
  for (const BlockParams& b : blocks_) x = run_block(params_, b, adapters_, x, T, config_.n_heads, {});
  x = ad::layernorm(x, params_.var(final_g_), params_.var(final_b_));
  return ad::l2_normalize_rows(ad::gather_rows(x, cls_rows(n, T)));
}

void VisionEncoder::attach_lora(const LoRAConfig& lora, std::uint64_t seed) {
  if (has_lora()) throw ConfigError("vision encoder: LoRA adapters already attached");
  if (lora.rank == 0 || lora.alpha <= 0.0) throw ConfigError("LoRA: rank and alpha must be positive");
  std::mt19937_64 rng(seed);
  const std::size_t h = config_.embed_dim;
  params_.set_all_trainable(false);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const int depth = static_cast<int>(l + 1);
    auto make = [&](std::size_t target, const char* tag) {
      const std::string base = "block" + std::to_string(l) + ".attn." + tag + ".lora_";
      LoRAAdapter a;
      a.target = params_[target].name;
      a.rank = lora.rank;
      a.alpha = lora.alpha;
      a.a_id = params_.add(base + "a", normal(rng, {lora.rank, h}, kInitStd), true, depth);
      a.b_id = params_.add(base + "b", ad::Tensor({h, lora.rank}, 0.0), true, depth);
      adapters_.push_back(a);
      return adapters_.size() - 1;
    };
    blocks_[l].lora_q = make(blocks_[l].wq, "q");
    blocks_[l].lora_v = make(blocks_[l].wv, "v");
  }
}

void VisionEncoder::set_frozen(bool frozen) {
  if (frozen || !has_lora()) {
    params_.set_all_trainable(!frozen);
    return;
  }
  params_.set_all_trainable(false);
  for (const LoRAAdapter& a : adapters_) {
    params_.set_trainable(a.a_id, true);
    params_.set_trainable(a.b_id, true);
  }
}

}  // namespace diva::enc
