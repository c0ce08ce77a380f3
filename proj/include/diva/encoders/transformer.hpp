#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diva/autodiff/ops.hpp"
#include "diva/call_counter.hpp"
#include "diva/encoders/params.hpp"

namespace diva::enc {

using TokenSequence = std::vector<std::size_t>;

// Square grayscale image, row-major pixels.
struct Image {
  std::size_t size = 0;
  std::vector<double> pixels;

  bool operator==(const Image&) const = default;
};

struct TextEncoderConfig {
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 32;
  std::size_t embed_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t mlp_dim = 128;

  void validate() const;
};

struct VisionEncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t mlp_dim = 128;

  void validate() const;
  std::size_t n_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
};

struct LoRAConfig {
  std::size_t rank = 4;
  double alpha = 4.0;
};

// Low-rank update W + (alpha/rank) * B * A of a frozen (d_out x d_in) weight.
struct LoRAAdapter {
  std::string target;
  std::size_t a_id = 0;  // rank x d_in
  std::size_t b_id = 0;  // d_out x rank, zero at creation
  std::size_t rank = 0;
  double alpha = 0.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

// Pre-LN transformer block parameters (ids into the owning ParamStore).
struct BlockParams {
  std::size_t ln1_g, ln1_b;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_g, ln2_b;
  std::size_t w1, b1, w2, b2;
  std::optional<std::size_t> lora_q, lora_v;  // index into the adapter list
};

// Token embeddings of a packed batch: (n_seq * seq_len) x h, position 0 of
// every sequence is [CLS]; positions >= lengths[s] are padding.
struct TokenEmbeddings {
  ad::Var x;
  std::size_t seq_len = 0;
  std::vector<std::size_t> lengths;

  std::size_t n_seq() const { return lengths.size(); }
};

class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& config, std::uint64_t seed);

  const TextEncoderConfig& config() const { return config_; }

  TokenEmbeddings embed(std::span<const TokenSequence> sequences) const;
  // Final-layer [CLS] rows, L2-normalized: n_seq x h.
  ad::Var encode_embeddings(const TokenEmbeddings& emb) const;
  ad::Var encode(std::span<const TokenSequence> sequences) const;
  ad::Var encode(const TokenSequence& sequence) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  void set_frozen(bool frozen) { params_.set_all_trainable(!frozen); }
  std::size_t token_table_id() const { return token_table_; }

  const CallCounter& calls() const { return calls_; }

 private:
  TextEncoderConfig config_;
  ParamStore params_;
  std::size_t token_table_ = 0, positions_ = 0, final_g_ = 0, final_b_ = 0;
  std::vector<BlockParams> blocks_;
  CallCounter calls_;
};

class VisionEncoder {
 public:
  VisionEncoder(const VisionEncoderConfig& config, std::uint64_t seed);

  const VisionEncoderConfig& config() const { return config_; }

  // Final-layer [CLS] rows, L2-normalized: n_images x h.
  ad::Var encode(std::span<const Image> images) const;

  // Adds adapters on the query and value projections of every block and
  // freezes every non-adapter weight.
  void attach_lora(const LoRAConfig& lora, std::uint64_t seed);
  bool has_lora() const { return !adapters_.empty(); }
  const std::vector<LoRAAdapter>& adapters() const { return adapters_; }

  // Depth groups: 0 = patch/position embeddings, 1..n_layers = blocks,
  // n_layers + 1 = final norm.
  std::size_t n_depth_groups() const { return config_.n_layers + 2; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  void set_frozen(bool frozen);

  const CallCounter& calls() const { return calls_; }

 private:
  VisionEncoderConfig config_;
  ParamStore params_;
  std::size_t patch_w_ = 0, patch_b_ = 0, cls_ = 0, positions_ = 0, final_g_ = 0, final_b_ = 0;
  std::vector<BlockParams> blocks_;
  std::vector<LoRAAdapter> adapters_;
  CallCounter calls_;
};

// Packs images into (n * patches) x patch_size^2 rows. Throws InputError on size mismatch.
ad::Tensor patchify(std::span<const Image> images, const VisionEncoderConfig& config);

}  // namespace diva::enc
