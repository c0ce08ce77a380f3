#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "diva/autodiff/ops.hpp"
#include "diva/call_counter.hpp"
#include "diva/encoders/params.hpp"
#include "diva/encoders/transformer.hpp"

namespace diva::dicop {

using enc::TokenSequence;

struct DiseaseDescriptor {
  int class_id = 0;
  std::string texture;
  std::string location;
  std::string shape;

  bool operator==(const DiseaseDescriptor&) const = default;
};

inline constexpr const char* kClsToken = "[CLS]";

// Closed word-level vocabulary: [CLS], attribute words, generic context words
// and one opaque name token per class id ("class<k>").
class AttributeVocabulary {
 public:
  AttributeVocabulary(std::vector<std::string> textures, std::vector<std::string> locations,
                      std::vector<std::string> shapes, std::vector<std::string> context_words,
                      std::size_t n_class_tokens);

  // Textures {solid, striped, checker, dotted, speckle}, locations {center,
  // upper left, upper right, lower left, lower right}, shapes {disk, square,
  // triangle, ring}, context words {image, of, a, finding}, 16 class tokens.
  static AttributeVocabulary standard();

  std::size_t size() const { return words_.size(); }
  std::size_t cls_id() const { return 0; }
  std::size_t id(const std::string& word) const;  // InputError when unknown
  bool contains(const std::string& word) const { return ids_.count(word) != 0; }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  std::size_t class_token(int class_id) const;

  // Whitespace-split ids of a description; InputError lists every OOV word.
  std::vector<std::size_t> tokenize(const std::string& text) const;

  const std::vector<std::string>& textures() const { return textures_; }
  const std::vector<std::string>& locations() const { return locations_; }
  const std::vector<std::string>& shapes() const { return shapes_; }
  const std::vector<std::string>& context_words() const { return context_words_; }

 private:
  void add_word(const std::string& w);

  std::vector<std::string> textures_, locations_, shapes_, context_words_;
  std::size_t n_class_tokens_ = 0;
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> ids_;
};

enum class PromptStyle {
  attributes,  // [CLS] texture ⊕ location ⊕ shape
  class_name,  // [CLS] class<k>
};

// [CLS] followed by the texture, location and shape descriptions, in that order.
TokenSequence build_prompt(const AttributeVocabulary& vocab, const DiseaseDescriptor& d);
TokenSequence build_class_name_prompt(const AttributeVocabulary& vocab, const DiseaseDescriptor& d);
std::vector<TokenSequence> build_prompts(const AttributeVocabulary& vocab, std::span<const DiseaseDescriptor> ds,
                                         PromptStyle style);

// Descriptor file: one `class_id|texture|location|shape` per line, `#` comments.
std::vector<DiseaseDescriptor> parse_descriptors(const std::string& text);
std::vector<DiseaseDescriptor> load_descriptors(const std::string& path);
std::string format_descriptors(std::span<const DiseaseDescriptor> ds);

// Linear-ReLU-Linear bottleneck mapping image features to token-embedding width.
class ContextProjector {
 public:
  ContextProjector(std::size_t in_dim, std::size_t token_dim, std::uint64_t seed);

  static std::size_t bottleneck_for(std::size_t in_dim);  // floor(in_dim / 16), ConfigError if 0

  ad::Var project(const ad::Var& f_v) const;

  std::size_t in_dim() const { return in_dim_; }
  std::size_t bottleneck() const { return bottleneck_; }
  std::size_t token_dim() const { return token_dim_; }
  enc::ParamStore& params() { return params_; }
  const enc::ParamStore& params() const { return params_; }
  std::size_t second_weight_id() const { return w2_; }
  std::size_t second_bias_id() const { return b2_; }
  const CallCounter& calls() const { return calls_; }

 private:
  std::size_t in_dim_, bottleneck_, token_dim_;
  enc::ParamStore params_;
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
  CallCounter calls_;
};

// Adds row s of f_s to every non-[CLS], non-padding position of sequence s.
enc::TokenEmbeddings inject_context(const enc::TokenEmbeddings& emb, const ad::Var& f_s);

struct PromptBundles {
  std::vector<int> class_ids;
  std::vector<TokenSequence> tokens;
  ad::Var f_t;                           // C x h text-only representations
  ad::Var f_ts;                          // n x h context-augmented, undefined without images
  std::vector<std::size_t> prompt_of_item;
};

// Per-image context for encode_prompts: image i uses prompt prompt_index[i].
struct ImageContext {
  ad::Var f_v;
  const ContextProjector* projector = nullptr;
  std::vector<std::size_t> prompt_index;
  bool zero_context = false;  // forces f_s = 0 (no-projector ablation)
};

ad::Var encode_text_prompts(const enc::TextEncoder& text, std::span<const TokenSequence> prompts);
ad::Var encode_contextual_prompts(const enc::TextEncoder& text, std::span<const TokenSequence> prompts,
                                  std::span<const std::size_t> prompt_index, const ad::Var& f_s);

PromptBundles encode_prompts(const enc::TextEncoder& text, const AttributeVocabulary& vocab,
                             std::span<const DiseaseDescriptor> descriptors, PromptStyle style,
                             const ImageContext* images = nullptr);

}  // namespace diva::dicop
