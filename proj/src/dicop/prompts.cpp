#include "diva/dicop/prompts.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "diva/error.hpp"

namespace diva::dicop {

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

AttributeVocabulary::AttributeVocabulary(std::vector<std::string> textures, std::vector<std::string> locations,
                                         std::vector<std::string> shapes, std::vector<std::string> context_words,
                                         std::size_t n_class_tokens)
    : textures_(std::move(textures)),
      locations_(std::move(locations)),
      shapes_(std::move(shapes)),
      context_words_(std::move(context_words)),
      n_class_tokens_(n_class_tokens) {
  // A surface word may be shared within one attribute list ("upper left",
  // "upper right") but never across lists.
  std::map<std::string, int> owner;
  const std::vector<std::string>* lists[] = {&textures_, &locations_, &shapes_};
  for (int li = 0; li < 3; ++li) {
    for (const std::string& desc : *lists[li]) {
      for (const std::string& w : split_words(desc)) {
        auto [it, inserted] = owner.emplace(w, li);
        if (!inserted && it->second != li) {
          throw ConfigError("attribute word '" + w + "' appears in more than one attribute list");
        }
      }
    }
  }
  add_word(kClsToken);
  for (const auto* list : lists)
    for (const std::string& desc : *list)
      for (const std::string& w : split_words(desc)) add_word(w);
  for (const std::string& w : context_words_) add_word(w);
  for (std::size_t k = 0; k < n_class_tokens_; ++k) add_word("class" + std::to_string(k));
}

AttributeVocabulary AttributeVocabulary::standard() {
  return AttributeVocabulary({"solid", "striped", "checker", "dotted", "speckle"},
                             {"center", "upper left", "upper right", "lower left", "lower right"},
                             {"disk", "square", "triangle", "ring"}, {"image", "of", "a", "finding"}, 16);
}

void AttributeVocabulary::add_word(const std::string& w) {
  if (ids_.count(w)) return;
  ids_.emplace(w, words_.size());
  words_.push_back(w);
}

std::size_t AttributeVocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw InputError("word '" + word + "' is not in the vocabulary");
  return it->second;
}

std::size_t AttributeVocabulary::class_token(int class_id) const {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= n_class_tokens_) {
    throw InputError("class id " + std::to_string(class_id) + " has no name token (vocabulary holds " +
                     std::to_string(n_class_tokens_) + ")");
  }
  return id("class" + std::to_string(class_id));
}

std::vector<std::size_t> AttributeVocabulary::tokenize(const std::string& text) const {
  std::vector<std::size_t> out;
  std::vector<std::string> missing;
  for (const std::string& w : split_words(text)) {
    auto it = ids_.find(w);
    if (it == ids_.end()) missing.push_back(w);
    else out.push_back(it->second);
  }
  if (!missing.empty()) {
    std::string list;
    for (const std::string& w : missing) list += (list.empty() ? "" : ", ") + w;
    throw InputError("out-of-vocabulary words: " + list);
  }
  return out;
}

TokenSequence build_prompt(const AttributeVocabulary& vocab, const DiseaseDescriptor& d) {
  TokenSequence seq{vocab.cls_id()};
  const auto ids = vocab.tokenize(d.texture + " " + d.location + " " + d.shape);
  seq.insert(seq.end(), ids.begin(), ids.end());
  return seq;
}

TokenSequence build_class_name_prompt(const AttributeVocabulary& vocab, const DiseaseDescriptor& d) {
  return TokenSequence{vocab.cls_id(), vocab.class_token(d.class_id)};
}

std::vector<TokenSequence> build_prompts(const AttributeVocabulary& vocab, std::span<const DiseaseDescriptor> ds,
                                         PromptStyle style) {
  std::vector<TokenSequence> out;
  out.reserve(ds.size());
  for (const DiseaseDescriptor& d : ds) {
    out.push_back(style == PromptStyle::attributes ? build_prompt(vocab, d) : build_class_name_prompt(vocab, d));
  }
  return out;
}

std::vector<DiseaseDescriptor> parse_descriptors(const std::string& text) {
  std::vector<DiseaseDescriptor> out;
  std::set<int> seen;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t bar; (bar = t.find('|', start)) != std::string::npos; start = bar + 1) {
      fields.push_back(trim(t.substr(start, bar - start)));
    }
    fields.push_back(trim(t.substr(start)));
    const std::string where = "descriptor line " + std::to_string(line_no);
    if (fields.size() != 4) throw InputError(where + ": expected class_id|texture|location|shape");
    DiseaseDescriptor d;
    try {
      std::size_t used = 0;
      d.class_id = std::stoi(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InputError(where + ": class id '" + fields[0] + "' is not an integer");
    }
    d.texture = fields[1];
    d.location = fields[2];
    d.shape = fields[3];
    if (d.texture.empty() || d.location.empty() || d.shape.empty()) {
      throw InputError(where + ": empty attribute description");
    }
    if (!seen.insert(d.class_id).second) {
      throw InputError(where + ": duplicate class id " + std::to_string(d.class_id));
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<DiseaseDescriptor> load_descriptors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open descriptor file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_descriptors(buf.str());
}

std::string format_descriptors(std::span<const DiseaseDescriptor> ds) {
  std::string out = "# class_id|texture|location|shape\n";
  for (const DiseaseDescriptor& d : ds) {
    out += std::to_string(d.class_id) + "|" + d.texture + "|" + d.location + "|" + d.shape + "\n";
  }
  return out;
}

std::size_t ContextProjector::bottleneck_for(std::size_t in_dim) {
  const std::size_t b = in_dim / 16;
  if (b == 0) {
    throw ConfigError("context projector: input width " + std::to_string(in_dim) +
                      " is too small for a 16x bottleneck");
  }
  return b;
}

ContextProjector::ContextProjector(std::size_t in_dim, std::size_t token_dim, std::uint64_t seed)
    : in_dim_(in_dim), bottleneck_(bottleneck_for(in_dim)), token_dim_(token_dim) {
  if (token_dim == 0) throw ConfigError("context projector: token width must be positive");
  std::mt19937_64 rng(seed);
  w1_ = params_.add("fc1.weight", enc::truncated_normal(rng, {bottleneck_, in_dim_}, 0.02));
  b1_ = params_.add("fc1.bias", ad::Tensor({1, bottleneck_}, 0.0));
  w2_ = params_.add("fc2.weight", enc::truncated_normal(rng, {token_dim_, bottleneck_}, 0.02));
  b2_ = params_.add("fc2.bias", ad::Tensor({1, token_dim_}, 0.0));
}

ad::Var ContextProjector::project(const ad::Var& f_v) const {
  calls_.bump();
  if (f_v.cols() != in_dim_) {
    throw ConfigError("context projector: expected features of width " + std::to_string(in_dim_) + ", got " +
                      std::to_string(f_v.cols()));
  }
  const ad::Var hidden = ad::relu(ad::add(ad::matmul_nt(f_v, params_.var(w1_)), params_.var(b1_)));
  return ad::add(ad::matmul_nt(hidden, params_.var(w2_)), params_.var(b2_));
}

enc::TokenEmbeddings inject_context(const enc::TokenEmbeddings& emb, const ad::Var& f_s) {
  const std::size_t n = emb.n_seq(), T = emb.seq_len, h = emb.x.cols();
  if (f_s.rows() != n || f_s.cols() != h) {
    throw ConfigError("inject_context: context of shape " + ad::shape_str(f_s.shape()) + " for " +
                      std::to_string(n) + " sequences of width " + std::to_string(h));
  }
  std::vector<std::size_t> owner(n * T);
  ad::Tensor mask = ad::Tensor::matrix(n * T, h);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t < T; ++t) {
      owner[s * T + t] = s;
      if (t == 0 || t >= emb.lengths[s]) continue;
      for (std::size_t j = 0; j < h; ++j) mask.at(s * T + t, j) = 1.0;
    }
  }
  enc::TokenEmbeddings out = emb;
  out.x = ad::add(emb.x, ad::mul(ad::gather_rows(f_s, owner), ad::Var::constant(std::move(mask))));
  return out;
}

ad::Var encode_text_prompts(const enc::TextEncoder& text, std::span<const TokenSequence> prompts) {
  if (prompts.empty()) throw ConfigError("encode_prompts: no classes");
  return text.encode(prompts);
}

ad::Var encode_contextual_prompts(const enc::TextEncoder& text, std::span<const TokenSequence> prompts,
                                  std::span<const std::size_t> prompt_index, const ad::Var& f_s) {
  std::vector<TokenSequence> per_item;
  per_item.reserve(prompt_index.size());
  for (std::size_t k : prompt_index) {
    if (k >= prompts.size()) throw ConfigError("encode_prompts: prompt index " + std::to_string(k) + " out of range");
    per_item.push_back(prompts[k]);
  }
  return text.encode_embeddings(inject_context(text.embed(per_item), f_s));
}

PromptBundles encode_prompts(const enc::TextEncoder& text, const AttributeVocabulary& vocab,
                             std::span<const DiseaseDescriptor> descriptors, PromptStyle style,
                             const ImageContext* images) {
  if (descriptors.empty()) throw ConfigError("encode_prompts: class count is 0");
  PromptBundles out;
  for (const DiseaseDescriptor& d : descriptors) out.class_ids.push_back(d.class_id);
  out.tokens = build_prompts(vocab, descriptors, style);
  out.f_t = encode_text_prompts(text, out.tokens);
  if (images == nullptr) return out;
  if (images->prompt_index.size() != images->f_v.rows()) {
    throw ConfigError("encode_prompts: one prompt index per image required");
  }
  ad::Var f_s;
  if (images->zero_context || images->projector == nullptr) {
    f_s = ad::Var::constant(ad::Tensor::matrix(images->f_v.rows(), text.config().embed_dim));
  } else {
    f_s = images->projector->project(images->f_v);
  }
  out.prompt_of_item = images->prompt_index;
  out.f_ts = encode_contextual_prompts(text, out.tokens, out.prompt_of_item, f_s);
  return out;
}

}  // namespace diva::dicop
