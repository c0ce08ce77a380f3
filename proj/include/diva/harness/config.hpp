#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diva/baselines/baselines.hpp"
#include "diva/dpl/dpl.hpp"
#include "diva/encoders/optim.hpp"
#include "diva/encoders/transformer.hpp"
#include "diva/synthbench/synthbench.hpp"

namespace diva::harness {

// `key = value` lines under `[section]` headers; `#` and `;` start comments.
// Readers consume keys with take_*; anything left unconsumed is an error.
class IniFile {
 public:
  static IniFile parse(const std::string& text, const std::string& source = "<config>");
  static IniFile load(const std::string& path);

  std::optional<std::string> take(const std::string& section, const std::string& key);
  void take_into(const std::string& section, const std::string& key, std::string& out);
  void take_into(const std::string& section, const std::string& key, double& out);
  void take_into(const std::string& section, const std::string& key, std::size_t& out);
  void take_into(const std::string& section, const std::string& key, bool& out);
  void take_into(const std::string& section, const std::string& key, std::vector<double>& out);
  void take_into(const std::string& section, const std::string& key, std::vector<std::uint64_t>& out);
  // Throws ConfigError naming every key nobody consumed.
  void reject_unknown() const;
  const std::string& source() const { return source_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
    bool used = false;
  };
  std::string where(const std::string& section, const std::string& key) const;
  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

enum class Method { dicop_dpl, linear_probe, clip_adapter, coop, cocoop };
const char* method_name(Method m);
Method parse_method(const std::string& name);
std::optional<base::BaselineKind> baseline_of(Method m);

enum class Finetune { lora, layer_decay };

// Leave-one-out variants of the main method.
enum class Variant { full, no_ita, no_prot, no_reg, no_projector, no_attributes };
const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);
const std::vector<Variant>& ablation_variants();

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t mlp_dim = 128;
  std::size_t patch_size = 8;
  std::uint64_t text_seed = 11;
  std::uint64_t vision_seed = 12;
  enc::TextEncoderConfig text(std::size_t vocab_size) const;
  enc::VisionEncoderConfig vision() const;
};

struct TrainConfig {
  Method method = Method::dicop_dpl;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double lr = 5e-4;
  // Logit multiplier of the linear head on unit-norm features (1 / tau1).
  double classifier_scale = 1.0 / 0.07;
  dpl::LossWeights weights;
  dpl::ProtSign prot_sign = dpl::ProtSign::intent;
  Finetune finetune = Finetune::lora;
  enc::LoRAConfig lora;
  double layer_decay = 0.9;
  enc::AdamWConfig adamw;
  base::BaselineConfig baseline;
  double fraction = 0.05;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  void validate() const;
};

struct ExperimentConfig {
  synth::ScenarioConfig scenario = synth::ScenarioConfig::desk();
  synth::PretrainConfig pretrain;
  ModelConfig model;
  TrainConfig train;
  std::vector<double> sweep_fractions{0.01, 0.05, 0.10, 0.25};
  std::vector<Method> sweep_methods{Method::dicop_dpl, Method::linear_probe};
  std::vector<Method> compare_methods{Method::dicop_dpl, Method::linear_probe, Method::clip_adapter, Method::coop,
                                      Method::cocoop};
  std::string pretrained_checkpoint;  // empty: <out>/pretrained.ckpt
  std::size_t jobs = 1;

  void validate() const;
  // Hash of everything that shapes the pretrained encoders.
  std::uint64_t pretrain_fingerprint() const;
};

// Relative descriptor paths resolve against the config file's directory.
ExperimentConfig parse_experiment_config(IniFile ini);
ExperimentConfig load_experiment_config(const std::string& path);

}  // namespace diva::harness
