#include "diva/harness/config.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "diva/dicop/prompts.hpp"
#include "diva/error.hpp"

namespace diva::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError(where + ": expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_uint(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(where + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

IniFile IniFile::parse(const std::string& text, const std::string& source) {
  IniFile ini;
  ini.source_ = source;
  std::istringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string at = source + ":" + std::to_string(number);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(at + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(at + ": empty section name");
      ini.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(at + ": expected `key = value`");
    if (section.empty()) throw ConfigError(at + ": key outside of any [section]");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(at + ": empty key");
    auto& entries = ini.sections_[section];
    if (entries.count(key)) throw ConfigError(at + ": duplicate key '" + key + "' in [" + section + "]");
    entries[key] = {trim(line.substr(eq + 1)), number, false};
  }
  return ini;
}

IniFile IniFile::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string IniFile::where(const std::string& section, const std::string& key) const {
  const auto& e = sections_.at(section).at(key);
  return source_ + ":" + std::to_string(e.line) + " [" + section + "] " + key;
}

std::optional<std::string> IniFile::take(const std::string& section, const std::string& key) {
  auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  auto e = s->second.find(key);
  if (e == s->second.end()) return std::nullopt;
  e->second.used = true;
  return e->second.value;
}

void IniFile::take_into(const std::string& section, const std::string& key, std::string& out) {
  if (auto v = take(section, key)) out = *v;
}

void IniFile::take_into(const std::string& section, const std::string& key, double& out) {
  if (auto v = take(section, key)) out = to_double(*v, where(section, key));
}

void IniFile::take_into(const std::string& section, const std::string& key, std::size_t& out) {
  if (auto v = take(section, key)) out = static_cast<std::size_t>(to_uint(*v, where(section, key)));
}

void IniFile::take_into(const std::string& section, const std::string& key, bool& out) {
  if (auto v = take(section, key)) {
    if (*v == "true" || *v == "1") out = true;
    else if (*v == "false" || *v == "0") out = false;
    else throw ConfigError(where(section, key) + ": expected true or false, got '" + *v + "'");
  }
}

void IniFile::take_into(const std::string& section, const std::string& key, std::vector<double>& out) {
  if (auto v = take(section, key)) {
    out.clear();
    for (const auto& item : split_list(*v)) out.push_back(to_double(item, where(section, key)));
  }
}

void IniFile::take_into(const std::string& section, const std::string& key, std::vector<std::uint64_t>& out) {
  if (auto v = take(section, key)) {
    out.clear();
    for (const auto& item : split_list(*v)) out.push_back(to_uint(item, where(section, key)));
  }
}

void IniFile::reject_unknown() const {
  std::string unknown;
  for (const auto& [section, entries] : sections_)
    for (const auto& [key, e] : entries)
      if (!e.used) unknown += "\n  " + source_ + ":" + std::to_string(e.line) + " [" + section + "] " + key;
  if (!unknown.empty()) throw ConfigError("unknown config keys:" + unknown);
}

const char* method_name(Method m) {
  switch (m) {
    case Method::dicop_dpl: return "dicop_dpl";
    case Method::linear_probe: return "linear_probe";
    case Method::clip_adapter: return "clip_adapter";
    case Method::coop: return "coop";
    case Method::cocoop: return "cocoop";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::dicop_dpl, Method::linear_probe, Method::clip_adapter, Method::coop, Method::cocoop})
    if (name == method_name(m)) return m;
  throw ConfigError("unknown method '" + name + "' (expected dicop_dpl, linear_probe, clip_adapter, coop or cocoop)");
}

std::optional<base::BaselineKind> baseline_of(Method m) {
  switch (m) {
    case Method::linear_probe: return base::BaselineKind::linear_probe;
    case Method::clip_adapter: return base::BaselineKind::clip_adapter;
    case Method::coop: return base::BaselineKind::coop;
    case Method::cocoop: return base::BaselineKind::cocoop;
    case Method::dicop_dpl: break;
  }
  return std::nullopt;
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_ita: return "no_ita";
    case Variant::no_prot: return "no_prot";
    case Variant::no_reg: return "no_reg";
    case Variant::no_projector: return "no_projector";
    case Variant::no_attributes: return "no_attributes";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (auto v : {Variant::full, Variant::no_ita, Variant::no_prot, Variant::no_reg, Variant::no_projector,
                 Variant::no_attributes})
    if (name == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + name + "'");
}

const std::vector<Variant>& ablation_variants() {
  static const std::vector<Variant> v{Variant::no_ita, Variant::no_prot, Variant::no_reg, Variant::no_projector,
                                      Variant::no_attributes};
  return v;
}

enc::TextEncoderConfig ModelConfig::text(std::size_t vocab_size) const {
  enc::TextEncoderConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = embed_dim;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.mlp_dim = mlp_dim;
  return c;
}

enc::VisionEncoderConfig ModelConfig::vision() const {
  enc::VisionEncoderConfig c;
  c.image_size = synth::kImageSize;
  c.patch_size = patch_size;
  c.embed_dim = embed_dim;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.mlp_dim = mlp_dim;
  return c;
}

void TrainConfig::validate() const {
  if (epochs > 100000) throw ConfigError("train.epochs is implausibly large");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(classifier_scale > 0.0)) throw ConfigError("train.classifier_scale must be positive");
  weights.validate();
  if (lora.rank == 0 || !(lora.alpha > 0.0)) throw ConfigError("LoRA rank and alpha must be positive");
  if (!(layer_decay > 0.0 && layer_decay <= 1.0)) throw ConfigError("train.layer_decay must lie in (0, 1]");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("train.fraction must lie in (0, 1]");
  if (seeds.empty()) throw ConfigError("train.seeds must list at least one seed");
  baseline.validate();
}

void ExperimentConfig::validate() const {
  scenario.validate();
  train.validate();
  if (pretrain.epochs == 0 || pretrain.batch_size == 0 || !(pretrain.lr > 0.0) || !(pretrain.tau > 0.0))
    throw ConfigError("pretrain epochs, batch_size, lr and tau must be positive");
  for (std::size_t i = 0; i < sweep_fractions.size(); ++i) {
    if (!(sweep_fractions[i] > 0.0 && sweep_fractions[i] <= 1.0)) throw ConfigError("sweep fractions must lie in (0, 1]");
    if (i > 0 && !(sweep_fractions[i] > sweep_fractions[i - 1]))
      throw ConfigError("sweep fractions must be sorted ascending without repeats");
  }
  if (jobs == 0) throw ConfigError("run.jobs must be at least 1");
  model.text(2).validate();  // vocabulary size is only known after descriptors load
  model.vision().validate();
}

std::uint64_t ExperimentConfig::pretrain_fingerprint() const {
  std::ostringstream s;
  s.precision(17);
  s << synth::scenario_name(scenario.kind) << '|' << scenario.pairs_per_class << '|' << scenario.target_share << '|'
    << scenario.target_class << '|' << scenario.seed;
  for (const auto& c : scenario.classes)
    s << '|' << c.class_id << ',' << c.texture << ',' << c.location << ',' << c.shape << ',' << c.noise_std;
  for (int k : scenario.pretrain_classes) s << '|' << k;
  s << '#' << pretrain.epochs << '|' << pretrain.batch_size << '|' << pretrain.lr << '|' << pretrain.tau << '|'
    << pretrain.seed;
  s << '#' << model.embed_dim << '|' << model.n_layers << '|' << model.n_heads << '|' << model.mlp_dim << '|'
    << model.patch_size << '|' << model.text_seed << '|' << model.vision_seed;
  return fnv1a(s.str());
}

ExperimentConfig parse_experiment_config(IniFile ini) {
  ExperimentConfig c;

  auto& sc = c.scenario;
  if (auto path = ini.take("scenario", "descriptors")) {
    std::filesystem::path file(*path);
    if (file.is_relative() && std::filesystem::exists(ini.source()))
      file = std::filesystem::path(ini.source()).parent_path() / file;
    const auto ds = dicop::load_descriptors(file.string());
    sc.classes.clear();
    for (const auto& d : ds) sc.classes.push_back({d.class_id, d.texture, d.location, d.shape, 0.15});
  }
  if (auto kind = ini.take("scenario", "kind")) sc.kind = synth::parse_scenario_kind(*kind);
  auto take_ints = [&](const std::string& key, std::vector<int>& out) {
    std::vector<std::uint64_t> v;
    ini.take_into("scenario", key, v);
    if (!v.empty()) {
      out.clear();
      for (auto x : v) out.push_back(static_cast<int>(x));
    }
  };
  take_ints("pretrain_classes", sc.pretrain_classes);
  take_ints("benign_classes", sc.benign_classes);
  std::uint64_t target = static_cast<std::uint64_t>(sc.target_class);
  ini.take_into("scenario", "target_class", target);
  sc.target_class = static_cast<int>(target);
  ini.take_into("scenario", "pairs_per_class", sc.pairs_per_class);
  ini.take_into("scenario", "adapt_per_class", sc.adapt_per_class);
  ini.take_into("scenario", "target_share", sc.target_share);
  double noise = sc.classes.empty() ? 0.15 : sc.classes.front().noise_std;
  ini.take_into("scenario", "noise_std", noise);
  sc.set_noise(noise);
  ini.take_into("scenario", "seed", sc.seed);

  ini.take_into("pretrain", "epochs", c.pretrain.epochs);
  ini.take_into("pretrain", "batch_size", c.pretrain.batch_size);
  ini.take_into("pretrain", "lr", c.pretrain.lr);
  ini.take_into("pretrain", "tau", c.pretrain.tau);
  ini.take_into("pretrain", "seed", c.pretrain.seed);

  ini.take_into("model", "embed_dim", c.model.embed_dim);
  ini.take_into("model", "layers", c.model.n_layers);
  ini.take_into("model", "heads", c.model.n_heads);
  ini.take_into("model", "mlp_dim", c.model.mlp_dim);
  ini.take_into("model", "patch_size", c.model.patch_size);
  ini.take_into("model", "text_seed", c.model.text_seed);
  ini.take_into("model", "vision_seed", c.model.vision_seed);

  auto& t = c.train;
  if (auto m = ini.take("train", "method")) t.method = parse_method(*m);
  ini.take_into("train", "epochs", t.epochs);
  ini.take_into("train", "batch_size", t.batch_size);
  ini.take_into("train", "lr", t.lr);
  ini.take_into("train", "classifier_scale", t.classifier_scale);
  ini.take_into("train", "tau1", t.weights.tau1);
  ini.take_into("train", "tau2", t.weights.tau2);
  ini.take_into("train", "lambda1", t.weights.lambda1);
  ini.take_into("train", "lambda2", t.weights.lambda2);
  if (auto s = ini.take("train", "prot_sign")) {
    if (*s == "intent") t.prot_sign = dpl::ProtSign::intent;
    else if (*s == "printed") t.prot_sign = dpl::ProtSign::printed;
    else throw ConfigError("train.prot_sign must be 'intent' or 'printed'");
  }
  if (auto f = ini.take("train", "finetune")) {
    if (*f == "lora") t.finetune = Finetune::lora;
    else if (*f == "layer_decay") t.finetune = Finetune::layer_decay;
    else throw ConfigError("train.finetune must be 'lora' or 'layer_decay'");
  }
  ini.take_into("train", "lora_rank", t.lora.rank);
  ini.take_into("train", "lora_alpha", t.lora.alpha);
  ini.take_into("train", "layer_decay", t.layer_decay);
  ini.take_into("train", "weight_decay", t.adamw.weight_decay);
  ini.take_into("train", "fraction", t.fraction);
  ini.take_into("train", "seeds", t.seeds);

  ini.take_into("baselines", "clip_adapter_blend", t.baseline.blend);
  ini.take_into("baselines", "clip_adapter_bottleneck", t.baseline.adapter_bottleneck);
  ini.take_into("baselines", "context_length", t.baseline.context_length);
  ini.take_into("baselines", "meta_bottleneck", t.baseline.meta_bottleneck);

  auto take_methods = [&](const std::string& section, std::vector<Method>& out) {
    if (auto v = ini.take(section, "methods")) {
      out.clear();
      for (const auto& m : split_list(*v)) out.push_back(parse_method(m));
    }
  };
  ini.take_into("sweep", "fractions", c.sweep_fractions);
  take_methods("sweep", c.sweep_methods);
  take_methods("compare", c.compare_methods);

  ini.take_into("run", "pretrained_checkpoint", c.pretrained_checkpoint);
  ini.take_into("run", "jobs", c.jobs);

  ini.reject_unknown();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(IniFile::load(path));
}

}  // namespace diva::harness
