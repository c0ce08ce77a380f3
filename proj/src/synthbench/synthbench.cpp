#include "diva/synthbench/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "diva/autodiff/tape.hpp"
#include "diva/dpl/dpl.hpp"
#include "diva/encoders/optim.hpp"
#include "diva/error.hpp"

namespace diva::synth {

namespace {

constexpr int kRadius = 6;
constexpr int kSquareHalf = 5;
constexpr int kRingInner = 3;
constexpr int kJitter = 1;
constexpr double kFigureLow = 0.6;
constexpr double kFigureGain = 0.3;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

const std::vector<std::string> kTextures{"solid", "striped", "checker", "dotted", "speckle"};
const std::vector<std::string> kLocations{"center", "upper left", "upper right", "lower left", "lower right"};
const std::vector<std::string> kShapes{"disk", "square", "triangle", "ring"};

bool one_of(const std::string& w, const std::vector<std::string>& list) {
  return std::find(list.begin(), list.end(), w) != list.end();
}

bool inside(const std::string& shape, int dy, int dx) {
  const int r2 = dy * dy + dx * dx;
  if (shape == "disk") return r2 <= kRadius * kRadius;
  if (shape == "square") return std::abs(dy) <= kSquareHalf && std::abs(dx) <= kSquareHalf;
  if (shape == "ring") return r2 <= kRadius * kRadius && r2 >= kRingInner * kRingInner;
  // triangle, apex up
  if (dy < -kSquareHalf || dy > kSquareHalf) return false;
  return 2 * std::abs(dx) <= dy + kSquareHalf + 1;
}

// Texture value in {0, 1} at an offset from the shape center.
int pattern(const std::string& texture, int dy, int dx) {
  const int a = dy + 64, b = dx + 64;
  if (texture == "solid") return 1;
  if (texture == "striped") return (a / 2) % 2;
  if (texture == "checker") return ((a / 2) + (b / 2)) % 2;
  if (texture == "dotted") return (a % 4 < 2 && b % 4 < 2) ? 1 : 0;
  return static_cast<int>(mix(static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b) + 977) & 1U);
}

std::size_t wrap(int v) {
  const int n = static_cast<int>(kImageSize);
  return static_cast<std::size_t>(((v % n) + n) % n);
}

}  // namespace

void SyntheticClassSpec::validate() const {
  if (!one_of(texture, kTextures)) throw ConfigError("unknown texture '" + texture + "'");
  if (!one_of(location, kLocations)) throw ConfigError("unknown location '" + location + "'");
  if (!one_of(shape, kShapes)) throw ConfigError("unknown shape '" + shape + "'");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("noise_std must be finite and >= 0");
}

std::pair<int, int> location_center(const std::string& location) {
  if (location == "center") return {16, 16};
  if (location == "upper left") return {9, 9};
  if (location == "upper right") return {9, 22};
  if (location == "lower left") return {22, 9};
  if (location == "lower right") return {22, 22};
  throw ConfigError("unknown location '" + location + "'");
}

enc::Image render_image(const SyntheticClassSpec& spec, std::uint64_t sample_index, std::uint64_t seed) {
  std::mt19937_64 rng(mix(seed, sample_index));
  std::uniform_int_distribution<int> jitter(-kJitter, kJitter);
  auto [cy, cx] = location_center(spec.location);
  cy += jitter(rng);
  cx += jitter(rng);

  const std::size_t n = kImageSize;
  std::vector<double> noise(n * n, 0.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : noise) v = gauss(rng);

  enc::Image img{n, std::vector<double>(n * n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const int dy = static_cast<int>(i) - cy, dx = static_cast<int>(j) - cx;
      double v = kGround;
      if (inside(spec.shape, dy, dx)) v = kFigureLow + kFigureGain * pattern(spec.texture, dy, dx);
      if (spec.noise_std > 0.0) v += spec.noise_std * noise[wrap(dy) * n + wrap(dx)];
      img.pixels[i * n + j] = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

const char* scenario_name(ScenarioKind kind) {
  return kind == ScenarioKind::underrepresented ? "underrepresented" : "new";
}

ScenarioKind parse_scenario_kind(const std::string& name) {
  if (name == "underrepresented") return ScenarioKind::underrepresented;
  if (name == "new") return ScenarioKind::new_class;
  throw ConfigError("scenario kind must be 'underrepresented' or 'new', got '" + name + "'");
}

const SyntheticClassSpec& ScenarioConfig::spec(int class_id) const {
  for (const auto& c : classes)
    if (c.class_id == class_id) return c;
  throw ConfigError("class " + std::to_string(class_id) + " is not defined in the scenario");
}

void ScenarioConfig::set_noise(double noise_std) {
  for (auto& c : classes) c.noise_std = noise_std;
}

void ScenarioConfig::validate() const {
  std::set<int> ids;
  std::set<std::tuple<std::string, std::string, std::string>> triples;
  for (const auto& c : classes) {
    c.validate();
    if (!ids.insert(c.class_id).second) throw ConfigError("duplicate class id " + std::to_string(c.class_id));
    if (!triples.insert({c.texture, c.location, c.shape}).second)
      throw ConfigError("classes must differ in (texture, location, shape); class " + std::to_string(c.class_id) +
                        " repeats an earlier triple");
  }
  if (pretrain_classes.empty()) throw ConfigError("at least one pretraining class is required");
  if (benign_classes.empty()) throw ConfigError("at least one benign class is required");
  for (int k : pretrain_classes) {
    spec(k);
    if (k == target_class) throw ConfigError("the target class must not be listed among the pretraining classes");
  }
  for (int k : benign_classes) {
    spec(k);
    if (k == target_class) throw ConfigError("the target class cannot also be benign");
  }
  spec(target_class);
  if (pairs_per_class == 0) throw ConfigError("pairs_per_class must be positive");
  if (adapt_per_class < 10) throw ConfigError("adapt_per_class must be at least 10 for a 7:1:2 split");
  if (!(target_share > 0.0 && target_share <= 0.005))
    throw ConfigError("target_share must lie in (0, 0.005] for an underrepresented class");
  if (kind == ScenarioKind::underrepresented &&
      underrepresented_pairs(pairs_per_class * pretrain_classes.size(), target_share) == 0)
    throw ConfigError("target_share rounds to zero target pairs; raise pairs_per_class or target_share");
}

ScenarioConfig ScenarioConfig::desk(ScenarioKind kind) {
  ScenarioConfig c;
  const double noise = 0.15;
  c.classes = {
      {0, "solid", "center", "disk", noise},          {1, "striped", "upper left", "square", noise},
      {2, "checker", "upper right", "triangle", noise}, {3, "dotted", "lower left", "ring", noise},
      {4, "striped", "lower right", "disk", noise},    {5, "checker", "center", "ring", noise},
      {6, "speckle", "upper left", "square", noise},
  };
  c.pretrain_classes = {0, 1, 2, 3, 4, 5};
  c.target_class = 6;
  c.benign_classes = {1, 0, 3};
  c.kind = kind;
  return c;
}

const dicop::DiseaseDescriptor& Corpus::caption_of(int class_id) const {
  for (const auto& d : captions)
    if (d.class_id == class_id) return d;
  throw InputError("class " + std::to_string(class_id) + " has no pretraining caption");
}

std::size_t Corpus::count(int class_id) const {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [&](const PretrainPair& p) { return p.class_id == class_id; }));
}

std::size_t underrepresented_pairs(std::size_t base_pairs, double share) {
  return static_cast<std::size_t>(std::floor(share * static_cast<double>(base_pairs) + 1e-9));
}

Scenario generate_scenario(const ScenarioConfig& config) {
  config.validate();
  Scenario out;
  const std::uint64_t pretrain_seed = mix(config.seed, 1), adapt_seed = mix(config.seed, 2);

  std::vector<int> labels;
  for (int k : config.pretrain_classes) labels.insert(labels.end(), config.pairs_per_class, k);
  if (config.kind == ScenarioKind::underrepresented) {
    const std::size_t n_target = underrepresented_pairs(labels.size(), config.target_share);
    labels.insert(labels.end(), n_target, config.target_class);
  }
  std::mt19937_64 order(mix(config.seed, 3));
  std::shuffle(labels.begin(), labels.end(), order);
  out.pretrain.pairs.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.pretrain.pairs[i] = {i, labels[i], render_image(config.spec(labels[i]), i, pretrain_seed)};
  for (int k : config.pretrain_classes) out.pretrain.captions.push_back(config.spec(k).descriptor());
  if (config.kind == ScenarioKind::underrepresented)
    out.pretrain.captions.push_back(config.spec(config.target_class).descriptor());

  AdaptationData& a = out.adapt;
  a.n_classes = 2;
  std::vector<int> fine = config.benign_classes;
  fine.push_back(config.target_class);
  for (std::size_t p = 0; p < fine.size(); ++p) {
    a.prototypes.push_back(config.spec(fine[p]).descriptor());
    a.class_map.push_back(fine[p] == config.target_class ? 1 : 0);
  }
  std::mt19937_64 split_rng(mix(config.seed, 4));
  const std::size_t per = config.adapt_per_class;
  const std::size_t n_train = per * 7 / 10, n_val = per / 10;
  for (std::size_t p = 0; p < fine.size(); ++p) {
    std::vector<std::size_t> idx;
    for (std::size_t s = 0; s < per; ++s) {
      const std::size_t index = a.samples.size();
      a.samples.push_back({index, fine[p], a.class_map[p], p, render_image(config.spec(fine[p]), index, adapt_seed)});
      idx.push_back(index);
    }
    std::shuffle(idx.begin(), idx.end(), split_rng);
    a.train.insert(a.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    a.val.insert(a.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    a.test.insert(a.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  for (auto* v : {&a.train, &a.val, &a.test}) std::sort(v->begin(), v->end());
  return out;
}

std::vector<std::size_t> few_shot_subset(const AdaptationData& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data fraction must lie in (0, 1]");
  const std::size_t n_train = data.train.size();
  std::vector<std::vector<std::size_t>> by_label(data.n_classes);
  for (std::size_t i : data.train) by_label[data.samples[i].label].push_back(i);

  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_train)));
  // Largest-remainder allocation of n over the labels.
  std::vector<std::size_t> take(data.n_classes);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t given = 0;
  for (std::size_t k = 0; k < data.n_classes; ++k) {
    const double exact = static_cast<double>(n) * static_cast<double>(by_label[k].size()) / static_cast<double>(n_train);
    take[k] = static_cast<std::size_t>(std::floor(exact));
    given += take[k];
    rem.push_back({exact - std::floor(exact), k});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t r = 0; given < n; ++r, ++given) ++take[rem[r % rem.size()].second];

  for (std::size_t k = 0; k < data.n_classes; ++k) {
    if (take[k] == 0) {
      std::size_t smallest = n_train;
      for (const auto& v : by_label) smallest = std::min(smallest, v.size());
      const double minimum = std::ceil(static_cast<double>(n_train) / static_cast<double>(std::max<std::size_t>(smallest, 1))) /
                             static_cast<double>(n_train);
      std::ostringstream msg;
      msg << "data fraction " << fraction << " leaves class " << k << " without training samples; use a fraction >= "
          << minimum;
      throw ConfigError(msg.str());
    }
  }
  std::mt19937_64 rng(mix(seed, 0x5eed));
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < data.n_classes; ++k) {
    auto pool = by_label[k];
    std::shuffle(pool.begin(), pool.end(), rng);
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take[k]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

ad::Tensor encode_images(const enc::VisionEncoder& vision, const std::vector<enc::Image>& images, std::size_t chunk) {
  ad::NoGradScope no_grad;
  const std::size_t h = vision.config().embed_dim;
  ad::Tensor out = ad::Tensor::matrix(images.size(), h);
  for (std::size_t b = 0; b < images.size(); b += chunk) {
    const std::size_t e = std::min(images.size(), b + chunk);
    const ad::Tensor f = vision.encode(std::span<const enc::Image>(images.data() + b, e - b)).value();
    std::copy(f.values().begin(), f.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(b * h));
  }
  return out;
}

PretrainResult pretrain_clip(const Corpus& corpus, enc::TextEncoder& text, enc::VisionEncoder& vision,
                             const dicop::AttributeVocabulary& vocab, const PretrainConfig& config) {
  if (corpus.pairs.empty()) throw ConfigError("pretraining corpus is empty");
  if (config.batch_size == 0) throw ConfigError("pretraining batch size must be positive");
  text.set_frozen(false);
  vision.set_frozen(false);

  std::map<int, enc::TokenSequence> prompt_of;
  for (const auto& d : corpus.captions) prompt_of[d.class_id] = dicop::build_prompt(vocab, d);

  std::vector<enc::Parameter*> params;
  for (auto& p : text.params().all()) params.push_back(&p);
  for (auto& p : vision.params().all()) params.push_back(&p);
  const std::vector<double> lrs(params.size(), config.lr);
  enc::AdamW opt;

  PretrainResult result;
  std::vector<std::size_t> order(corpus.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(mix(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      std::vector<enc::Image> imgs;
      std::vector<int> unique;
      std::vector<std::size_t> caption_row;
      for (std::size_t i = b; i < e; ++i) {
        const auto& pair = corpus.pairs[order[i]];
        imgs.push_back(pair.image);
        auto it = std::find(unique.begin(), unique.end(), pair.class_id);
        if (it == unique.end()) {
          unique.push_back(pair.class_id);
          it = unique.end() - 1;
        }
        caption_row.push_back(static_cast<std::size_t>(it - unique.begin()));
      }
      std::vector<enc::TokenSequence> seqs;
      for (int k : unique) seqs.push_back(prompt_of.at(k));

      ad::Tape tape;
      ad::Tape::Scope scope(tape);
      const ad::Var f_v = vision.encode(imgs);
      const ad::Var f_t = ad::gather_rows(text.encode(seqs), caption_row);
      const ad::Var loss = dpl::loss_ita(f_v, f_t, config.tau);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("pretraining loss diverged in epoch " + std::to_string(epoch) +
                           "; last finite epoch: " +
                           (epoch == 0 ? std::string("none") : std::to_string(epoch - 1)));
      }
      tape.backward(loss);
      opt.step(params, lrs);
      total += value;
      ++batches;
    }
    result.loss_curve.push_back(total / static_cast<double>(batches));
    result.epochs_run = epoch + 1;
  }
  text.set_frozen(true);
  return result;
}

std::vector<std::size_t> zero_shot_predict(const enc::TextEncoder& text, const enc::VisionEncoder& vision,
                                           const dicop::AttributeVocabulary& vocab,
                                           const std::vector<dicop::DiseaseDescriptor>& prompts,
                                           const std::vector<enc::Image>& images) {
  ad::NoGradScope no_grad;
  const auto seqs = dicop::build_prompts(vocab, prompts, dicop::PromptStyle::attributes);
  const ad::Tensor f_t = text.encode(seqs).value();
  const ad::Tensor f_v = encode_images(vision, images);
  const ad::Tensor sims = ad::matmul_nt(ad::Var::constant(f_v), ad::Var::constant(f_t)).value();
  std::vector<std::size_t> pred(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < prompts.size(); ++k)
      if (sims.at(i, k) > sims.at(i, best)) best = k;
    pred[i] = best;
  }
  return pred;
}

void dump_dataset(const AdaptationData& data, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir + ": " + ec.message());
  const fs::path manifest_path = fs::path(dir) / "manifest.tsv";
  std::ofstream manifest(manifest_path, std::ios::binary);
  if (!manifest) throw InputError("cannot write " + manifest_path.string());
  manifest << "index\tsplit\tclass_id\tprototype_id\ttexture\tlocation\tshape\n";
  const std::pair<const char*, const std::vector<std::size_t>*> splits[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  for (const auto& [name, idx] : splits) {
    for (std::size_t i : *idx) {
      const Sample& s = data.samples[i];
      const fs::path file = fs::path(dir) / (std::string(name) + "_" + std::to_string(s.index) + ".f32");
      std::ofstream out(file, std::ios::binary);
      if (!out) throw InputError("cannot write " + file.string());
      for (double v : s.image.pixels) {
        const float f = static_cast<float>(v);
        unsigned char bytes[4];
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        for (int b = 0; b < 4; ++b) bytes[b] = static_cast<unsigned char>((u >> (8 * b)) & 0xFFU);
        out.write(reinterpret_cast<const char*>(bytes), 4);
      }
      if (!out) throw InputError("write failed for " + file.string());
      const auto& d = data.prototypes[s.prototype_id];
      manifest << s.index << '\t' << name << '\t' << s.label << '\t' << s.prototype_id << '\t' << d.texture << '\t'
               << d.location << '\t' << d.shape << '\n';
    }
  }
  if (!manifest) throw InputError("write failed for " + manifest_path.string());
}

}  // namespace diva::synth
