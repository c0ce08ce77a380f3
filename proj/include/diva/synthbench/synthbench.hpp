#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diva/dicop/prompts.hpp"
#include "diva/encoders/transformer.hpp"

namespace diva::synth {

inline constexpr std::size_t kImageSize = 32;
inline constexpr double kGround = 0.1;

// One procedural class: a textured shape at a fixed location.
struct SyntheticClassSpec {
  int class_id = 0;
  std::string texture;   // solid, striped, checker, dotted, speckle
  std::string location;  // center, upper left, upper right, lower left, lower right
  std::string shape;     // disk, square, triangle, ring
  double noise_std = 0.0;

  void validate() const;
  dicop::DiseaseDescriptor descriptor() const { return {class_id, texture, location, shape}; }
};

// Pixel-level render keyed only by (seed, sample_index) plus the class
// attributes. The noise field is indexed relative to the shape center, so two
// classes that differ only in location render to circularly shifted images.
enc::Image render_image(const SyntheticClassSpec& spec, std::uint64_t sample_index, std::uint64_t seed);

// Pixel offset of the shape center for a location word.
std::pair<int, int> location_center(const std::string& location);

enum class ScenarioKind { underrepresented, new_class };
const char* scenario_name(ScenarioKind kind);
ScenarioKind parse_scenario_kind(const std::string& name);

struct ScenarioConfig {
  std::vector<SyntheticClassSpec> classes;
  std::vector<int> pretrain_classes;
  std::size_t pairs_per_class = 500;
  int target_class = 0;
  ScenarioKind kind = ScenarioKind::new_class;
  double target_share = 0.005;  // of the pretraining pairs, underrepresented only
  // Negative classes of the binary adaptation task; the target is the positive.
  std::vector<int> benign_classes;
  std::size_t adapt_per_class = 250;
  std::uint64_t seed = 2024;

  void validate() const;
  void set_noise(double noise_std);
  const SyntheticClassSpec& spec(int class_id) const;
  // Six pretraining classes and one target that shares location and shape
  // with a benign class but carries a texture absent from the captions.
  static ScenarioConfig desk(ScenarioKind kind = ScenarioKind::new_class);
};

struct PretrainPair {
  std::size_t index = 0;
  int class_id = 0;
  enc::Image image;
};

struct Corpus {
  std::vector<PretrainPair> pairs;
  std::vector<dicop::DiseaseDescriptor> captions;  // one per pretraining class id present
  const dicop::DiseaseDescriptor& caption_of(int class_id) const;
  std::size_t count(int class_id) const;
};

struct Sample {
  std::size_t index = 0;
  int class_id = 0;            // fine-grained synthetic class
  std::size_t label = 0;       // task label in [0, K)
  std::size_t prototype_id = 0;
  enc::Image image;
};

// Binary adaptation task: label 1 = target class, label 0 = benign mix.
// Prototype ids follow `prototypes`: benign classes first, target last.
struct AdaptationData {
  std::size_t n_classes = 2;
  std::vector<dicop::DiseaseDescriptor> prototypes;
  std::vector<std::size_t> class_map;
  std::vector<Sample> samples;
  std::vector<std::size_t> train, val, test;  // indices into samples
};

struct Scenario {
  Corpus pretrain;
  AdaptationData adapt;
};

std::size_t underrepresented_pairs(std::size_t base_pairs, double share);
Scenario generate_scenario(const ScenarioConfig& config);

// Seeded, label-stratified subset of the training indices holding
// round(fraction * n_train) samples. ConfigError when a label would get none.
std::vector<std::size_t> few_shot_subset(const AdaptationData& data, double fraction, std::uint64_t seed);

struct PretrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 5e-4;
  double tau = 0.07;
  std::uint64_t seed = 1;
};

struct PretrainResult {
  std::vector<double> loss_curve;  // mean batch loss per epoch
  std::size_t epochs_run = 0;
};

// Symmetric contrastive training of both encoders on (image, caption) pairs.
// Throws NumericError naming the last finite epoch if the loss diverges.
PretrainResult pretrain_clip(const Corpus& corpus, enc::TextEncoder& text, enc::VisionEncoder& vision,
                             const dicop::AttributeVocabulary& vocab, const PretrainConfig& config);

// Argmax over cosine similarity between each image and the attribute prompts.
std::vector<std::size_t> zero_shot_predict(const enc::TextEncoder& text, const enc::VisionEncoder& vision,
                                           const dicop::AttributeVocabulary& vocab,
                                           const std::vector<dicop::DiseaseDescriptor>& prompts,
                                           const std::vector<enc::Image>& images);

// Vision features of many images, computed in chunks without a tape.
ad::Tensor encode_images(const enc::VisionEncoder& vision, const std::vector<enc::Image>& images,
                         std::size_t chunk = 128);

// Writes {split}_{index}.f32 files and manifest.tsv into `dir`.
void dump_dataset(const AdaptationData& data, const std::string& dir);

}  // namespace diva::synth
