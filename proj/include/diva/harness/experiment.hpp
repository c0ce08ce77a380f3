#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diva/baselines/baselines.hpp"
#include "diva/dicop/prompts.hpp"
#include "diva/dpl/dpl.hpp"
#include "diva/harness/checkpoint.hpp"
#include "diva/harness/config.hpp"
#include "diva/harness/metrics.hpp"
#include "diva/synthbench/synthbench.hpp"

namespace diva::harness {

struct PretrainedModel {
  dicop::AttributeVocabulary vocab;
  enc::TextEncoder text;
  enc::VisionEncoder vision;
  std::uint64_t fingerprint = 0;
};

PretrainedModel fresh_model(const ExperimentConfig& config);

struct PretrainOutcome {
  PretrainedModel model;
  synth::PretrainResult curve;
};

// Pretrains both encoders on the scenario corpus, then rounds every weight to
// 32-bit so in-process use matches a checkpoint reload bit for bit.
PretrainOutcome run_pretraining(const ExperimentConfig& config, const synth::Scenario& scenario);

Checkpoint pretrained_checkpoint(const PretrainedModel& model);
// InputError naming the `pretrain` command when the file does not exist;
// FormatError when it was produced under a different configuration.
PretrainedModel load_pretrained(const ExperimentConfig& config, const std::string& path);

// The adapted main-method model. Only `vision` and `classifier` run at
// inference time.
struct AdaptedModel {
  enc::VisionEncoder vision;
  dicop::ContextProjector projector;
  dpl::PrototypeSet prototypes;
  dpl::Classifier classifier;
  std::vector<dicop::TokenSequence> prompts;
};

struct RunSpec {
  Method method = Method::dicop_dpl;
  Variant variant = Variant::full;
  double fraction = 0.05;
  std::uint64_t seed = 0;
};

struct EpochLog {
  double loss = 0.0;  // mean training objective over the epoch's batches
  dpl::LossBreakdown breakdown;  // main method only
  double val_weighted_f1 = 0.0;
  double anchor_distance = 0.0;  // main method only
};

struct SeedResult {
  RunSpec spec;
  MetricSet test;
  std::size_t best_epoch = 0;  // 1-based; 0 means the untrained model
  std::size_t n_train = 0;
  std::vector<EpochLog> epochs;
  double wall_seconds = 0.0;
};

// Probabilities, predictions and labels for one evaluation.
struct Evaluation {
  ad::Tensor probs;
  std::vector<std::size_t> predictions;
  MetricSet metrics;
};

class Experiment {
 public:
  Experiment(ExperimentConfig config, const PretrainedModel& pretrained, const synth::Scenario& scenario);

  const ExperimentConfig& config() const { return config_; }
  const synth::AdaptationData& data() const { return data_; }
  const PretrainedModel& pretrained() const { return pretrained_; }

  // Safe to call from several threads at once.
  SeedResult run(const RunSpec& spec) const;
  // Runs every spec on `jobs` worker threads; results keep the input order.
  std::vector<SeedResult> run_all(const std::vector<RunSpec>& specs, std::size_t jobs) const;

  // Main method; also returns the selected model.
  AdaptedModel adapt(const RunSpec& spec, SeedResult& result) const;
  AdaptedModel initial_model(const RunSpec& spec) const;
  // Inference with E_v and the classifier only.
  Evaluation evaluate(const AdaptedModel& model, const std::vector<std::size_t>& indices) const;

  std::vector<enc::Image> images(const std::vector<std::size_t>& indices) const;
  std::vector<std::size_t> labels(const std::vector<std::size_t>& indices) const;

 private:
  SeedResult run_baseline(const RunSpec& spec) const;

  ExperimentConfig config_;
  const PretrainedModel& pretrained_;
  synth::AdaptationData data_;
  ad::Tensor frozen_features_;  // pretrained E_v features of every sample
};

// The full set of specs for each experiment kind.
std::vector<RunSpec> compare_specs(const ExperimentConfig& config);
std::vector<RunSpec> sweep_specs(const ExperimentConfig& config);
std::vector<RunSpec> ablation_specs(const ExperimentConfig& config);

// One line per (seed, variant, fraction) under a fixed header.
std::string report_header(std::size_t n_classes);
std::string format_report(const std::vector<SeedResult>& results, std::size_t n_classes);
void write_text_file(const std::string& path, const std::string& text);

struct ReportRow {
  std::string method, variant;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, double> values;
};
std::vector<ReportRow> parse_report(const std::string& text);

// Mean of `metric` per (method, variant, fraction), in first-seen order.
struct SummaryRow {
  std::string method, variant;
  double fraction = 0.0;
  std::size_t n = 0;
  double mean = 0.0;
};
std::vector<SummaryRow> summarize(const std::vector<SeedResult>& results, const std::string& metric = "weighted_f1");
std::string format_summary(const std::vector<SummaryRow>& rows);
double metric_value(const SeedResult& r, const std::string& metric);

Checkpoint adapted_checkpoint(const AdaptedModel& model, const PretrainedModel& pretrained);
AdaptedModel load_adapted(const Experiment& experiment, const std::string& path);

// Top-two principal components by power iteration with deflation.
struct Projection2D {
  std::vector<double> mean;
  std::vector<double> c0, c1;  // orthonormal components
  ad::Tensor points;           // n x 2
};
Projection2D pca_2d(const ad::Tensor& rows, double tol = 1e-9, std::size_t max_iter = 100000);

// id,kind,class_id,prototype_id,e0..e{h-1},p0,p1 for every test image, every
// text-only prompt and every prototype.
std::string export_embeddings(const Experiment& experiment, const AdaptedModel& model);

}  // namespace diva::harness
