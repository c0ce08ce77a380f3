#include "diva/harness/experiment.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "diva/autodiff/tape.hpp"
#include "diva/encoders/optim.hpp"
#include "diva/error.hpp"

namespace diva::harness {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::vector<std::size_t>> batches_of(std::vector<std::size_t> order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < order.size(); b += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + batch_size)));
  return out;
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> v, std::uint64_t seed, std::size_t epoch) {
  std::mt19937_64 rng(mix(seed, 1000 + epoch));
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

ad::Tensor rows_of(const ad::Tensor& t, const std::vector<std::size_t>& idx) {
  return ad::gather_rows(ad::Var::constant(t), idx).value();
}

dpl::LossSwitches switches_for(Variant v) {
  dpl::LossSwitches s;
  s.ita = v != Variant::no_ita;
  s.prot = v != Variant::no_prot;
  s.regularize = v != Variant::no_reg;
  return s;
}

void append_rows(ad::Tensor& dst, std::size_t at, const ad::Tensor& src) {
  std::copy(src.values().begin(), src.values().end(),
            dst.values().begin() + static_cast<std::ptrdiff_t>(at * dst.cols()));
}

}  // namespace

PretrainedModel fresh_model(const ExperimentConfig& config) {
  auto vocab = dicop::AttributeVocabulary::standard();
  enc::TextEncoder text(config.model.text(vocab.size()), config.model.text_seed);
  enc::VisionEncoder vision(config.model.vision(), config.model.vision_seed);
  return {std::move(vocab), std::move(text), std::move(vision), config.pretrain_fingerprint()};
}

PretrainOutcome run_pretraining(const ExperimentConfig& config, const synth::Scenario& scenario) {
  PretrainedModel model = fresh_model(config);
  synth::PretrainResult curve = synth::pretrain_clip(scenario.pretrain, model.text, model.vision, model.vocab,
                                                     config.pretrain);
  round_to_f32(model.text.params());
  round_to_f32(model.vision.params());
  model.text.set_frozen(true);
  model.vision.set_frozen(true);
  return {std::move(model), std::move(curve)};
}

Checkpoint pretrained_checkpoint(const PretrainedModel& model) {
  Checkpoint c;
  c.add_params("text.", model.text.params());
  c.add_params("vision.", model.vision.params());
  c.set_fingerprint(model.fingerprint);
  return c;
}

PretrainedModel load_pretrained(const ExperimentConfig& config, const std::string& path) {
  if (!std::filesystem::exists(path))
    throw InputError("no pretrained checkpoint at " + path +
                     "; run `diva pretrain --config <file> --out <dir>` first (or set [run] pretrained_checkpoint)");
  const Checkpoint ckpt = load_checkpoint(path);
  PretrainedModel model = fresh_model(config);
  if (ckpt.fingerprint() != model.fingerprint)
    throw FormatError(path + " was pretrained under a different scenario/pretrain/model configuration");
  const Checkpoint expected = pretrained_checkpoint(model);
  ckpt.expect_names(expected.names());
  ckpt.restore_params("text.", model.text.params());
  ckpt.restore_params("vision.", model.vision.params());
  model.text.set_frozen(true);
  model.vision.set_frozen(true);
  return model;
}

Experiment::Experiment(ExperimentConfig config, const PretrainedModel& pretrained, const synth::Scenario& scenario)
    : config_(std::move(config)), pretrained_(pretrained), data_(scenario.adapt) {
  std::vector<std::size_t> all(data_.samples.size());
  std::iota(all.begin(), all.end(), 0);
  frozen_features_ = synth::encode_images(pretrained_.vision, images(all));
}

std::vector<enc::Image> Experiment::images(const std::vector<std::size_t>& indices) const {
  std::vector<enc::Image> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data_.samples.at(i).image);
  return out;
}

std::vector<std::size_t> Experiment::labels(const std::vector<std::size_t>& indices) const {
  std::vector<std::size_t> out;
  for (std::size_t i : indices) out.push_back(data_.samples.at(i).label);
  return out;
}

AdaptedModel Experiment::initial_model(const RunSpec& spec) const {
  const std::size_t h = config_.model.embed_dim;
  enc::VisionEncoder vision = pretrained_.vision;
  if (config_.train.finetune == Finetune::lora) vision.attach_lora(config_.train.lora, mix(spec.seed, 1));
  else vision.set_frozen(false);
  const auto style = spec.variant == Variant::no_attributes ? dicop::PromptStyle::class_name
                                                            : dicop::PromptStyle::attributes;
  auto prompts = dicop::build_prompts(pretrained_.vocab, data_.prototypes, style);
  ad::Tensor anchors;
  {
    ad::NoGradScope no_grad;
    anchors = dicop::encode_text_prompts(pretrained_.text, prompts).value();
  }
  return AdaptedModel{std::move(vision), dicop::ContextProjector(h, h, mix(spec.seed, 2)),
                      dpl::PrototypeSet(anchors, data_.class_map, data_.n_classes),
                      dpl::Classifier(h, data_.n_classes, config_.train.classifier_scale), std::move(prompts)};
}

Evaluation Experiment::evaluate(const AdaptedModel& model, const std::vector<std::size_t>& indices) const {
  ad::NoGradScope no_grad;
  constexpr std::size_t kChunk = 128;
  Evaluation ev;
  ev.probs = ad::Tensor::matrix(indices.size(), data_.n_classes);
  for (std::size_t b = 0; b < indices.size(); b += kChunk) {
    const std::vector<std::size_t> part(indices.begin() + static_cast<std::ptrdiff_t>(b),
                                        indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), b + kChunk)));
    const ad::Var f_v = model.vision.encode(images(part));
    append_rows(ev.probs, b, model.classifier.classify(f_v).value());
  }
  ev.predictions = argmax_rows(ev.probs);
  ev.metrics = compute_metrics(ev.probs, ev.predictions, labels(indices));
  return ev;
}

AdaptedModel Experiment::adapt(const RunSpec& spec, SeedResult& result) const {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& tc = config_.train;
  AdaptedModel model = initial_model(spec);
  const std::vector<std::size_t> subset = synth::few_shot_subset(data_, spec.fraction, spec.seed);

  std::vector<enc::Parameter*> params;
  std::vector<double> lrs;
  const std::size_t groups = model.vision.n_depth_groups();
  for (auto& p : model.vision.params().all()) {
    if (!p.trainable) continue;
    params.push_back(&p);
    const bool decay = tc.finetune == Finetune::layer_decay && p.depth >= 0;
    lrs.push_back(decay ? enc::layerwise_lr(static_cast<std::size_t>(p.depth), groups, tc.lr, tc.layer_decay) : tc.lr);
  }
  for (enc::ParamStore* store : {&model.projector.params(), &model.prototypes.params(), &model.classifier.params()}) {
    for (auto& p : store->all()) {
      params.push_back(&p);
      lrs.push_back(tc.lr);
    }
  }
  enc::AdamW opt(tc.adamw);
  const dpl::LossSwitches switches = switches_for(spec.variant);
  const std::size_t h = config_.model.embed_dim;

  std::optional<AdaptedModel> best;
  double best_f1 = -1.0;
  result = SeedResult{};
  result.spec = spec;
  result.n_train = subset.size();
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    EpochLog log;
    std::size_t n_batches = 0;
    for (const auto& batch : batches_of(shuffled(subset, spec.seed, epoch), tc.batch_size)) {
      std::vector<std::size_t> labels, protos;
      for (std::size_t i : batch) {
        labels.push_back(data_.samples[i].label);
        protos.push_back(data_.samples[i].prototype_id);
      }
      ad::Tape tape;
      ad::Tape::Scope scope(tape);
      const ad::Var f_v = model.vision.encode(images(batch));
      const ad::Var f_s = spec.variant == Variant::no_projector
                              ? ad::Var::constant(ad::Tensor::matrix(batch.size(), h))
                              : model.projector.project(f_v);
      const ad::Var f_ts = dicop::encode_contextual_prompts(pretrained_.text, model.prompts, protos, f_s);
      const ad::Var probs = model.classifier.classify(f_v);
      const dpl::TotalLoss loss =
          dpl::total_loss({f_v, f_ts, probs, labels, protos}, model.prototypes, tc.weights, switches, tc.prot_sign);
      tape.backward(loss.total);
      opt.step(params, lrs);
      log.loss += loss.breakdown.l_total;
      log.breakdown.l_ita += loss.breakdown.l_ita;
      log.breakdown.l_prot += loss.breakdown.l_prot;
      log.breakdown.l_reg_ce += loss.breakdown.l_reg_ce;
      log.breakdown.l_total += loss.breakdown.l_total;
      ++n_batches;
    }
    const double nb = static_cast<double>(n_batches);
    log.loss /= nb;
    log.breakdown.l_ita /= nb;
    log.breakdown.l_prot /= nb;
    log.breakdown.l_reg_ce /= nb;
    log.breakdown.l_total /= nb;
    log.anchor_distance = model.prototypes.mean_anchor_distance();
    log.val_weighted_f1 = evaluate(model, data_.val).metrics.weighted_f1;
    if (log.val_weighted_f1 > best_f1) {
      best_f1 = log.val_weighted_f1;
      result.best_epoch = epoch;
      best = model;
    }
    result.epochs.push_back(log);
  }
  if (best) model = std::move(*best);
  result.test = evaluate(model, data_.test).metrics;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return model;
}

SeedResult Experiment::run_baseline(const RunSpec& spec) const {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& tc = config_.train;
  const base::BaselineKind kind = *baseline_of(spec.method);
  const std::size_t h = config_.model.embed_dim, K = data_.n_classes, C = data_.prototypes.size();
  const double tau = tc.weights.tau1;
  const enc::TextEncoder& text = pretrained_.text;

  std::vector<int> class_ids;
  for (const auto& d : data_.prototypes) class_ids.push_back(d.class_id);
  ad::Tensor prompt_features;
  {
    ad::NoGradScope no_grad;
    prompt_features = dicop::encode_text_prompts(
                          text, dicop::build_prompts(pretrained_.vocab, data_.prototypes, dicop::PromptStyle::attributes))
                          .value();
  }

  dpl::Classifier probe(h, K, tc.classifier_scale);
  base::ClipAdapter adapter(h, tc.baseline.adapter_bottleneck, tc.baseline.blend, mix(spec.seed, 3));
  base::PromptContext context(text, pretrained_.vocab, class_ids, tc.baseline.context_length);
  base::MetaNet meta(h, tc.baseline.meta_bottleneck, mix(spec.seed, 4));

  std::vector<enc::ParamStore*> stores;
  switch (kind) {
    case base::BaselineKind::linear_probe: stores = {&probe.params()}; break;
    case base::BaselineKind::clip_adapter: stores = {&adapter.params()}; break;
    case base::BaselineKind::coop: stores = {&context.params()}; break;
    case base::BaselineKind::cocoop: stores = {&context.params(), &meta.params()}; break;
  }
  const std::span<const std::size_t> class_map(data_.class_map);
  auto forward = [&](const ad::Var& f) -> ad::Var {
    switch (kind) {
      case base::BaselineKind::linear_probe: return probe.classify(f);
      case base::BaselineKind::clip_adapter:
        return base::grouped_probs(
            base::similarity_logits(adapter.adapt(f), ad::Var::constant(prompt_features), tau), class_map, K);
      case base::BaselineKind::coop:
        return base::grouped_probs(base::similarity_logits(f, context.encode(text), tau), class_map, K);
      case base::BaselineKind::cocoop:
        return base::grouped_probs(
            base::conditioned_logits(f, context.encode_shifted(text, meta.shift(f)), C, tau), class_map, K);
    }
    throw ContractError("unhandled baseline");
  };
  auto evaluate_split = [&](const std::vector<std::size_t>& idx) {
    ad::NoGradScope no_grad;
    const ad::Tensor probs = forward(ad::Var::constant(rows_of(frozen_features_, idx))).value();
    const auto pred = argmax_rows(probs);
    return compute_metrics(probs, pred, labels(idx));
  };

  std::vector<enc::Parameter*> params;
  for (auto* s : stores)
    for (auto& p : s->all()) params.push_back(&p);
  const std::vector<double> lrs(params.size(), tc.lr);
  enc::AdamW opt(tc.adamw);

  SeedResult result;
  result.spec = spec;
  const std::vector<std::size_t> subset = synth::few_shot_subset(data_, spec.fraction, spec.seed);
  result.n_train = subset.size();
  std::vector<enc::ParamStore> best;
  double best_f1 = -1.0;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    EpochLog log;
    std::size_t n_batches = 0;
    for (const auto& batch : batches_of(shuffled(subset, spec.seed, epoch), tc.batch_size)) {
      ad::Tape tape;
      ad::Tape::Scope scope(tape);
      const ad::Var loss = base::nll(forward(ad::Var::constant(rows_of(frozen_features_, batch))), labels(batch));
      tape.backward(loss);
      opt.step(params, lrs);
      log.loss += loss.value().item();
      ++n_batches;
    }
    log.loss /= static_cast<double>(n_batches);
    log.anchor_distance = std::nan("");
    log.val_weighted_f1 = evaluate_split(data_.val).weighted_f1;
    if (log.val_weighted_f1 > best_f1) {
      best_f1 = log.val_weighted_f1;
      result.best_epoch = epoch;
      best.clear();
      for (auto* s : stores) best.push_back(*s);
    }
    result.epochs.push_back(log);
  }
  for (std::size_t i = 0; i < best.size(); ++i) *stores[i] = best[i];
  result.test = evaluate_split(data_.test);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

SeedResult Experiment::run(const RunSpec& spec) const {
  if (spec.method == Method::dicop_dpl) {
    SeedResult r;
    adapt(spec, r);
    return r;
  }
  if (spec.variant != Variant::full) throw ConfigError("ablation variants apply to dicop_dpl only");
  return run_baseline(spec);
}

std::vector<SeedResult> Experiment::run_all(const std::vector<RunSpec>& specs, std::size_t jobs) const {
  std::vector<SeedResult> out(specs.size());
  std::vector<std::exception_ptr> errors(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < specs.size();) {
      try {
        out[i] = run(specs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, specs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<RunSpec> compare_specs(const ExperimentConfig& config) {
  std::vector<RunSpec> out;
  for (Method m : config.compare_methods)
    for (auto seed : config.train.seeds) out.push_back({m, Variant::full, config.train.fraction, seed});
  return out;
}

std::vector<RunSpec> sweep_specs(const ExperimentConfig& config) {
  std::vector<RunSpec> out;
  for (double f : config.sweep_fractions)
    for (Method m : config.sweep_methods)
      for (auto seed : config.train.seeds) out.push_back({m, Variant::full, f, seed});
  return out;
}

std::vector<RunSpec> ablation_specs(const ExperimentConfig& config) {
  std::vector<RunSpec> out;
  std::vector<Variant> variants{Variant::full};
  for (Variant v : ablation_variants()) variants.push_back(v);
  for (Variant v : variants)
    for (auto seed : config.train.seeds) out.push_back({Method::dicop_dpl, v, config.train.fraction, seed});
  return out;
}

std::string report_header(std::size_t n_classes) {
  std::string h = "method\tvariant\tfraction\tseed\tn_train\tbest_epoch\taccuracy\tweighted_f1\tmacro_auc";
  for (std::size_t k = 0; k < n_classes; ++k) {
    const std::string s = std::to_string(k);
    h += "\tprecision_" + s + "\trecall_" + s + "\tf1_" + s + "\tauc_" + s;
  }
  return h + "\tfinal_loss\tanchor_distance";
}

std::string format_report(const std::vector<SeedResult>& results, std::size_t n_classes) {
  std::string out = report_header(n_classes) + "\n";
  for (const auto& r : results) {
    const bool main = r.spec.method == Method::dicop_dpl;
    out += std::string(method_name(r.spec.method)) + "\t" + (main ? variant_name(r.spec.variant) : "-") + "\t" +
           num(r.spec.fraction) + "\t" + std::to_string(r.spec.seed) + "\t" + std::to_string(r.n_train) + "\t" +
           std::to_string(r.best_epoch) + "\t" + num(r.test.accuracy) + "\t" + num(r.test.weighted_f1) + "\t" +
           num(r.test.macro_auc);
    for (std::size_t k = 0; k < n_classes; ++k) {
      const ClassMetrics c = k < r.test.per_class.size() ? r.test.per_class[k] : ClassMetrics{};
      out += "\t" + num(c.precision) + "\t" + num(c.recall) + "\t" + num(c.f1) + "\t" + num(c.auc);
    }
    const double loss = r.epochs.empty() ? std::nan("") : r.epochs.back().loss;
    const double dist = r.epochs.empty() ? std::nan("") : r.epochs.back().anchor_distance;
    out += "\t" + num(loss) + "\t" + num(dist) + "\n";
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!out) throw InputError("write failed for " + path);
}

std::vector<ReportRow> parse_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InputError("report is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    std::string item;
    std::istringstream ls(s);
    while (std::getline(ls, item, '\t')) f.push_back(item);
    return f;
  };
  const auto header = split(line);
  if (header.size() < 4 || header[0] != "method" || header[1] != "variant" || header[2] != "fraction" ||
      header[3] != "seed")
    throw InputError("report header does not start with method, variant, fraction, seed");
  std::vector<ReportRow> rows;
  for (int number = 2; std::getline(in, line); ++number) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size())
      throw InputError("report line " + std::to_string(number) + " has " + std::to_string(f.size()) + " fields, header has " +
                       std::to_string(header.size()));
    ReportRow r;
    r.method = f[0];
    r.variant = f[1];
    r.fraction = std::stod(f[2]);
    r.seed = std::stoull(f[3]);
    for (std::size_t c = 4; c < f.size(); ++c) r.values[header[c]] = f[c] == "nan" ? std::nan("") : std::stod(f[c]);
    rows.push_back(std::move(r));
  }
  return rows;
}

double metric_value(const SeedResult& r, const std::string& metric) {
  if (metric == "weighted_f1") return r.test.weighted_f1;
  if (metric == "accuracy") return r.test.accuracy;
  if (metric == "macro_auc") return r.test.macro_auc;
  throw ConfigError("unknown summary metric '" + metric + "'");
}

std::vector<SummaryRow> summarize(const std::vector<SeedResult>& results, const std::string& metric) {
  std::vector<SummaryRow> rows;
  for (const auto& r : results) {
    const std::string m = method_name(r.spec.method);
    const std::string v = r.spec.method == Method::dicop_dpl ? variant_name(r.spec.variant) : "-";
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& s) {
      return s.method == m && s.variant == v && s.fraction == r.spec.fraction;
    });
    if (it == rows.end()) {
      rows.push_back({m, v, r.spec.fraction, 0, 0.0});
      it = rows.end() - 1;
    }
    it->mean += metric_value(r, metric);
    ++it->n;
  }
  for (auto& s : rows) s.mean /= static_cast<double>(s.n);
  return rows;
}

std::string format_summary(const std::vector<SummaryRow>& rows) {
  std::string out = "method\tvariant\tfraction\tn_seeds\tmean\n";
  for (const auto& s : rows)
    out += s.method + "\t" + s.variant + "\t" + num(s.fraction) + "\t" + std::to_string(s.n) + "\t" + num(s.mean) + "\n";
  return out;
}

Checkpoint adapted_checkpoint(const AdaptedModel& model, const PretrainedModel& pretrained) {
  Checkpoint c;
  c.add_params("text.", pretrained.text.params());
  c.add_params("vision.", model.vision.params());
  c.add_params("projector.", model.projector.params());
  c.add_params("prototypes.", model.prototypes.params());
  c.add("prototypes.anchors", model.prototypes.anchors());
  c.add_params("classifier.", model.classifier.params());
  c.set_fingerprint(pretrained.fingerprint);
  return c;
}

AdaptedModel load_adapted(const Experiment& experiment, const std::string& path) {
  if (!std::filesystem::exists(path))
    throw InputError("no adapted checkpoint at " + path + "; run `diva adapt` with method dicop_dpl first");
  const Checkpoint ckpt = load_checkpoint(path);
  const PretrainedModel& pre = experiment.pretrained();
  if (ckpt.fingerprint() != pre.fingerprint)
    throw FormatError(path + " was adapted from a different pretrained model");
  AdaptedModel model = experiment.initial_model({Method::dicop_dpl, Variant::full, 1.0, 0});
  ckpt.expect_names(adapted_checkpoint(model, pre).names());
  const ad::Tensor* anchors = ckpt.find("prototypes.anchors");
  if (!anchors) throw FormatError(path + ": missing prototypes.anchors");
  if (anchors->shape() != model.prototypes.anchors().shape())
    throw FormatError(path + ": prototypes.anchors has shape " + ad::shape_str(anchors->shape()));
  model.prototypes = dpl::PrototypeSet(*anchors, model.prototypes.class_map(), model.prototypes.n_classes());
  enc::ParamStore text = pre.text.params();
  ckpt.restore_params("text.", text);
  for (std::size_t i = 0; i < text.size(); ++i)
    if (!(text[i].var.value() == pre.text.params()[i].var.value()))
      throw FormatError(path + ": text encoder tensor " + text[i].name + " differs from the pretrained model");
  ckpt.restore_params("vision.", model.vision.params());
  ckpt.restore_params("projector.", model.projector.params());
  ckpt.restore_params("prototypes.", model.prototypes.params());
  ckpt.restore_params("classifier.", model.classifier.params());
  return model;
}

Projection2D pca_2d(const ad::Tensor& rows, double tol, std::size_t max_iter) {
  const std::size_t n = rows.rows(), h = rows.cols();
  if (n == 0 || h < 2) throw InputError("pca: need at least one row of width >= 2");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const Mat> X(rows.values().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(h));
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Mat centered = X.rowwise() - mu;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(std::max<std::size_t>(n, 1));

  std::vector<Eigen::VectorXd> comps;
  for (int c = 0; c < 2; ++c) {
    // Start from the covariance column of largest norm; it lies in the range.
    Eigen::Index start = 0;
    cov.colwise().norm().maxCoeff(&start);
    Eigen::VectorXd v = cov.col(start);
    for (const auto& u : comps) v -= u.dot(v) * u;
    if (v.norm() < 1e-300) {
      v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(h));
      v(c == 0 ? 0 : 1) = 1.0;
      for (const auto& u : comps) v -= u.dot(v) * u;
    }
    v.normalize();
    for (std::size_t it = 0; it < max_iter; ++it) {
      Eigen::VectorXd w = cov * v;
      for (const auto& u : comps) w -= u.dot(w) * u;
      if (w.norm() < 1e-300) break;  // remaining spectrum is zero; any unit v spans it
      w.normalize();
      if (w.dot(v) < 0) w = -w;
      const double change = (w - v).norm();
      v = w;
      if (change < tol) break;
    }
    // Deterministic sign: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    comps.push_back(v);
    cov -= (v.transpose() * cov * v)(0, 0) * v * v.transpose();
  }
  Projection2D p;
  p.mean.assign(mu.data(), mu.data() + h);
  p.c0.assign(comps[0].data(), comps[0].data() + h);
  p.c1.assign(comps[1].data(), comps[1].data() + h);
  p.points = ad::Tensor::matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    p.points.at(i, 0) = centered.row(static_cast<Eigen::Index>(i)).dot(comps[0]);
    p.points.at(i, 1) = centered.row(static_cast<Eigen::Index>(i)).dot(comps[1]);
  }
  return p;
}

std::string export_embeddings(const Experiment& experiment, const AdaptedModel& model) {
  const auto& data = experiment.data();
  const std::size_t h = experiment.config().model.embed_dim, C = data.prototypes.size(), nt = data.test.size();
  ad::Tensor all = ad::Tensor::matrix(nt + 2 * C, h);
  {
    ad::NoGradScope no_grad;
    append_rows(all, 0, synth::encode_images(model.vision, experiment.images(data.test)));
    append_rows(all, nt, dicop::encode_text_prompts(experiment.pretrained().text, model.prompts).value());
    append_rows(all, nt + C, model.prototypes.params()[0].var.value());
  }
  const Projection2D proj = pca_2d(all);
  std::string out = "id,kind,class_id,prototype_id";
  for (std::size_t j = 0; j < h; ++j) out += ",e" + std::to_string(j);
  out += ",p0,p1\n";
  auto row = [&](std::size_t r, std::size_t id, const char* kind, std::size_t cls, std::size_t proto) {
    out += std::to_string(id) + "," + kind + "," + std::to_string(cls) + "," + std::to_string(proto);
    for (std::size_t j = 0; j < h; ++j) out += "," + num(all.at(r, j));
    out += "," + num(proj.points.at(r, 0)) + "," + num(proj.points.at(r, 1)) + "\n";
  };
  for (std::size_t i = 0; i < nt; ++i) {
    const auto& s = data.samples[data.test[i]];
    row(i, s.index, "image", s.label, s.prototype_id);
  }
  for (std::size_t k = 0; k < C; ++k) row(nt + k, k, "text_prompt", data.class_map[k], k);
  for (std::size_t k = 0; k < C; ++k) row(nt + C + k, k, "prototype", data.class_map[k], k);
  return out;
}

}  // namespace diva::harness
