#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "diva/error.hpp"
#include "diva/harness/checkpoint.hpp"
#include "diva/harness/config.hpp"
#include "diva/harness/experiment.hpp"
#include "diva/harness/stats.hpp"

using namespace diva;
using namespace diva::harness;

namespace {

struct Globals {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 0;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_experiment_config(g.config);
  if (g.seed) c.train.seeds = {*g.seed};
  if (g.jobs > 0) c.jobs = g.jobs;
  c.validate();
  return c;
}

std::string pretrained_path(const ExperimentConfig& c, const Globals& g) {
  return c.pretrained_checkpoint.empty() ? (std::filesystem::path(g.out) / "pretrained.ckpt").string()
                                         : c.pretrained_checkpoint;
}

std::string out_file(const Globals& g, const std::string& name) {
  std::filesystem::create_directories(g.out);
  return (std::filesystem::path(g.out) / name).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_results(const Globals& g, const std::string& stem, const std::vector<SeedResult>& results,
                   std::size_t n_classes) {
  const std::string report = out_file(g, stem + ".tsv");
  write_text_file(report, format_report(results, n_classes));
  const std::string summary = format_summary(summarize(results));
  write_text_file(out_file(g, stem + "_summary.tsv"), summary);
  std::cout << summary << "report: " << report << "\n";
}

int cmd_pretrain(const Globals& g) {
  const ExperimentConfig c = load_config(g);
  const synth::Scenario scenario = synth::generate_scenario(c.scenario);
  const auto t0 = std::chrono::steady_clock::now();
  const PretrainOutcome p = run_pretraining(c, scenario);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string path = pretrained_path(c, g);
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  save_checkpoint(pretrained_checkpoint(p.model), path);
  std::ostringstream curve;
  curve << "epoch\tloss\n";
  for (std::size_t e = 0; e < p.curve.loss_curve.size(); ++e) curve << e + 1 << '\t' << p.curve.loss_curve[e] << '\n';
  write_text_file(out_file(g, "pretrain_loss.tsv"), curve.str());
  std::printf("pretrained %zu epochs in %.1fs, final loss %.4f\ncheckpoint: %s\n", p.curve.epochs_run, secs,
              p.curve.loss_curve.empty() ? 0.0 : p.curve.loss_curve.back(), path.c_str());
  return 0;
}

int cmd_adapt(const Globals& g, const std::string& method, bool save) {
  const ExperimentConfig c = load_config(g);
  const synth::Scenario scenario = synth::generate_scenario(c.scenario);
  const PretrainedModel pre = load_pretrained(c, pretrained_path(c, g));
  const Experiment ex(c, pre, scenario);
  std::vector<RunSpec> specs;
  if (method == "all") {
    specs = compare_specs(c);
  } else {
    const Method m = method.empty() ? c.train.method : parse_method(method);
    for (std::uint64_t s : c.train.seeds) specs.push_back({m, Variant::full, c.train.fraction, s});
  }
  const std::string stem = method == "all" ? "compare" : "adapt";
  if (!save) {
    write_results(g, stem, ex.run_all(specs, c.jobs), ex.data().n_classes);
    return 0;
  }
  std::vector<SeedResult> results;
  for (const RunSpec& s : specs) {
    if (s.method != Method::dicop_dpl) {
      results.push_back(ex.run(s));
      continue;
    }
    SeedResult r;
    const AdaptedModel model = ex.adapt(s, r);
    results.push_back(r);
    const std::string path = out_file(g, "adapted_seed" + std::to_string(s.seed) + ".ckpt");
    save_checkpoint(adapted_checkpoint(model, pre), path);
    std::cout << "checkpoint: " << path << "\n";
  }
  write_results(g, stem, results, ex.data().n_classes);
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint) {
  const ExperimentConfig c = load_config(g);
  const synth::Scenario scenario = synth::generate_scenario(c.scenario);
  const PretrainedModel pre = load_pretrained(c, pretrained_path(c, g));
  const Experiment ex(c, pre, scenario);
  const AdaptedModel model = load_adapted(ex, checkpoint);
  const Evaluation ev = ex.evaluate(model, ex.data().test);
  const MetricSet& m = ev.metrics;
  std::printf("accuracy\t%.6f\nweighted_f1\t%.6f\nmacro_auc\t%.6f\n", m.accuracy, m.weighted_f1, m.macro_auc);
  for (std::size_t k = 0; k < m.per_class.size(); ++k) {
    const ClassMetrics& pc = m.per_class[k];
    std::printf("class %zu\tsupport %zu\tprecision %.6f\trecall %.6f\tf1 %.6f\tauc %.6f\n", k, pc.support,
                pc.precision, pc.recall, pc.f1, pc.auc);
  }
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_sweep(const Globals& g) {
  const ExperimentConfig c = load_config(g);
  const synth::Scenario scenario = synth::generate_scenario(c.scenario);
  const PretrainedModel pre = load_pretrained(c, pretrained_path(c, g));
  const Experiment ex(c, pre, scenario);
  write_results(g, "sweep", ex.run_all(sweep_specs(c), c.jobs), ex.data().n_classes);
  return 0;
}

int cmd_ablate(const Globals& g) {
  const ExperimentConfig c = load_config(g);
  const synth::Scenario scenario = synth::generate_scenario(c.scenario);
  const PretrainedModel pre = load_pretrained(c, pretrained_path(c, g));
  const Experiment ex(c, pre, scenario);
  write_results(g, "ablation", ex.run_all(ablation_specs(c), c.jobs), ex.data().n_classes);
  return 0;
}

// Pairs rows of `report` by seed for two (method, variant) selections.
std::vector<double> column(const std::vector<ReportRow>& rows, const std::string& method, const std::string& variant,
                           std::optional<double> fraction, const std::string& metric,
                           std::vector<std::uint64_t>& seeds) {
  std::vector<double> out;
  seeds.clear();
  for (const ReportRow& r : rows) {
    if (r.method != method) continue;
    if (!variant.empty() && r.variant != variant) continue;
    if (fraction && std::abs(r.fraction - *fraction) > 1e-12) continue;
    const auto it = r.values.find(metric);
    if (it == r.values.end()) throw InputError("report has no column '" + metric + "'");
    out.push_back(it->second);
    seeds.push_back(r.seed);
  }
  if (out.empty()) throw InputError("report has no rows for method '" + method + "'");
  return out;
}

std::string selection_method(const std::string& sel) { return sel.substr(0, sel.find(':')); }
std::string selection_variant(const std::string& sel) {
  const auto p = sel.find(':');
  return p == std::string::npos ? "" : sel.substr(p + 1);
}

int cmd_ttest(const std::string& report, const std::string& ours, const std::string& baseline,
              std::optional<double> fraction, const std::string& metric) {
  const auto rows = parse_report(read_file(report));
  std::vector<std::uint64_t> sa, sb;
  const auto a = column(rows, selection_method(ours), selection_variant(ours), fraction, metric, sa);
  const auto b = column(rows, selection_method(baseline), selection_variant(baseline), fraction, metric, sb);
  if (sa != sb) throw InputError("the two selections do not cover the same seeds in the same order");
  const TTestResult t = paired_ttest(a, b);
  std::printf("n\t%zu\nmean_difference\t%.6f\nt\t%.6f\np_one_tailed\t%.6g\nsignificant\t%s\n", t.n,
              t.mean_difference, t.t, t.p, t.significant ? "yes" : "no");
  if (t.degenerate) std::printf("degenerate\tyes (all differences equal)\n");
  return 0;
}

int cmd_export(const Globals& g, const std::string& checkpoint) {
  const ExperimentConfig c = load_config(g);
  const synth::Scenario scenario = synth::generate_scenario(c.scenario);
  const PretrainedModel pre = load_pretrained(c, pretrained_path(c, g));
  const Experiment ex(c, pre, scenario);
  const AdaptedModel model = checkpoint.empty() ? ex.initial_model({}) : load_adapted(ex, checkpoint);
  const std::string path = out_file(g, "embeddings.csv");
  write_text_file(path, export_embeddings(ex, model));
  std::cout << "embeddings: " << path << "\n";
  return 0;
}

int cmd_dump(const Globals& g) {
  const ExperimentConfig c = load_config(g);
  const synth::Scenario scenario = synth::generate_scenario(c.scenario);
  const std::string dir = (std::filesystem::path(g.out) / "dataset").string();
  synth::dump_dataset(scenario.adapt, dir);
  std::cout << "dataset: " << dir << " (" << scenario.adapt.samples.size() << " images)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disease-informed adaptation of dual-encoder models on a synthetic benchmark"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--seed", g.seed, "run this single seed instead of the configured list");
  app.add_option("--jobs", g.jobs, "worker threads (overrides run.jobs)");

  auto* pretrain = app.add_subcommand("pretrain", "contrastive pretraining of both encoders");

  std::string method;
  bool save = false;
  auto* adapt = app.add_subcommand("adapt", "adapt with one method over the configured seeds");
  adapt->add_option("--method", method, "dicop_dpl, linear_probe, clip_adapter, coop, cocoop or all");
  adapt->add_flag("--save", save, "also save the adapted main-method model per seed");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "test metrics of a saved adapted model");
  eval->add_option("--checkpoint", checkpoint, "adapted checkpoint")->required()->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep", "data-fraction sweep");
  auto* ablate = app.add_subcommand("ablate", "leave-one-out ablation of the main method");

  std::string report, ours = "dicop_dpl:full", baseline = "linear_probe", metric = "weighted_f1";
  std::optional<double> fraction;
  auto* ttest = app.add_subcommand("ttest", "one-tailed paired t-test between two report selections");
  ttest->add_option("--report", report, "report file")->required()->check(CLI::ExistingFile);
  ttest->add_option("--ours", ours, "method[:variant]")->capture_default_str();
  ttest->add_option("--baseline", baseline, "method[:variant]")->capture_default_str();
  ttest->add_option("--fraction", fraction, "restrict to one data fraction");
  ttest->add_option("--metric", metric, "report column")->capture_default_str();

  std::string export_ckpt;
  auto* exp = app.add_subcommand("export-embeddings", "image, prompt and prototype embeddings with a 2D PCA");
  exp->add_option("--checkpoint", export_ckpt, "adapted checkpoint (default: the untrained model)")
      ->check(CLI::ExistingFile);

  auto* dump = app.add_subcommand("dump-dataset", "write the adaptation images as raw float32 files");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*pretrain) return cmd_pretrain(g);
    if (*adapt) return cmd_adapt(g, method, save);
    if (*eval) return cmd_eval(g, checkpoint);
    if (*sweep) return cmd_sweep(g);
    if (*ablate) return cmd_ablate(g);
    if (*ttest) return cmd_ttest(report, ours, baseline, fraction, metric);
    if (*exp) return cmd_export(g, export_ckpt);
    if (*dump) return cmd_dump(g);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
