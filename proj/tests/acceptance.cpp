// Prints one PASS/FAIL line per acceptance criterion; exits non-zero if any fail.
// Usage: acceptance [config.ini] [work-dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "diva/autodiff/grad_check.hpp"
#include "diva/baselines/baselines.hpp"
#include "diva/dicop/prompts.hpp"
#include "diva/dpl/dpl.hpp"
#include "diva/harness/checkpoint.hpp"
#include "diva/harness/config.hpp"
#include "diva/harness/experiment.hpp"
#include "diva/harness/metrics.hpp"
#include "diva/harness/stats.hpp"
#include "support.hpp"

using namespace diva;
using namespace diva::harness;
using diva::testing::random_tensor;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ad::Var cvar(ad::Tensor t) { return ad::Var::constant(std::move(t)); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------- gradients

struct GradTally {
  std::map<std::string, std::pair<int, double>> by_target;  // instances, worst error
  void add(const std::string& target, const ad::GradCheckReport& r) {
    auto& [n, worst] = by_target[target];
    ++n;
    worst = std::max(worst, r.max_rel_err);
  }
};

enc::Image random_image(std::mt19937_64& rng, std::size_t size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  enc::Image img{size, std::vector<double>(size * size)};
  for (double& p : img.pixels) p = u(rng);
  return img;
}

// O(1) random values keep ReLU pre-activations away from the kink, where
// central differences are meaningless.
void randomize(enc::ParamStore& s, std::mt19937_64& rng) {
  for (auto& p : s.all()) p.var.mutable_value() = random_tensor(rng, p.var.rows(), p.var.cols());
}

std::vector<ad::Var> leaves_of(enc::ParamStore& s) {
  std::vector<ad::Var> out;
  for (auto& p : s.all()) out.push_back(p.var);
  return out;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  constexpr int kInstances = 20;
  GradTally tally;
  std::mt19937_64 rng(2024);
  const auto vocab = dicop::AttributeVocabulary::standard();
  enc::TextEncoderConfig tc;
  tc.vocab_size = vocab.size();
  tc.embed_dim = 8;
  tc.n_layers = 1;
  tc.n_heads = 2;
  tc.mlp_dim = 8;
  enc::VisionEncoderConfig vc;
  vc.image_size = 8;
  vc.patch_size = 4;
  vc.embed_dim = 8;
  vc.n_layers = 1;
  vc.n_heads = 2;
  vc.mlp_dim = 8;

  for (int i = 0; i < kInstances; ++i) {
    const std::size_t n = 3 + i % 3, h = 6, C = 4, K = 2;
    const std::vector<std::size_t> map{0, 1, 0, 1};
    std::vector<std::size_t> pids(n), labels(n);
    for (std::size_t s = 0; s < n; ++s) {
      pids[s] = rng() % C;
      labels[s] = map[pids[s]];
    }
    const ad::Tensor f = random_tensor(rng, n, h), g = random_tensor(rng, n, h), z = random_tensor(rng, n, K);
    const ad::Tensor anchors = random_tensor(rng, C, h), m0 = random_tensor(rng, C, h);
    const double tau = 0.3 + 0.7 * (i % 4) / 3.0;

    {
      ad::Var a = ad::Var::leaf(f), b = ad::Var::leaf(g);
      std::vector<ad::Var> l{a, b};
      tally.add("L_ita", ad::grad_check_leaves([&] { return dpl::loss_ita(a, b, tau); }, l));
    }
    {
      ad::Var a = ad::Var::leaf(f), b = ad::Var::leaf(g), m = ad::Var::leaf(m0);
      std::vector<ad::Var> l{a, b, m};
      tally.add("L_prot", ad::grad_check_leaves([&] { return dpl::loss_prot(a, b, pids, m, tau, 0.1); }, l));
    }
    {
      ad::Var zl = ad::Var::leaf(z), m = ad::Var::leaf(m0);
      std::vector<ad::Var> l{zl, m};
      tally.add("L_reg_ce", ad::grad_check_leaves(
                                [&] { return dpl::loss_reg_ce(ad::softmax_rows(zl), labels, m, anchors, 0.1); }, l));
    }
    {
      dpl::PrototypeSet protos(anchors, map, K);
      protos.params()[0].var.mutable_value() = m0;
      ad::Var a = ad::Var::leaf(f), b = ad::Var::leaf(g), zl = ad::Var::leaf(z);
      std::vector<ad::Var> l{a, b, zl, protos.params()[0].var};
      const dpl::LossWeights w{tau, tau, 0.1, 0.1};
      tally.add("L_total", ad::grad_check_leaves(
                               [&] {
                                 return dpl::total_loss({a, b, ad::softmax_rows(zl), labels, pids}, protos, w).total;
                               },
                               l));
    }
    {
      dicop::ContextProjector proj(16, 8, 100 + i);
      randomize(proj.params(), rng);
      auto l = leaves_of(proj.params());
      ad::Var in = ad::Var::leaf(random_tensor(rng, n, 16));
      l.push_back(in);
      const ad::Tensor w = random_tensor(rng, n, 8);
      tally.add("projector",
                ad::grad_check_leaves([&] { return ad::sum(ad::mul(ad::exp(proj.project(in)), cvar(w))); }, l));
    }
    {
      enc::TextEncoder text(tc, 200 + i);
      const std::vector<dicop::TokenSequence> seqs{{0, 3, 4, 5}, {0, 6, 7}};
      const ad::Tensor w = random_tensor(rng, 2, 8);
      auto l = leaves_of(text.params());
      tally.add("text encoder",
                ad::grad_check_leaves([&] { return ad::sum(ad::mul(text.encode(seqs), cvar(w))); }, l, 1e-4, 1e-3, 4));
    }
    {
      enc::VisionEncoder vision(vc, 300 + i);
      vision.attach_lora({2, 2.0}, 400 + i);
      for (const auto& a : vision.adapters())
        vision.params()[a.b_id].var.mutable_value() = random_tensor(rng, 8, 2, -0.3, 0.3);
      vision.params().set_all_trainable(true);
      const std::vector<enc::Image> imgs{random_image(rng, 8), random_image(rng, 8)};
      const ad::Tensor w = random_tensor(rng, 2, 8);
      auto l = leaves_of(vision.params());
      tally.add("vision encoder", ad::grad_check_leaves(
                                      [&] { return ad::sum(ad::mul(vision.encode(imgs), cvar(w))); }, l, 1e-4, 1e-3, 4));
    }
    {
      dpl::Classifier probe(h, K, 1.0 / tau);
      probe.params()[probe.weight_id()].var.mutable_value() = random_tensor(rng, K, h);
      auto l = leaves_of(probe.params());
      tally.add("linear probe",
                ad::grad_check_leaves([&] { return base::nll(probe.classify(cvar(f)), labels); }, l));
    }
    {
      base::ClipAdapter adapter(h, 3, 0.2, 500 + i);
      randomize(adapter.params(), rng);
      auto l = leaves_of(adapter.params());
      const ad::Tensor t = random_tensor(rng, C, h);
      tally.add("CLIP-Adapter", ad::grad_check_leaves(
                                    [&] {
                                      const ad::Var logits = base::similarity_logits(adapter.adapt(cvar(f)), cvar(t), tau);
                                      return base::nll(base::grouped_probs(logits, map, K), labels);
                                    },
                                    l));
    }
    {
      enc::TextEncoder text(tc, 600 + i);
      base::PromptContext ctx(text, vocab, {0, 1, 2, 3}, 2);
      ctx.params()[ctx.context_id()].var.mutable_value() = random_tensor(rng, 2, 8);
      auto l = leaves_of(ctx.params());
      const ad::Tensor fv = random_tensor(rng, n, 8);
      tally.add("CoOp", ad::grad_check_leaves(
                            [&] {
                              const ad::Var logits = base::similarity_logits(cvar(fv), ctx.encode(text), tau);
                              return base::nll(base::grouped_probs(logits, map, K), labels);
                            },
                            l));
      base::MetaNet meta(8, 2, 700 + i);
      randomize(meta.params(), rng);
      auto lm = leaves_of(meta.params());
      lm.push_back(ctx.params()[ctx.context_id()].var);
      tally.add("CoCoOp", ad::grad_check_leaves(
                              [&] {
                                const ad::Var pf = ctx.encode_shifted(text, meta.shift(cvar(fv)));
                                const ad::Var logits = base::conditioned_logits(cvar(fv), pf, C, tau);
                                return base::nll(base::grouped_probs(logits, map, K), labels);
                              },
                              lm, 1e-4, 1e-3, 6));
    }
  }
  const double secs = seconds_since(t0);
  bool pass = secs < 60.0;
  std::string detail;
  for (const auto& [name, v] : tally.by_target) {
    pass = pass && v.first >= kInstances && v.second <= 1e-3;
    detail += name + " " + std::to_string(v.first) + "x worst " + fmt("%.1e", v.second) + "; ";
  }
  report("gradient suite", pass, detail + fmt("%.1fs", secs));
}

// ------------------------------------------------------------- loss oracles

ad::Tensor unit_rows(std::size_t n, std::size_t h) {
  ad::Tensor t = ad::Tensor::matrix(n, h);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i % h) = 1.0;
  return t;
}

void loss_oracles() {
  const double ita = dpl::loss_ita(cvar(unit_rows(2, 4)), cvar(unit_rows(2, 4)), 1.0).item();
  const double ita_err = std::abs(ita - std::log(1.0 + std::exp(-1.0)));
  std::mt19937_64 rng(3);
  const double single = dpl::loss_ita(cvar(random_tensor(rng, 1, 6)), cvar(random_tensor(rng, 1, 6)), 0.07).item();
  const ad::Tensor anchors = random_tensor(rng, 3, 5);
  const double reg = dpl::loss_reg_ce_terms(cvar(ad::Tensor::row({0.3, 0.7})), std::vector<std::size_t>{1},
                                            cvar(anchors), anchors, 0.1)
                         .reg.item();
  ad::Tensor f = ad::Tensor::matrix(3, 5);
  for (std::size_t i = 0; i < 3; ++i) f.at(i, 0) = 1.0;
  const std::vector<std::size_t> ids{0, 0, 0}, one{0};
  const double e_case = dpl::loss_prot(cvar(f), cvar(f), ids, cvar(unit_rows(1, 5)), 1.0, 0.0).item();
  const double sep = dpl::loss_prot_terms(cvar(unit_rows(1, 4)), cvar(unit_rows(1, 4)), one, cvar(unit_rows(2, 4)), 1.0,
                                          0.1)
                         .separation.item();
  const bool pass = ita_err <= 1e-6 && single == 0.0 && reg == 0.0 && std::abs(e_case + std::exp(1.0)) <= 1e-9 &&
                    std::abs(sep - 0.2) <= 1e-9;
  report("loss oracles", pass,
         fmt("ita identity err %.1e, n=1 ita %g, reg at init %g, prot -e err %.1e", ita_err, single, reg,
             std::abs(e_case + std::exp(1.0))) +
             fmt(", separation %.12f", sep));
}

// ----------------------------------------------------------- metric oracles

double t_density(double x, double v) {
  return std::exp(std::lgamma((v + 1) / 2) - std::lgamma(v / 2)) / std::sqrt(v * std::numbers::pi) *
         std::pow(1 + x * x / v, -(v + 1) / 2);
}

double upper_tail_oracle(double t, double v) {
  const int n = 20000;
  const double a = std::abs(t), h = a / n;
  double s = t_density(0, v) + t_density(a, v);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * t_density(i * h, v);
  return t >= 0 ? 0.5 - s * h / 3 : 0.5 + s * h / 3;
}

void metric_oracles() {
  std::mt19937_64 rng(77);
  int auc_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 49;
    std::vector<double> s(n);
    std::vector<int> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 9) / 9.0;
      pos[i] = static_cast<int>(rng() % 2);
    }
    pos[0] = 1;
    pos[1] = 0;
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (pos[i] && !pos[j]) {
          pairs += 1;
          wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    auc_mismatch += auc_rank(s, pos) != wins / pairs;
  }
  double f1_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 30, K = 3;
    const ad::Tensor scores = random_tensor(rng, n, K, 0.0, 1.0);
    const auto pred = argmax_rows(scores);
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = rng() % K;
    double wf1 = 0;
    for (std::size_t k = 0; k < K; ++k) {
      double tp = 0, fp = 0, fn = 0, sup = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += pred[i] == k && y[i] == k;
        fp += pred[i] == k && y[i] != k;
        fn += pred[i] != k && y[i] == k;
        sup += y[i] == k;
      }
      wf1 += (tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0) * sup / n;
    }
    f1_err = std::max(f1_err, std::abs(compute_metrics(scores, pred, y).weighted_f1 - wf1));
  }
  double p_err = 0;
  for (double v : {5.0, 9.0, 30.0})
    for (double t = -10.0; t <= 10.0; t += 0.1) p_err = std::max(p_err, std::abs(1 - student_t_cdf(t, v) - upper_tail_oracle(t, v)));
  report("metric oracles", auc_mismatch == 0 && f1_err <= 1e-12 && p_err <= 1e-6,
         fmt("AUC mismatches %g/200, weighted-F1 max err %.1e, t-test p max err %.1e", auc_mismatch, f1_err, p_err));
}

// ------------------------------------------------------------ experiments

using Key = std::tuple<int, int, double, std::uint64_t>;

Key key_of(const RunSpec& s) { return {static_cast<int>(s.method), static_cast<int>(s.variant), s.fraction, s.seed}; }

struct Runner {
  const Experiment& ex;
  std::map<Key, SeedResult> cache;

  std::vector<SeedResult> run(const std::vector<RunSpec>& specs) {
    std::vector<RunSpec> missing;
    for (const auto& s : specs)
      if (!cache.count(key_of(s))) missing.push_back(s);
    const auto done = ex.run_all(missing, ex.config().jobs);
    for (std::size_t i = 0; i < missing.size(); ++i) cache[key_of(missing[i])] = done[i];
    std::vector<SeedResult> out;
    for (const auto& s : specs) out.push_back(cache.at(key_of(s)));
    return out;
  }
};

std::vector<double> f1_of(const std::vector<SeedResult>& rs, Method m, Variant v, double fraction) {
  std::vector<double> out;
  for (const auto& r : rs)
    if (r.spec.method == m && r.spec.variant == v && r.spec.fraction == fraction) out.push_back(r.test.weighted_f1);
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

double zero_shot_target_f1(const PretrainedModel& pre, const synth::AdaptationData& data) {
  std::vector<enc::Image> images;
  std::vector<std::size_t> labels;
  for (std::size_t i : data.test) {
    images.push_back(data.samples[i].image);
    labels.push_back(data.samples[i].label);
  }
  const auto pred = synth::zero_shot_predict(pre.text, pre.vision, pre.vocab, data.prototypes, images);
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t p = data.class_map[pred[i]];
    tp += p == 1 && labels[i] == 1;
    fp += p == 1 && labels[i] == 0;
    fn += p == 0 && labels[i] == 1;
  }
  return tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
}

}  // namespace

int run(int argc, char** argv) {
  const std::string config_path = argc > 1 ? argv[1] : "";
  const std::filesystem::path work = argc > 2 ? argv[2] : std::filesystem::temp_directory_path() / "diva_acceptance";
  std::filesystem::create_directories(work);

  gradient_suite();
  loss_oracles();
  metric_oracles();

  ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : load_experiment_config(config_path);
  config.validate();

  // Scenario integrity.
  const auto pipeline_start = Clock::now();
  const synth::Scenario scenario = synth::generate_scenario(config.scenario);
  synth::ScenarioConfig under_cfg = config.scenario;
  under_cfg.kind = synth::ScenarioKind::underrepresented;
  const synth::Scenario under = synth::generate_scenario(under_cfg);
  const PretrainOutcome pre = run_pretraining(config, scenario);
  const double pretrain_secs = seconds_since(pipeline_start);
  const std::size_t new_target = scenario.pretrain.count(config.scenario.target_class);
  const double share = static_cast<double>(under.pretrain.count(under_cfg.target_class)) /
                       static_cast<double>(under.pretrain.pairs.size());
  const double zs = zero_shot_target_f1(pre.model, scenario.adapt);
  const bool new_ok = config.scenario.kind != synth::ScenarioKind::new_class || new_target == 0;
  report("scenario integrity", new_ok && share <= 0.005 && under.pretrain.count(under_cfg.target_class) > 0 && zs <= 0.5,
         fmt("new-scenario target pairs %g, underrepresented share %.4f%%, zero-shot target F1 %.3f", new_target,
             100 * share, zs) +
             fmt(", pretraining %.0fs", pretrain_secs));

  const Experiment ex(config, pre.model, scenario);
  Runner runner{ex, {}};

  // Directional comparison at the configured fraction.
  const auto compare = runner.run(compare_specs(config));
  const double pipeline_secs = seconds_since(pipeline_start);
  write_text_file((work / "compare.tsv").string(), format_report(compare, ex.data().n_classes));
  const double frac = config.train.fraction;
  const auto ours = f1_of(compare, Method::dicop_dpl, Variant::full, frac);
  const auto lp = f1_of(compare, Method::linear_probe, Variant::full, frac);
  std::string detail = fmt("main %.4f, linear_probe %.4f", mean(ours), mean(lp));
  Method best = Method::linear_probe;
  double best_mean = -1;
  for (Method m : config.compare_methods) {
    if (m == Method::dicop_dpl) continue;
    const double v = mean(f1_of(compare, m, Variant::full, frac));
    if (m != Method::linear_probe) detail += std::string(", ") + method_name(m) + fmt(" %.4f", v);
    if (v > best_mean) best_mean = v, best = m;
  }
  const TTestResult tt = paired_ttest(ours, f1_of(compare, best, Variant::full, frac));
  const bool dir_pass = ours.size() >= 10 && mean(ours) - mean(lp) >= 0.03 && tt.p < 0.05 && pipeline_secs < 45 * 60;
  report("directional comparison", dir_pass,
         detail + fmt(" (n=%g); margin over linear_probe %+.4f (need >= 0.03)", ours.size(), mean(ours) - mean(lp)) +
             "; vs best baseline " + method_name(best) + fmt(": t %.3f, p %.4g (need < 0.05); pipeline %.0fs", tt.t, tt.p, pipeline_secs));

  // Ablation.
  const auto abl = runner.run(ablation_specs(config));
  write_text_file((work / "ablation.tsv").string(), format_report(abl, ex.data().n_classes));
  const double full = mean(f1_of(abl, Method::dicop_dpl, Variant::full, frac));
  bool abl_pass = true;
  detail = fmt("full %.4f", full);
  for (Variant v : ablation_variants()) {
    if (v == Variant::full) continue;
    const double m = mean(f1_of(abl, Method::dicop_dpl, v, frac));
    abl_pass = abl_pass && full >= m - 0.01;
    detail += std::string(", ") + variant_name(v) + fmt(" %.4f", m);
  }
  report("ablation", abl_pass, detail);

  // Data efficiency.
  const auto sweep = runner.run(sweep_specs(config));
  write_text_file((work / "sweep.tsv").string(), format_report(sweep, ex.data().n_classes));
  bool sweep_pass = true;
  detail = "main";
  double prev = -1;
  for (double f : config.sweep_fractions) {
    const double m = mean(f1_of(sweep, Method::dicop_dpl, Variant::full, f));
    if (prev >= 0) sweep_pass = sweep_pass && m >= prev - 0.02;
    prev = m;
    detail += fmt(" %.2f:%.4f", f, m);
  }
  detail += "; linear_probe";
  for (double f : config.sweep_fractions) detail += fmt(" %.2f:%.4f", f, mean(f1_of(sweep, Method::linear_probe, Variant::full, f)));
  const double lo = config.sweep_fractions.front(), hi = config.sweep_fractions.back();
  const double adv_lo = mean(f1_of(sweep, Method::dicop_dpl, Variant::full, lo)) -
                        mean(f1_of(sweep, Method::linear_probe, Variant::full, lo));
  const double adv_hi = mean(f1_of(sweep, Method::dicop_dpl, Variant::full, hi)) -
                        mean(f1_of(sweep, Method::linear_probe, Variant::full, hi));
  sweep_pass = sweep_pass && adv_lo >= adv_hi - 0.02;
  report("data efficiency", sweep_pass, detail + fmt("; advantage at %.2f %+.4f vs at %.2f %+.4f", lo, adv_lo, hi, adv_hi));

  // Determinism: fresh scenario, checkpoint-loaded encoders, fresh experiment.
  {
    const std::string ckpt = (work / "pretrained.ckpt").string();
    save_checkpoint(pretrained_checkpoint(pre.model), ckpt);
    const RunSpec spec{Method::dicop_dpl, Variant::full, frac, 7};
    const synth::Scenario s2 = synth::generate_scenario(config.scenario);
    const PretrainedModel p2 = load_pretrained(config, ckpt);
    const Experiment ex2(config, p2, s2);
    SeedResult r1, r2;
    const AdaptedModel m1 = ex.adapt(spec, r1);
    (void)ex2.adapt(spec, r2);
    const std::string a = format_report({r1}, ex.data().n_classes), b = format_report({r2}, ex.data().n_classes);
    const std::string path = (work / "adapted.ckpt").string();
    save_checkpoint(adapted_checkpoint(m1, pre.model), path);
    const std::string first = encode_checkpoint(load_checkpoint(path));
    save_checkpoint(adapted_checkpoint(load_adapted(ex, path), pre.model), path);
    const std::string second = encode_checkpoint(load_checkpoint(path));
    report("determinism", a == b && first == second,
           std::string("report bytes ") + (a == b ? "identical" : "differ") + ", checkpoint save/load/save " +
               (first == second ? "identical" : "differs"));

    // Freeze contracts on the same run.
    const enc::ParamStore text_before = pre.model.text.params();
    const AdaptedModel init = ex.initial_model(spec);
    SeedResult r3;
    const AdaptedModel m3 = ex.adapt(spec, r3);
    bool text_same = true;
    for (std::size_t i = 0; i < text_before.size(); ++i)
      text_same = text_same && pre.model.text.params()[i].var.value() == text_before[i].var.value();
    const bool anchors_same = m3.prototypes.anchors() == init.prototypes.anchors();
    m3.projector.calls().reset();
    m3.prototypes.calls().reset();
    m3.classifier.calls().reset();
    m3.vision.calls().reset();
    pre.model.text.calls().reset();
    (void)ex.evaluate(m3, ex.data().test);
    const bool pure = m3.projector.calls().get() == 0 && m3.prototypes.calls().get() == 0 &&
                      pre.model.text.calls().get() == 0 && m3.vision.calls().get() > 0 &&
                      m3.classifier.calls().get() > 0;
    report("freeze contracts", text_same && anchors_same && pure,
           std::string("text encoder ") + (text_same ? "bit-unchanged" : "CHANGED") + ", anchors " +
               (anchors_same ? "bit-unchanged" : "CHANGED") + ", inference calls: vision " +
               std::to_string(m3.vision.calls().get()) + ", classifier " + std::to_string(m3.classifier.calls().get()) +
               ", projector " + std::to_string(m3.projector.calls().get()) + ", prototypes " +
               std::to_string(m3.prototypes.calls().get()) + ", text " + std::to_string(pre.model.text.calls().get()));
  }

  std::printf("%d criteria failed; reports in %s\n", failures, work.string().c_str());
  return failures == 0 ? 0 : 1;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::printf("FAIL aborted: %s\n", e.what());
    return 1;
  }
}
